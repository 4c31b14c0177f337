#include "poca/cli.hpp"

#include <fmt/format.h>

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <type_traits>

#include "poca/log.hpp"
#include "poca/textproc.hpp"

namespace poca::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- config ----------------------------------------------------------------

fs::path RunConfig::corpus_path() const { return corpus_dir.empty() ? out_dir / "corpus" : corpus_dir; }
fs::path RunConfig::checkpoint_path() const { return checkpoint_dir.empty() ? out_dir / "checkpoints" : checkpoint_dir; }
std::uint64_t RunConfig::rewards_seed() const { return seeds.rewards.value_or(seed + 1); }
std::uint64_t RunConfig::init_seed() const { return seeds.init.value_or(seed + 4); }
std::uint64_t RunConfig::supervised_seed() const { return seeds.supervised.value_or(seed + 5); }
std::uint64_t RunConfig::rl_seed() const { return seeds.rl.value_or(seed + 6); }

void RunConfig::validate() const {
    if (out_dir.empty()) throw ConfigError("out_dir must be set");
    if (vocab_min_freq == 0) throw ConfigError("vocab_min_freq must be >= 1");
    corpus.validate();
    reward_training.validate();
    arch.validate();
    supervised.validate();
    rl.validate();
    weights.validate();
    if (ablation.empty()) throw ConfigError("ablation: at least one configuration is required");
    std::set<std::string> names;
    for (const auto& a : ablation) {
        if (a.name.empty() || a.name == "base" || a.name.find_first_of(",/\\\"\n") != std::string::npos) {
            throw ConfigError("ablation: invalid configuration name '" + a.name + "'");
        }
        if (!names.insert(a.name).second) throw ConfigError("ablation: duplicate name '" + a.name + "'");
        a.weights.validate();
    }
}

namespace {

/// Reads known keys from one JSON object and rejects the rest.
class Section {
   public:
    Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j.is_object()) throw ConfigError(where_ + ": expected an object");
    }

    template <typename T>
    void read(const std::string& key, T& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        out = convert<T>(*it, where_ + "." + key);
    }

    template <typename T>
    void read(const std::string& key, std::optional<T>& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end() || it->is_null()) return;
        out = convert<T>(*it, where_ + "." + key);
    }

    const json* child(const std::string& key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void finish() const {
        for (const auto& [k, v] : j_.items()) {
            if (!seen_.count(k)) throw ConfigError(fmt::format("{}: unknown key '{}'", where_, k));
        }
    }

   private:
    template <typename T>
    static T convert(const json& v, const std::string& where) {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigError(where + ": expected a boolean");
            return v.get<bool>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number_integer()) throw ConfigError(where + ": expected an integer");
            if (std::is_unsigned_v<T> && !v.is_number_unsigned() && v.get<std::int64_t>() < 0) {
                throw ConfigError(where + ": expected a non-negative integer");
            }
            return v.get<T>();
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigError(where + ": expected a number");
            return v.get<T>();
        } else if constexpr (std::is_same_v<T, fs::path>) {
            if (!v.is_string()) throw ConfigError(where + ": expected a path string");
            return fs::path(v.get<std::string>());
        } else {
            if (!v.is_string()) throw ConfigError(where + ": expected a string");
            return v.get<std::string>();
        }
    }

    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

rewards::RewardWeights weights_from(const json& j, const std::string& where) {
    rewards::RewardWeights w;
    Section s(j, where);
    s.read("alpha", w.alpha);
    s.read("beta", w.beta);
    s.read("gamma", w.gamma);
    s.finish();
    return w;
}

json weights_json(const rewards::RewardWeights& w) { return {{"alpha", w.alpha}, {"beta", w.beta}, {"gamma", w.gamma}}; }

}  // namespace

RunConfig config_from_json(const json& j) {
    RunConfig c;
    Section top(j, "config");
    top.read("seed", c.seed);
    top.read("out_dir", c.out_dir);
    top.read("corpus_dir", c.corpus_dir);
    top.read("checkpoint_dir", c.checkpoint_dir);
    top.read("vocab_min_freq", c.vocab_min_freq);

    if (const json* cj = top.child("corpus")) {
        Section s(*cj, "corpus");
        std::string mode = corpus::to_string(c.corpus.mode);
        s.read("mode", mode);
        c.corpus.mode = corpus::parse_mode(mode);
        s.read("train_clusters", c.corpus.train_clusters);
        s.read("dev_clusters", c.corpus.dev_clusters);
        s.read("test_clusters", c.corpus.test_clusters);
        s.read("documents_per_cluster", c.corpus.documents_per_cluster);
        s.read("sentences_per_document", c.corpus.sentences_per_document);
        s.read("aspects_per_cluster", c.corpus.aspects_per_cluster);
        s.read("reference_sentences", c.corpus.reference_sentences);
        s.read("max_summary_tokens", c.corpus.max_summary_tokens);
        s.read("polarity_examples", c.corpus.polarity_examples);
        s.read("similarity_examples", c.corpus.similarity_examples);
        s.read("acceptability_examples", c.corpus.acceptability_examples);
        if (const json* mj = s.child("mixture")) {
            Section m(*mj, "corpus.mixture");
            std::string kind = c.corpus.mixture.kind == corpus::MixtureSpec::Kind::fixed ? "fixed" : "uniform";
            m.read("kind", kind);
            if (kind == "fixed") {
                c.corpus.mixture.kind = corpus::MixtureSpec::Kind::fixed;
            } else if (kind == "uniform") {
                c.corpus.mixture.kind = corpus::MixtureSpec::Kind::uniform;
            } else {
                throw ConfigError("corpus.mixture.kind: expected fixed|uniform, got '" + kind + "'");
            }
            m.read("low", c.corpus.mixture.low);
            m.read("high", c.corpus.mixture.high);
            m.finish();
        }
        s.finish();
    }
    if (const json* rj = top.child("reward_training")) {
        Section s(*rj, "reward_training");
        s.read("embedding_dim", c.reward_training.arch.embedding_dim);
        s.read("hidden_dim", c.reward_training.arch.hidden_dim);
        s.read("max_tokens", c.reward_training.arch.max_tokens);
        s.read("epochs", c.reward_training.epochs);
        s.read("lr", c.reward_training.lr);
        s.read("batch_size", c.reward_training.batch_size);
        s.read("weight_decay", c.reward_training.weight_decay);
        s.read("heldout_fraction", c.reward_training.heldout_fraction);
        s.finish();
    }
    if (const json* aj = top.child("arch")) {
        Section s(*aj, "arch");
        s.read("embedding_dim", c.arch.embedding_dim);
        s.read("hidden_dim", c.arch.hidden_dim);
        s.read("attention_dim", c.arch.attention_dim);
        s.read("max_input_length", c.arch.max_input_length);
        s.read("max_summary_length", c.arch.max_summary_length);
        s.finish();
    }
    if (const json* sj = top.child("supervised")) {
        Section s(*sj, "supervised");
        s.read("epochs", c.supervised.epochs);
        s.read("lr", c.supervised.lr);
        s.read("batch_size", c.supervised.batch_size);
        s.read("warmup_fraction", c.supervised.warmup_fraction);
        s.read("weight_decay", c.supervised.weight_decay);
        s.read("grad_clip", c.supervised.grad_clip);
        s.finish();
    }
    if (const json* lj = top.child("rl")) {
        Section s(*lj, "rl");
        s.read("lr", c.rl.lr);
        s.read("batch_size", c.rl.batch_size);
        s.read("weight_decay", c.rl.weight_decay);
        s.read("samples_per_input", c.rl.samples_per_input);
        std::string baseline = calib::to_string(c.rl.baseline);
        s.read("baseline", baseline);
        c.rl.baseline = calib::parse_baseline(baseline);
        s.read("temperature", c.rl.temperature);
        s.read("max_steps", c.rl.max_steps);
        s.read("ce_mix", c.rl.ce_mix);
        s.read("grad_clip", c.rl.grad_clip);
        s.read("probe_every", c.rl.probe_every);
        s.finish();
    }
    if (const json* wj = top.child("weights")) c.weights = weights_from(*wj, "weights");
    if (const json* abj = top.child("ablation")) {
        if (!abj->is_array()) throw ConfigError("ablation: expected an array");
        c.ablation.clear();
        for (std::size_t i = 0; i < abj->size(); ++i) {
            const std::string where = fmt::format("ablation[{}]", i);
            Section s((*abj)[i], where);
            eval::AblationConfig a;
            s.read("name", a.name);
            const json* w = s.child("weights");
            if (w == nullptr) throw ConfigError(where + ": missing weights");
            a.weights = weights_from(*w, where + ".weights");
            s.finish();
            c.ablation.push_back(a);
        }
    }
    if (const json* sj = top.child("seeds")) {
        Section s(*sj, "seeds");
        s.read("rewards", c.seeds.rewards);
        s.read("init", c.seeds.init);
        s.read("supervised", c.seeds.supervised);
        s.read("rl", c.seeds.rl);
        s.finish();
    }
    top.finish();
    return c;
}

RunConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(fmt::format("config {}: {}", path.string(), e.what()));
    }
    return config_from_json(j);
}

json config_to_json(const RunConfig& c) {
    const auto& cc = c.corpus;
    json ablation = json::array();
    for (const auto& a : c.ablation) ablation.push_back({{"name", a.name}, {"weights", weights_json(a.weights)}});
    return {
        {"seed", c.seed},
        {"out_dir", c.out_dir.generic_string()},
        {"corpus_dir", c.corpus_path().generic_string()},
        {"checkpoint_dir", c.checkpoint_path().generic_string()},
        {"vocab_min_freq", c.vocab_min_freq},
        {"corpus",
         {{"mode", corpus::to_string(cc.mode)},
          {"train_clusters", cc.train_clusters},
          {"dev_clusters", cc.dev_clusters},
          {"test_clusters", cc.test_clusters},
          {"documents_per_cluster", cc.documents()},
          {"sentences_per_document", cc.sentences_per_document},
          {"aspects_per_cluster", cc.aspects_per_cluster},
          {"reference_sentences", cc.reference_sentences},
          {"max_summary_tokens", cc.max_summary_tokens},
          {"polarity_examples", cc.polarity_examples},
          {"similarity_examples", cc.similarity_examples},
          {"acceptability_examples", cc.acceptability_examples},
          {"mixture",
           {{"kind", cc.mixture.kind == corpus::MixtureSpec::Kind::fixed ? "fixed" : "uniform"},
            {"low", cc.mixture.low},
            {"high", cc.mixture.high}}}}},
        {"reward_training",
         {{"embedding_dim", c.reward_training.arch.embedding_dim},
          {"hidden_dim", c.reward_training.arch.hidden_dim},
          {"max_tokens", c.reward_training.arch.max_tokens},
          {"epochs", c.reward_training.epochs},
          {"lr", c.reward_training.lr},
          {"batch_size", c.reward_training.batch_size},
          {"weight_decay", c.reward_training.weight_decay},
          {"heldout_fraction", c.reward_training.heldout_fraction}}},
        {"arch",
         {{"embedding_dim", c.arch.embedding_dim},
          {"hidden_dim", c.arch.hidden_dim},
          {"attention_dim", c.arch.attention_dim},
          {"max_input_length", c.arch.max_input_length},
          {"max_summary_length", c.arch.max_summary_length}}},
        {"supervised",
         {{"epochs", c.supervised.epochs},
          {"lr", c.supervised.lr},
          {"batch_size", c.supervised.batch_size},
          {"warmup_fraction", c.supervised.warmup_fraction},
          {"weight_decay", c.supervised.weight_decay},
          {"grad_clip", c.supervised.grad_clip}}},
        {"rl",
         {{"lr", c.rl.lr},
          {"batch_size", c.rl.batch_size},
          {"weight_decay", c.rl.weight_decay},
          {"samples_per_input", c.rl.samples_per_input},
          {"baseline", calib::to_string(c.rl.baseline)},
          {"temperature", c.rl.temperature},
          {"max_steps", c.rl.max_steps},
          {"ce_mix", c.rl.ce_mix},
          {"grad_clip", c.rl.grad_clip},
          {"probe_every", c.rl.probe_every}}},
        {"weights", weights_json(c.weights)},
        {"ablation", ablation},
        {"seeds",
         {{"rewards", c.rewards_seed()},
          {"init", c.init_seed()},
          {"supervised", c.supervised_seed()},
          {"rl", c.rl_seed()}}},
    };
}

std::string config_hash(const RunConfig& config) {
    return fmt::format("{:016x}", fnv1a64(config_to_json(config).dump()));
}

rewards::RewardWeights parse_weights(const std::string& s) {
    std::vector<double> v;
    std::size_t start = 0;
    while (start <= s.size()) {
        const auto comma = s.find(',', start);
        const std::string part = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        std::size_t used = 0;
        double x = 0.0;
        try {
            x = std::stod(part, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != part.size()) throw ConfigError("--weights: expected three numbers a,b,c, got '" + s + "'");
        v.push_back(x);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (v.size() != 3) throw ConfigError("--weights: expected three numbers a,b,c, got '" + s + "'");
    rewards::RewardWeights w{v[0], v[1], v[2]};
    w.validate();
    return w;
}

// ---- subcommands -----------------------------------------------------------

namespace {

struct Flags {
    std::string config;
    std::uint64_t seed = 0;
    bool has_seed = false;
    std::string out;
    std::string checkpoint;
    std::string weights;
    std::string mode;
};

/// Exclusive marker file in the output dir for the life of a subcommand.
class DirLock {
   public:
    explicit DirLock(const fs::path& dir) : path_(dir / ".poca.lock") {
        fs::create_directories(dir);
        std::FILE* f = std::fopen(path_.c_str(), "wx");
        if (f == nullptr) {
            throw ConfigError(fmt::format("output dir {} is locked by another run (delete {} if stale)", dir.string(),
                                          path_.string()));
        }
        std::fclose(f);
    }
    ~DirLock() {
        std::error_code ec;
        fs::remove(path_, ec);
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

   private:
    fs::path path_;
};

void require_file(const fs::path& p, const std::string& producer) {
    if (!fs::exists(p)) throw DataError(fmt::format("missing input {} (run {} first)", p.string(), producer));
}

struct Data {
    corpus::CorpusBundle bundle;
    std::shared_ptr<const text::Vocab> vocab;
};

const char* kCorpusFiles[] = {"train.jsonl",    "dev.jsonl",        "test.jsonl",
                              "polarity.jsonl", "similarity.jsonl", "acceptability.jsonl"};

void require_corpus(const RunConfig& c) {
    for (const char* f : kCorpusFiles) require_file(c.corpus_path() / f, "gen-data");
    require_file(c.corpus_path() / "vocab.json", "gen-data");
}

Data load_data(const RunConfig& c) {
    Data d;
    d.bundle = corpus::load_bundle(c.corpus_path());
    d.vocab = std::make_shared<const text::Vocab>(text::Vocab::load(c.corpus_path() / "vocab.json"));
    return d;
}

fs::path rewards_dir(const RunConfig& c) { return c.checkpoint_path() / "rewards"; }
fs::path base_checkpoint(const RunConfig& c) { return c.checkpoint_path() / "base.ckpt"; }

void require_rewards(const RunConfig& c) {
    for (const char* m : {"polarity", "similarity", "fluency"}) {
        require_file(rewards_dir(c) / (std::string(m) + ".ckpt"), "train-rewards");
    }
}

fs::path model_checkpoint(const RunConfig& c, const Flags& f) {
    return f.checkpoint.empty() ? base_checkpoint(c) : fs::path(f.checkpoint);
}

void require_model(const fs::path& p) { require_file(p, "train-base or calibrate"); }

std::string model_name(const fs::path& checkpoint) {
    std::string name = checkpoint.stem().string();
    for (char& ch : name) {
        if (ch == ',' || ch == '"' || ch == '\n') ch = '_';
    }
    return name;
}

void write_text(const fs::path& path, const std::string& body) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << body;
}

/// Subcommand outputs, recorded in the manifest.
using Files = std::vector<fs::path>;

Files cmd_gen_data(const RunConfig& c) {
    const auto bundle = corpus::generate_corpus(c.corpus, c.seed);
    corpus::save_bundle(bundle, c.corpus_path());
    const auto vocab = text::Vocab::build(bundle.all_texts(), c.vocab_min_freq);
    vocab.save(c.corpus_path() / "vocab.json");
    log::info("gen-data: {}/{}/{} clusters, vocabulary {}", bundle.train.size(), bundle.dev.size(),
              bundle.test.size(), vocab.size());
    Files files;
    for (const char* f : kCorpusFiles) files.push_back(c.corpus_path() / f);
    files.push_back(c.corpus_path() / "vocab.json");
    return files;
}

Files cmd_train_rewards(const RunConfig& c) {
    require_corpus(c);
    const auto d = load_data(c);
    const std::uint64_t s = c.rewards_seed();
    auto pol = rewards::train_polarity_model(d.vocab, d.bundle.polarity_sentences, c.reward_training, s);
    auto sim = rewards::train_similarity_model(d.vocab, d.bundle.similarity_pairs, c.reward_training, s + 1);
    auto flu = rewards::train_fluency_model(d.vocab, d.bundle.acceptability_pairs, c.reward_training, s + 2);
    const rewards::RewardModels models{std::move(pol.model), std::move(sim.model), std::move(flu.model)};
    models.save(rewards_dir(c));

    std::string csv = "model,metric,value\n";
    auto cls = [&csv](const char* name, const rewards::ClassifierReport& r) {
        csv += fmt::format("{0},accuracy,{1:.6f}\n{0},precision,{2:.6f}\n{0},recall,{3:.6f}\n{0},f1,{4:.6f}\n", name,
                           r.accuracy, r.precision, r.recall, r.f1);
    };
    cls("polarity", pol.report);
    cls("fluency", flu.report);
    csv += fmt::format("similarity,pearson,{:.6f}\nsimilarity,mae,{:.6f}\n", sim.report.pearson, sim.report.mae);
    write_text(c.out_dir / "reward_quality.csv", csv);
    log::info("train-rewards: polarity f1 {:.4f}, fluency accuracy {:.4f}, similarity r {:.4f}", pol.report.f1,
              flu.report.accuracy, sim.report.pearson);

    Files files;
    for (const char* m : {"polarity", "similarity", "fluency"}) {
        files.push_back(rewards_dir(c) / (std::string(m) + ".ckpt"));
        files.push_back(rewards_dir(c) / (std::string(m) + ".ckpt.json"));
    }
    files.push_back(c.out_dir / "reward_quality.csv");
    return files;
}

Files cmd_train_base(const RunConfig& c) {
    require_corpus(c);
    const auto d = load_data(c);
    summ::SummarizerModel model(d.vocab, c.arch, c.init_seed());
    auto sc = c.supervised;
    sc.seed = c.supervised_seed();
    const auto log = summ::train_supervised(model, d.bundle.train, d.bundle.dev, sc);
    fs::create_directories(c.checkpoint_path());
    model.save(base_checkpoint(c));
    log.write_csv(c.out_dir / "base_train_log.csv");
    log::info("train-base: best epoch {} dev loss {:.4f}, {} truncated inputs", log.best_epoch, log.best_dev_loss,
              model.truncations());
    return {base_checkpoint(c), fs::path(base_checkpoint(c).string() + ".json"), c.out_dir / "base_train_log.csv"};
}

calib::RLConfig rl_config(const RunConfig& c) {
    auto rl = c.rl;
    rl.seed = c.rl_seed();
    return rl;
}

Files cmd_calibrate(const RunConfig& c, const Flags& f) {
    require_corpus(c);
    require_rewards(c);
    const auto start = model_checkpoint(c, f);
    require_model(start);
    const auto d = load_data(c);
    const auto models = rewards::RewardModels::load(rewards_dir(c), d.vocab);
    const auto base = summ::SummarizerModel::load(start, d.vocab);
    const auto res = calib::calibrate(base, d.bundle.train, d.bundle.dev, models, c.weights, rl_config(c));
    const auto out = c.checkpoint_path() / "calibrated.ckpt";
    res.model.save(out);
    calib::write_log_csv(res.log, c.out_dir / "calibrate_log.csv");
    log::info("calibrate: best probe step {} rmse {:.4f}", res.best_step, res.best_probe_rmse);
    return {out, fs::path(out.string() + ".json"), c.out_dir / "calibrate_log.csv"};
}

struct Loaded {
    Data data;
    std::optional<rewards::RewardModels> models;
    std::optional<summ::SummarizerModel> model;
    std::string name;
};

Loaded load_for_eval(const RunConfig& c, const Flags& f) {
    require_corpus(c);
    require_rewards(c);
    const auto ckpt = model_checkpoint(c, f);
    require_model(ckpt);
    Loaded l;
    l.data = load_data(c);
    l.models.emplace(rewards::RewardModels::load(rewards_dir(c), l.data.vocab));
    l.model.emplace(summ::SummarizerModel::load(ckpt, l.data.vocab));
    l.name = model_name(ckpt);
    return l;
}

void write_summaries(const fs::path& path, const std::vector<corpus::OpinionCluster>& clusters,
                     const std::vector<std::string>& summaries) {
    std::string body;
    for (std::size_t i = 0; i < clusters.size(); ++i) {
        body += json{{"id", clusters[i].id}, {"summary", summaries[i]}}.dump() + "\n";
    }
    write_text(path, body);
}

Files cmd_evaluate(const RunConfig& c, const Flags& f) {
    const auto l = load_for_eval(c, f);
    const auto& test = l.data.bundle.test;
    const auto summaries = eval::generate_summaries(*l.model, test);
    const auto report = eval::evaluate_summaries(l.name, l.models->polarity, test, summaries, c.corpus.mode);
    eval::upsert_report(c.out_dir / "report.csv", report);
    const auto sp = c.out_dir / "summaries" / (l.name + ".jsonl");
    write_summaries(sp, test, summaries);
    log::info("evaluate {}: rmse {:.4f} mae {:.4f} rouge1 {:.4f}", l.name, report.rmse, report.mae, report.rouge1);
    return {c.out_dir / "report.csv", sp};
}

Files cmd_scatter(const RunConfig& c, const Flags& f) {
    const auto l = load_for_eval(c, f);
    const auto& test = l.data.bundle.test;
    const auto summaries = eval::generate_summaries(*l.model, test);
    const auto s = eval::bias_points(l.models->polarity, test, summaries, c.corpus.mode, l.name);
    const auto dir = c.out_dir / "scatter" / l.name;
    fs::create_directories(dir);
    eval::write_scatter(s, dir / "scatter.svg", dir / "scatter_points.csv");
    double in = 0.0, out = 0.0;
    for (const auto& p : s.points) {
        in += p.input_polarity;
        out += p.output_polarity;
    }
    const double n = static_cast<double>(s.points.size());
    log::info("scatter {}: mean input polarity {:.4f}, mean output polarity {:.4f}", l.name, in / n, out / n);
    return {dir / "scatter.svg", dir / "scatter_points.csv"};
}

Files cmd_ablate(const RunConfig& c, const Flags& f) {
    require_corpus(c);
    require_rewards(c);
    const auto start = model_checkpoint(c, f);
    require_model(start);
    const auto d = load_data(c);
    const auto models = rewards::RewardModels::load(rewards_dir(c), d.vocab);
    const auto base = summ::SummarizerModel::load(start, d.vocab);
    const auto table = eval::ablation_run(base, d.bundle.train, d.bundle.dev, d.bundle.test, models, c.ablation,
                                          rl_config(c), c.corpus.mode);
    Files files{c.out_dir / "ablation.csv"};
    eval::write_ablation_csv(table, files[0]);
    for (const auto& run : table.runs) {
        const auto log_path = c.out_dir / "ablation" / (run.config.name + "_log.csv");
        fs::create_directories(log_path.parent_path());
        calib::write_log_csv(run.result.log, log_path);
        const auto ckpt = c.checkpoint_path() / "ablation" / (run.config.name + ".ckpt");
        fs::create_directories(ckpt.parent_path());
        run.result.model.save(ckpt);
        files.insert(files.end(), {log_path, ckpt, fs::path(ckpt.string() + ".json")});
        log::info("ablate {}: rmse {:.4f} rouge1 {:.4f}", run.config.name, run.report.rmse, run.report.rouge1);
    }
    return files;
}

Files cmd_score(const RunConfig& c, const Flags& f) {
    const auto l = load_for_eval(c, f);
    const auto& test = l.data.bundle.test;
    const auto summaries = eval::generate_summaries(*l.model, test);
    const auto s = eval::bias_points(l.models->polarity, test, summaries, c.corpus.mode, l.name);
    std::string csv = "cluster_id,input_polarity,output_polarity,r_polarity,r_content,r_language,reward,rouge1\n";
    for (std::size_t i = 0; i < test.size(); ++i) {
        corpus::OpinionCluster cluster = test[i];
        cluster.mode = c.corpus.mode;
        const auto r = rewards::composite_reward(c.weights, cluster, s.points[i].input_polarity,
                                                 rewards::summary_from_text(summaries[i]), *l.models);
        csv += fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}\n", cluster.id,
                           s.points[i].input_polarity, s.points[i].output_polarity, r.r_polarity, r.r_content,
                           r.r_language, r.total, metrics::rouge_n(summaries[i], cluster.reference.text(), 1));
    }
    const auto path = c.out_dir / "scores" / (l.name + ".csv");
    write_text(path, csv);
    return {path};
}

std::string relative_name(const fs::path& p, const fs::path& root) {
    const auto rel = p.lexically_normal().lexically_relative(root.lexically_normal());
    if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
    return p.generic_string();
}

void update_manifest(const RunConfig& c, const std::string& command, const Files& files) {
    const auto path = c.out_dir / "manifest.json";
    json m = json::object();
    if (fs::exists(path)) {
        std::ifstream in(path);
        m = json::parse(in, nullptr, false);
        if (m.is_discarded() || !m.is_object()) m = json::object();
    }
    std::vector<std::string> names;
    for (const auto& p : files) names.push_back(relative_name(p, c.out_dir));
    std::sort(names.begin(), names.end());
    m["runs"][command] = {{"config_hash", config_hash(c)}, {"seed", c.seed}, {"files", names}};
    write_text(path, m.dump(2) + "\n");
}

void apply_flags(RunConfig& c, const Flags& f) {
    if (f.has_seed) c.seed = f.seed;
    if (!f.out.empty()) c.out_dir = f.out;
    if (!f.weights.empty()) c.weights = parse_weights(f.weights);
    if (!f.mode.empty()) c.corpus.mode = corpus::parse_mode(f.mode);
}

std::string one_line(std::string s) {
    for (char& ch : s) {
        if (ch == '\n' || ch == '\r') ch = ' ';
    }
    return s;
}

int fail(const char* kind, int code, const std::string& reason) {
    fmt::print(stderr, "poca: error={} reason={}\n", kind, one_line(reason));
    return code;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"Polarity-calibrated opinion summarization pipeline", "poca"};
    Flags flags;
    app.add_option("--config", flags.config, "JSON run configuration");
    auto* seed_opt = app.add_option("--seed", flags.seed, "Top-level seed (corpus; unset stage seeds derive from it)");
    app.add_option("--out", flags.out, "Output directory");
    app.add_option("--checkpoint", flags.checkpoint, "Model checkpoint to read (default: <checkpoints>/base.ckpt)");
    app.add_option("--weights", flags.weights, "Reward weights alpha,beta,gamma");
    app.add_option("--mode", flags.mode, "reviews|articles");
    app.require_subcommand(1);

    using Handler = std::function<Files(const RunConfig&, const Flags&)>;
    const std::vector<std::pair<std::string, Handler>> commands = {
        {"gen-data", [](const RunConfig& c, const Flags&) { return cmd_gen_data(c); }},
        {"train-rewards", [](const RunConfig& c, const Flags&) { return cmd_train_rewards(c); }},
        {"train-base", [](const RunConfig& c, const Flags&) { return cmd_train_base(c); }},
        {"calibrate", cmd_calibrate},
        {"evaluate", cmd_evaluate},
        {"ablate", cmd_ablate},
        {"scatter", cmd_scatter},
        {"score", cmd_score},
    };
    const std::map<std::string, std::string> help = {
        {"gen-data", "Generate the synthetic corpus and vocabulary"},
        {"train-rewards", "Train the polarity, similarity and fluency reward models"},
        {"train-base", "Supervised training of the base summarizer"},
        {"calibrate", "Policy-gradient calibration toward the composite reward"},
        {"evaluate", "Add a report row for a checkpoint on the test split"},
        {"ablate", "Calibrate once per reward configuration and tabulate"},
        {"scatter", "Input/output polarity scatter for a checkpoint"},
        {"score", "Per-cluster rewards for a checkpoint's summaries"},
    };
    for (const auto& [name, _] : commands) app.add_subcommand(name, help.at(name))->fallthrough();

    std::vector<std::string> reversed(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("config", 1, e.what());
    }
    flags.has_seed = seed_opt->count() > 0;

    const std::string command = app.get_subcommands().front()->get_name();
    try {
        RunConfig config = flags.config.empty() ? RunConfig{} : load_config(flags.config);
        apply_flags(config, flags);
        config.validate();
        DirLock lock(config.out_dir);
        write_text(config.out_dir / "run_config.json", config_to_json(config).dump(2) + "\n");
        Files files;
        for (const auto& [name, handler] : commands) {
            if (name == command) files = handler(config, flags);
        }
        files.push_back(config.out_dir / "run_config.json");
        update_manifest(config, command, files);
        return 0;
    } catch (const TrainingAbort& e) {
        return fail("training", 3, e.what());
    } catch (const ConfigError& e) {
        return fail("config", 1, e.what());
    } catch (const DataError& e) {
        return fail("data", 2, e.what());
    } catch (const std::invalid_argument& e) {
        return fail("config", 1, e.what());
    } catch (const std::exception& e) {
        return fail("data", 2, e.what());
    }
}

}  // namespace poca::cli
