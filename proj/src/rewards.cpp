#include "poca/rewards.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>

#include "poca/common.hpp"
#include "poca/log.hpp"

namespace poca::rewards {

using diff::Tape;
using diff::Var;
using nlohmann::json;

namespace {

void init_weight(diff::Parameter& p, std::uint64_t seed, double scale) {
    Rng rng(seed ^ fnv1a64(p.name));
    for (double& v : p.value.values()) v = scale * rng.normal();
}

double inv_sqrt(std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); }

double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

Var mean_embedding(Var table, std::span<const int> ids) {
    std::vector<Var> rows;
    rows.reserve(ids.size());
    for (int id : ids) rows.push_back(diff::embedding(table, id));
    return diff::mean_rows(diff::stack_rows(rows));
}

ModelArch read_sidecar(const std::filesystem::path& path, const char* kind) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    try {
        const json j = json::parse(in);
        if (j.at("kind").get<std::string>() != kind) {
            throw DataError(fmt::format("{}: expected a {} model, found {}", path.string(), kind,
                                        j.at("kind").get<std::string>()));
        }
        ModelArch a;
        a.embedding_dim = j.at("embedding_dim").get<std::size_t>();
        a.hidden_dim = j.at("hidden_dim").get<std::size_t>();
        a.max_tokens = j.at("max_tokens").get<std::size_t>();
        a.validate();
        return a;
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": bad reward model sidecar: " + e.what());
    }
}

std::filesystem::path sidecar(const std::filesystem::path& path) { return path.string() + ".json"; }

}  // namespace

void ModelArch::validate() const {
    if (embedding_dim == 0 || hidden_dim == 0) throw ConfigError("reward model: dims must be positive");
    if (max_tokens == 0) throw ConfigError("reward model: max_tokens must be >= 1");
}

std::vector<int> scoring_ids(std::string_view text, const text::Vocab& vocab, std::size_t max_tokens) {
    std::vector<int> ids = text::tokenize(text, vocab);
    if (ids.size() > max_tokens) ids.resize(max_tokens);
    if (ids.empty()) ids.push_back(text::kUnk);
    return ids;
}

// ---- models ----------------------------------------------------------------

RewardModelBase::RewardModelBase(std::shared_ptr<const text::Vocab> vocab, ModelArch arch, const char* kind)
    : vocab_(std::move(vocab)), arch_(arch), kind_(kind) {
    if (!vocab_) throw std::invalid_argument("reward model: null vocabulary");
    arch_.validate();
}

void RewardModelBase::save(const std::filesystem::path& path) const {
    diff::save_checkpoint(params_, path);
    const json j = {{"kind", kind_},
                    {"embedding_dim", arch_.embedding_dim},
                    {"hidden_dim", arch_.hidden_dim},
                    {"max_tokens", arch_.max_tokens}};
    std::ofstream out(sidecar(path));
    if (!out) throw DataError("cannot write " + sidecar(path).string());
    out << j.dump(2) << '\n';
}

void RewardModelBase::load_values(const std::filesystem::path& path) { diff::load_checkpoint(params_, path); }

Var RewardModelBase::leaf(Tape& tape, const std::string& name, bool trainable) const {
    // Trainable leaves are only requested by the training loops in this
    // file, which own the model being trained.
    if (trainable) return tape.param(const_cast<diff::Parameter&>(params_.get(name)));
    return tape.frozen(params_.get(name));
}

PolarityModel::PolarityModel(std::shared_ptr<const text::Vocab> vocab, ModelArch arch, std::uint64_t seed)
    : RewardModelBase(std::move(vocab), arch, "polarity") {
    const std::size_t V = vocab_->size(), E = arch_.embedding_dim, H = arch_.hidden_dim;
    init_weight(params_.add("embedding", V, E), seed, 0.3);
    init_weight(params_.add("hidden.w", E, H), seed, inv_sqrt(E));
    params_.add("hidden.b", 1, H);
    init_weight(params_.add("out.w", H, 1), seed, inv_sqrt(H));
    params_.add("out.b", 1, 1);
}

Var PolarityModel::logit(Tape& tape, std::span<const int> ids, bool trainable) const {
    const Var pooled = mean_embedding(leaf(tape, "embedding", trainable), ids);
    const Var h = diff::tanh(add(matmul(pooled, leaf(tape, "hidden.w", trainable)), leaf(tape, "hidden.b", trainable)));
    return add(matmul(h, leaf(tape, "out.w", trainable)), leaf(tape, "out.b", trainable));
}

double PolarityModel::score(std::string_view text) const {
    Tape tape;
    return sigmoid(logit(tape, ids(text), false).scalar());
}

PolarityModel PolarityModel::load(const std::filesystem::path& path, std::shared_ptr<const text::Vocab> vocab) {
    PolarityModel m(std::move(vocab), read_sidecar(sidecar(path), "polarity"), 0);
    m.load_values(path);
    return m;
}

SimilarityModel::SimilarityModel(std::shared_ptr<const text::Vocab> vocab, ModelArch arch, std::uint64_t seed)
    : RewardModelBase(std::move(vocab), arch, "similarity") {
    const std::size_t V = vocab_->size(), E = arch_.embedding_dim, H = arch_.hidden_dim;
    init_weight(params_.add("embedding", V, E), seed, 0.3);
    init_weight(params_.add("enc.w", E, H), seed, inv_sqrt(E));
    params_.add("enc.b", 1, H);
    init_weight(params_.add("head.w", 2 * H, H), seed, inv_sqrt(2 * H));
    params_.add("head.b", 1, H);
    init_weight(params_.add("out.w", H, 1), seed, inv_sqrt(H));
    params_.add("out.b", 1, 1);
}

Var SimilarityModel::logit(Tape& tape, std::span<const int> a, std::span<const int> b, bool trainable) const {
    const Var table = leaf(tape, "embedding", trainable);
    const Var enc_w = leaf(tape, "enc.w", trainable), enc_b = leaf(tape, "enc.b", trainable);
    const Var u = diff::tanh(add(matmul(mean_embedding(table, a), enc_w), enc_b));
    const Var v = diff::tanh(add(matmul(mean_embedding(table, b), enc_w), enc_b));
    const Var features = diff::concat({mul(u, v), diff::abs(sub(u, v))});
    const Var h = diff::tanh(add(matmul(features, leaf(tape, "head.w", trainable)), leaf(tape, "head.b", trainable)));
    return add(matmul(h, leaf(tape, "out.w", trainable)), leaf(tape, "out.b", trainable));
}

double SimilarityModel::score(std::string_view a, std::string_view b) const {
    Tape tape;
    return sigmoid(logit(tape, ids(a), ids(b), false).scalar());
}

SimilarityModel SimilarityModel::load(const std::filesystem::path& path, std::shared_ptr<const text::Vocab> vocab) {
    SimilarityModel m(std::move(vocab), read_sidecar(sidecar(path), "similarity"), 0);
    m.load_values(path);
    return m;
}

FluencyModel::FluencyModel(std::shared_ptr<const text::Vocab> vocab, ModelArch arch, std::uint64_t seed)
    : RewardModelBase(std::move(vocab), arch, "fluency") {
    const std::size_t V = vocab_->size(), E = arch_.embedding_dim, H = arch_.hidden_dim;
    init_weight(params_.add("embedding", V, E), seed, 0.3);
    init_weight(params_.add("pair.w", 2 * E, H), seed, inv_sqrt(2 * E));
    params_.add("pair.b", 1, H);
    init_weight(params_.add("out.w", H, 1), seed, inv_sqrt(H));
    params_.add("out.b", 1, 1);
}

Var FluencyModel::logit(Tape& tape, std::span<const int> ids, bool trainable) const {
    const Var table = leaf(tape, "embedding", trainable);
    std::vector<int> padded;
    padded.reserve(ids.size() + 2);
    padded.push_back(text::kBos);
    padded.insert(padded.end(), ids.begin(), ids.end());
    padded.push_back(text::kEos);
    std::vector<Var> emb;
    for (int id : padded) emb.push_back(diff::embedding(table, id));
    std::vector<Var> pairs;
    for (std::size_t i = 0; i + 1 < emb.size(); ++i) pairs.push_back(diff::concat({emb[i], emb[i + 1]}));
    const Var h = diff::tanh(diff::add_row(matmul(diff::stack_rows(pairs), leaf(tape, "pair.w", trainable)),
                                           leaf(tape, "pair.b", trainable)));
    return add(matmul(diff::max_rows(h), leaf(tape, "out.w", trainable)), leaf(tape, "out.b", trainable));
}

double FluencyModel::score(std::string_view sentence) const {
    Tape tape;
    return sigmoid(logit(tape, ids(sentence), false).scalar());
}

FluencyModel FluencyModel::load(const std::filesystem::path& path, std::shared_ptr<const text::Vocab> vocab) {
    FluencyModel m(std::move(vocab), read_sidecar(sidecar(path), "fluency"), 0);
    m.load_values(path);
    return m;
}

// ---- training --------------------------------------------------------------

void TrainConfig::validate() const {
    arch.validate();
    if (epochs == 0) throw ConfigError("reward training: epochs must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("reward training: lr must be positive");
    if (batch_size == 0) throw ConfigError("reward training: batch_size must be >= 1");
    if (weight_decay < 0.0) throw ConfigError("reward training: weight_decay must be >= 0");
    if (heldout_fraction < 0.0 || heldout_fraction >= 1.0) {
        throw ConfigError("reward training: heldout_fraction must be in [0, 1)");
    }
}

namespace {

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> heldout;
};

Split split_indices(std::size_t n, double heldout_fraction, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    auto held = static_cast<std::size_t>(std::ceil(heldout_fraction * static_cast<double>(n)));
    held = std::min(held, n - 1);
    return {{idx.begin() + static_cast<std::ptrdiff_t>(held), idx.end()},
            {idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(held)}};
}

/// Minibatch AdamW on a per-example BCE loss built by `loss_of`.
template <typename LossOf>
void fit(diff::ParamStore& params, std::vector<std::size_t> train, const TrainConfig& cfg, Rng& rng,
         const char* what, LossOf loss_of) {
    params.zero_grad();
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(train);
        double total = 0.0;
        for (std::size_t begin = 0; begin < train.size(); begin += cfg.batch_size) {
            const std::size_t end = std::min(begin + cfg.batch_size, train.size());
            for (std::size_t i = begin; i < end; ++i) {
                Tape tape;
                const Var loss = loss_of(tape, train[i]);
                total += loss.scalar();
                tape.backward(diff::scale(loss, 1.0 / static_cast<double>(end - begin)));
            }
            if (!params.grads_finite()) throw TrainingAbort(fmt::format("{}: non-finite gradient", what));
            diff::adamw_step(params, {.lr = cfg.lr, .weight_decay = cfg.weight_decay});
        }
        log::debug("{} epoch {}: loss {:.4f}", what, epoch, total / static_cast<double>(train.size()));
    }
}

ClassifierReport classification_report(const std::vector<int>& labels, const std::vector<double>& probs) {
    std::size_t tp = 0, fp = 0, fn = 0, correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int pred = probs[i] >= 0.5 ? 1 : 0;
        correct += pred == labels[i] ? 1 : 0;
        tp += pred == 1 && labels[i] == 1 ? 1 : 0;
        fp += pred == 1 && labels[i] == 0 ? 1 : 0;
        fn += pred == 0 && labels[i] == 1 ? 1 : 0;
    }
    ClassifierReport r;
    if (!labels.empty()) r.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
    r.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    r.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
    return r;
}

void require_both_labels(const std::vector<corpus::LabeledText>& data, const char* what) {
    bool pos = false, neg = false;
    for (const auto& d : data) {
        if (d.label != 0 && d.label != 1) throw DataError(fmt::format("{}: label {} is not 0/1", what, d.label));
        pos |= d.label == 1;
        neg |= d.label == 0;
    }
    if (!pos || !neg) throw DataError(fmt::format("{}: training data must contain both classes", what));
}

template <typename Model>
Trained<Model, ClassifierReport> train_classifier(std::shared_ptr<const text::Vocab> vocab,
                                                  const std::vector<corpus::LabeledText>& data,
                                                  const TrainConfig& config, std::uint64_t seed, const char* what) {
    config.validate();
    require_both_labels(data, what);
    Model model(vocab, config.arch, seed);
    std::vector<std::vector<int>> ids;
    ids.reserve(data.size());
    for (const auto& d : data) ids.push_back(scoring_ids(d.text, *vocab, config.arch.max_tokens));

    Rng rng(seed);
    const Split split = split_indices(data.size(), config.heldout_fraction, rng);
    fit(model.params(), split.train, config, rng, what, [&](Tape& tape, std::size_t i) {
        return diff::bce_with_logits(model.logit(tape, ids[i], true), static_cast<double>(data[i].label));
    });

    std::vector<int> labels;
    std::vector<double> probs;
    for (std::size_t i : split.heldout) {
        labels.push_back(data[i].label);
        Tape tape;
        probs.push_back(sigmoid(model.logit(tape, ids[i], false).scalar()));
    }
    ClassifierReport report = classification_report(labels, probs);
    report.train_size = split.train.size();
    report.heldout_size = split.heldout.size();
    log::info("{}: held-out accuracy {:.4f} f1 {:.4f} ({} examples)", what, report.accuracy, report.f1,
              report.heldout_size);
    return {std::move(model), report};
}

}  // namespace

double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
    if (x.size() < 2) return std::numeric_limits<double>::quiet_NaN();
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return sxy / std::sqrt(sxx * syy);
}

Trained<PolarityModel, ClassifierReport> train_polarity_model(std::shared_ptr<const text::Vocab> vocab,
                                                              const std::vector<corpus::LabeledText>& data,
                                                              const TrainConfig& config, std::uint64_t seed) {
    return train_classifier<PolarityModel>(std::move(vocab), data, config, seed, "polarity");
}

Trained<FluencyModel, ClassifierReport> train_fluency_model(std::shared_ptr<const text::Vocab> vocab,
                                                            const std::vector<corpus::LabeledText>& data,
                                                            const TrainConfig& config, std::uint64_t seed) {
    return train_classifier<FluencyModel>(std::move(vocab), data, config, seed, "fluency");
}

Trained<SimilarityModel, RegressorReport> train_similarity_model(std::shared_ptr<const text::Vocab> vocab,
                                                                 const std::vector<corpus::SimilarityPair>& data,
                                                                 const TrainConfig& config, std::uint64_t seed) {
    config.validate();
    if (data.size() < 2) throw DataError("similarity: need at least two pairs");
    bool varied = false;
    for (const auto& p : data) {
        if (p.score < 0.0 || p.score > 1.0) throw DataError(fmt::format("similarity: score {} outside [0, 1]", p.score));
        varied |= p.score != data.front().score;
    }
    if (!varied) throw DataError("similarity: all training scores are equal");

    SimilarityModel model(vocab, config.arch, seed);
    std::vector<std::vector<int>> a, b;
    for (const auto& p : data) {
        a.push_back(scoring_ids(p.a, *vocab, config.arch.max_tokens));
        b.push_back(scoring_ids(p.b, *vocab, config.arch.max_tokens));
    }
    Rng rng(seed);
    const Split split = split_indices(data.size(), config.heldout_fraction, rng);
    fit(model.params(), split.train, config, rng, "similarity", [&](Tape& tape, std::size_t i) {
        return diff::bce_with_logits(model.logit(tape, a[i], b[i], true), data[i].score);
    });

    std::vector<double> truth, pred;
    double abs_err = 0.0;
    for (std::size_t i : split.heldout) {
        Tape tape;
        truth.push_back(data[i].score);
        pred.push_back(sigmoid(model.logit(tape, a[i], b[i], false).scalar()));
        abs_err += std::fabs(pred.back() - truth.back());
    }
    RegressorReport report;
    report.pearson = pearson(truth, pred);
    report.mae = split.heldout.empty() ? 0.0 : abs_err / static_cast<double>(split.heldout.size());
    report.train_size = split.train.size();
    report.heldout_size = split.heldout.size();
    log::info("similarity: held-out pearson {:.4f} mae {:.4f} ({} pairs)", report.pearson, report.mae,
              report.heldout_size);
    return {std::move(model), report};
}

// ---- rewards ---------------------------------------------------------------

corpus::Summary summary_from_text(std::string_view text) { return {text::split_sentences(text)}; }

double polarity_of_input(const PolarityModel& model, const corpus::OpinionCluster& cluster) {
    if (cluster.inputs.empty()) throw std::invalid_argument("polarity_of_input: cluster has no inputs");
    double total = 0.0;
    std::size_t n = 0;
    if (cluster.mode == corpus::Mode::reviews) {
        for (const auto& doc : cluster.inputs) {
            for (const auto& s : doc.sentences) {
                total += model.score(s);
                ++n;
            }
        }
    } else {
        for (const auto& doc_text : cluster.document_texts()) {
            total += model.score(doc_text);
            ++n;
        }
    }
    if (n == 0) throw std::invalid_argument("polarity_of_input: cluster has no sentences");
    return total / static_cast<double>(n);
}

double polarity_of_summary(const PolarityModel& model, const corpus::Summary& summary, corpus::Mode mode) {
    if (summary.sentences.empty()) throw std::invalid_argument("polarity_of_summary: empty summary");
    if (mode == corpus::Mode::articles) return model.score(summary.text());
    double total = 0.0;
    for (const auto& s : summary.sentences) total += model.score(s);
    return total / static_cast<double>(summary.sentences.size());
}

double reward_polarity(double summary_polarity, double input_polarity) {
    return -std::fabs(summary_polarity - input_polarity);
}

double reward_polarity(const PolarityModel& model, const corpus::OpinionCluster& cluster,
                       const corpus::Summary& summary) {
    return reward_polarity(polarity_of_summary(model, summary, cluster.mode), polarity_of_input(model, cluster));
}

double reward_content(const SimilarityModel& model, const corpus::OpinionCluster& cluster,
                      const corpus::Summary& summary) {
    return model.score(summary.text(), cluster.input_text());
}

double reward_language(const FluencyModel& model, const corpus::Summary& summary) {
    if (summary.sentences.empty()) return 0.0;
    double total = 0.0;
    for (const auto& s : summary.sentences) total += model.score(s);
    return total / static_cast<double>(summary.sentences.size());
}

void RewardWeights::validate() const {
    if (!(alpha >= 0.0) || !(beta >= 0.0) || !(gamma >= 0.0)) {
        throw ConfigError("reward weights must be non-negative");
    }
    if (alpha == 0.0 && beta == 0.0 && gamma == 0.0) throw ConfigError("reward weights: at least one must be > 0");
}

RewardBreakdown combine(const RewardWeights& weights, double r_polarity, double r_content, double r_language) {
    weights.validate();
    RewardBreakdown b;
    b.r_polarity = r_polarity;
    b.r_content = r_content;
    b.r_language = r_language;
    b.weights = weights;
    b.total = weights.alpha * r_polarity + weights.beta * r_content + weights.gamma * r_language;
    return b;
}

void RewardModels::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    polarity.save(dir / "polarity.ckpt");
    similarity.save(dir / "similarity.ckpt");
    fluency.save(dir / "fluency.ckpt");
}

RewardModels RewardModels::load(const std::filesystem::path& dir, std::shared_ptr<const text::Vocab> vocab) {
    return {PolarityModel::load(dir / "polarity.ckpt", vocab), SimilarityModel::load(dir / "similarity.ckpt", vocab),
            FluencyModel::load(dir / "fluency.ckpt", vocab)};
}

RewardBreakdown composite_reward(const RewardWeights& weights, const corpus::OpinionCluster& cluster,
                                 const corpus::Summary& summary, const RewardModels& models) {
    return composite_reward(weights, cluster, polarity_of_input(models.polarity, cluster), summary, models);
}

RewardBreakdown composite_reward(const RewardWeights& weights, const corpus::OpinionCluster& cluster,
                                 double input_polarity, const corpus::Summary& summary, const RewardModels& models) {
    if (summary.sentences.empty()) return combine(weights, -1.0, 0.0, 0.0);
    const double out = polarity_of_summary(models.polarity, summary, cluster.mode);
    return combine(weights, reward_polarity(out, input_polarity), reward_content(models.similarity, cluster, summary),
                   reward_language(models.fluency, summary));
}

}  // namespace poca::rewards
