#include "poca/summarizer.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>

#include "poca/log.hpp"

namespace poca::summ {

using diff::Tape;
using diff::Tensor;
using diff::Var;
using nlohmann::json;

// ---- architecture ----------------------------------------------------------

void ArchConfig::validate() const {
    if (embedding_dim == 0 || hidden_dim == 0 || attention_dim == 0) {
        throw ConfigError("arch: embedding, hidden and attention dims must be positive");
    }
    if (max_input_length == 0) throw ConfigError("arch: max_input_length must be >= 1");
    if (max_summary_length == 0) throw ConfigError("arch: max_summary_length must be >= 1");
}

void save_arch(const ArchConfig& arch, const std::filesystem::path& path) {
    const json j = {{"embedding_dim", arch.embedding_dim},
                    {"hidden_dim", arch.hidden_dim},
                    {"attention_dim", arch.attention_dim},
                    {"max_input_length", arch.max_input_length},
                    {"max_summary_length", arch.max_summary_length}};
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

ArchConfig load_arch(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    try {
        const json j = json::parse(in);
        ArchConfig a;
        a.embedding_dim = j.at("embedding_dim").get<std::size_t>();
        a.hidden_dim = j.at("hidden_dim").get<std::size_t>();
        a.attention_dim = j.at("attention_dim").get<std::size_t>();
        a.max_input_length = j.at("max_input_length").get<std::size_t>();
        a.max_summary_length = j.at("max_summary_length").get<std::size_t>();
        a.validate();
        return a;
    } catch (const json::exception& e) {
        throw DataError(path.string() + ": bad architecture file: " + e.what());
    }
}

// ---- model -----------------------------------------------------------------

namespace {

void init_param(diff::Parameter& p, std::uint64_t seed, double scale) {
    Rng rng(seed ^ fnv1a64(p.name));
    for (double& v : p.value.values()) v = scale * rng.normal();
}

}  // namespace

SummarizerModel::SummarizerModel(std::shared_ptr<const text::Vocab> vocab, ArchConfig arch, std::uint64_t init_seed)
    : vocab_(std::move(vocab)), arch_(arch) {
    if (!vocab_) throw std::invalid_argument("SummarizerModel: null vocabulary");
    arch_.validate();
    const std::size_t V = vocab_->size(), E = arch_.embedding_dim, H = arch_.hidden_dim,
                      A = arch_.attention_dim;
    auto weight = [&](const std::string& name, std::size_t rows, std::size_t cols) {
        init_param(params_.add(name, rows, cols), init_seed, 1.0 / std::sqrt(static_cast<double>(rows)));
    };
    auto bias = [&](const std::string& name, std::size_t cols) { params_.add(name, 1, cols); };

    init_param(params_.add("embedding", V, E), init_seed, 0.3);
    weight("enc.w", E, 3 * H);
    weight("enc.u_gates", H, 2 * H);
    weight("enc.u_cand", H, H);
    bias("enc.b", 3 * H);
    weight("bridge.w", H, H);
    bias("bridge.b", H);
    weight("att.keys", H, A);
    weight("att.query", H, A);
    weight("att.score", A, 1);
    weight("dec.w", E + H, 3 * H);
    weight("dec.u_gates", H, 2 * H);
    weight("dec.u_cand", H, H);
    bias("dec.b", 3 * H);
    weight("out.w", 2 * H, V);
    bias("out.b", V);
}

SummarizerModel::SummarizerModel(const SummarizerModel& other)
    : vocab_(other.vocab_), arch_(other.arch_), params_(other.params_), truncations_(other.truncations_.load()) {}

SummarizerModel& SummarizerModel::operator=(const SummarizerModel& other) {
    if (this != &other) {
        vocab_ = other.vocab_;
        arch_ = other.arch_;
        params_ = other.params_;
        truncations_.store(other.truncations_.load());
    }
    return *this;
}

std::vector<int> SummarizerModel::input_ids(const corpus::OpinionCluster& cluster) const {
    std::vector<int> ids;
    bool first = true;
    for (const auto& doc_text : cluster.document_texts()) {
        if (!first) ids.push_back(text::kSep);
        first = false;
        const auto t = text::tokenize(doc_text, *vocab_);
        ids.insert(ids.end(), t.begin(), t.end());
    }
    if (ids.size() > arch_.max_input_length) {
        ids.resize(arch_.max_input_length);
        note_truncation();
    }
    return ids;
}

std::vector<int> SummarizerModel::target_ids(const corpus::Summary& summary) const {
    std::vector<int> ids = text::tokenize(summary.text(), *vocab_);
    ids.push_back(text::kEos);
    if (ids.size() > arch_.max_summary_length) {
        throw DataError(fmt::format("target of {} tokens exceeds max summary length {}", ids.size(),
                                    arch_.max_summary_length));
    }
    return ids;
}

void SummarizerModel::save(const std::filesystem::path& path) const {
    diff::save_checkpoint(params_, path);
    save_arch(arch_, path.string() + ".json");
}

SummarizerModel SummarizerModel::load(const std::filesystem::path& path, std::shared_ptr<const text::Vocab> vocab) {
    SummarizerModel model(std::move(vocab), load_arch(path.string() + ".json"), 0);
    diff::load_checkpoint(model.params_, path);
    return model;
}

// ---- graph -----------------------------------------------------------------

template <typename Store>
void Graph::bind(Store& store, bool trainable) {
    auto leaf = [&](const char* name) {
        if (trainable) return tape_->param(const_cast<diff::Parameter&>(store.get(name)));
        return tape_->frozen(store.get(name));
    };
    embedding_ = leaf("embedding");
    enc_w_ = leaf("enc.w");
    enc_u_gates_ = leaf("enc.u_gates");
    enc_u_cand_ = leaf("enc.u_cand");
    enc_b_ = leaf("enc.b");
    bridge_w_ = leaf("bridge.w");
    bridge_b_ = leaf("bridge.b");
    att_keys_ = leaf("att.keys");
    att_query_ = leaf("att.query");
    att_score_ = leaf("att.score");
    dec_w_ = leaf("dec.w");
    dec_u_gates_ = leaf("dec.u_gates");
    dec_u_cand_ = leaf("dec.u_cand");
    dec_b_ = leaf("dec.b");
    out_w_ = leaf("out.w");
    out_b_ = leaf("out.b");
}

Graph::Graph(SummarizerModel& model, Tape& tape) : model_(&model), tape_(&tape) { bind(model.params(), true); }

Graph::Graph(const SummarizerModel& model, Tape& tape) : model_(&model), tape_(&tape) {
    bind(model.params(), false);
}

Var Graph::gru(Var x, Var h, Var w, Var u_gates, Var u_cand, Var b) {
    const std::size_t H = model_->arch().hidden_dim;
    const Var gx = add(matmul(x, w), b);
    const Var gh = matmul(h, u_gates);
    const Var z = sigmoid(add(diff::slice_cols(gx, 0, H), diff::slice_cols(gh, 0, H)));
    const Var r = sigmoid(add(diff::slice_cols(gx, H, H), diff::slice_cols(gh, H, H)));
    const Var n = diff::tanh(add(diff::slice_cols(gx, 2 * H, H), matmul(mul(r, h), u_cand)));
    // (1 - z) * n + z * h
    return add(n, mul(z, sub(h, n)));
}

EncoderStates Graph::encode(std::span<const int> input_ids) {
    if (input_ids.empty()) throw std::invalid_argument("encode: empty input");
    if (input_ids.size() > model_->arch().max_input_length) {
        input_ids = input_ids.first(model_->arch().max_input_length);
        model_->note_truncation();
    }
    Var h = tape_->constant(Tensor(1, model_->arch().hidden_dim));
    std::vector<Var> states;
    states.reserve(input_ids.size());
    for (const int id : input_ids) {
        h = gru(diff::embedding(embedding_, id), h, enc_w_, enc_u_gates_, enc_u_cand_, enc_b_);
        states.push_back(h);
    }
    EncoderStates enc;
    enc.states = diff::stack_rows(states);
    enc.keys = matmul(enc.states, att_keys_);
    enc.last = h;
    enc.length = states.size();
    return enc;
}

Var Graph::initial_state(const EncoderStates& enc) {
    return diff::tanh(add(matmul(enc.last, bridge_w_), bridge_b_));
}

Var Graph::step(const EncoderStates& enc, Var& hidden, int prev_token) {
    const Var query = matmul(hidden, att_query_);
    const Var scores = matmul(diff::tanh(diff::add_row(enc.keys, query)), att_score_);  // L x 1
    const Var weights = diff::softmax(diff::reshape(scores, 1, enc.length));
    const Var context = matmul(weights, enc.states);
    const Var x = diff::concat({diff::embedding(embedding_, prev_token), context});
    hidden = gru(x, hidden, dec_w_, dec_u_gates_, dec_u_cand_, dec_b_);
    return add(matmul(diff::concat({hidden, context}), out_w_), out_b_);
}

// ---- likelihood and decoding -----------------------------------------------

Var nll_loss(Graph& graph, std::span<const int> input_ids, std::span<const int> target_ids) {
    if (target_ids.empty()) throw std::invalid_argument("nll_loss: empty target");
    if (target_ids.size() > graph.model().arch().max_summary_length) {
        throw std::invalid_argument("nll_loss: target longer than max summary length");
    }
    const EncoderStates enc = graph.encode(input_ids);
    Var hidden = graph.initial_state(enc);
    std::vector<Var> terms;
    terms.reserve(target_ids.size());
    int prev = text::kBos;
    for (const int y : target_ids) {
        terms.push_back(diff::cross_entropy(graph.step(enc, hidden, prev), y));
        prev = y;
    }
    return diff::scale(diff::add_all(terms), 1.0 / static_cast<double>(terms.size()));
}

double nll_value(const SummarizerModel& model, std::span<const int> input_ids, std::span<const int> target_ids) {
    Tape tape;
    Graph graph(model, tape);
    return nll_loss(graph, input_ids, target_ids).scalar();
}

namespace {

std::size_t argmax_lowest(std::span<const double> row) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j) {
        if (row[j] > row[best]) best = j;
    }
    return best;
}

std::vector<double> tempered_log_probs(std::span<const double> logits, double temperature) {
    std::vector<double> out(logits.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < logits.size(); ++j) {
        out[j] = logits[j] / temperature;
        mx = std::max(mx, out[j]);
    }
    double z = 0.0;
    for (double v : out) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    for (double& v : out) v -= lse;
    return out;
}

std::size_t draw(std::span<const double> log_probs, Rng& rng) {
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t j = 0; j < log_probs.size(); ++j) {
        const double p = std::exp(log_probs[j]);
        if (p > 0.0) last_positive = j;
        acc += p;
        if (u < acc) return j;
    }
    return last_positive;  // rounding left u above the cumulative total
}

void check_temperature(double temperature) {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw std::invalid_argument("temperature must be positive and finite");
    }
}

}  // namespace

std::vector<int> greedy_decode(const SummarizerModel& model, std::span<const int> input_ids) {
    Tape tape;
    Graph graph(model, tape);
    const EncoderStates enc = graph.encode(input_ids);
    Var hidden = graph.initial_state(enc);
    std::vector<int> out;
    int prev = text::kBos;
    for (std::size_t t = 0; t < model.arch().max_summary_length; ++t) {
        const int tok = static_cast<int>(argmax_lowest(graph.step(enc, hidden, prev).value().values()));
        if (tok == text::kEos) break;
        out.push_back(tok);
        prev = tok;
    }
    return out;
}

SampleResult sample(const SummarizerModel& model, std::span<const int> input_ids, double temperature, Rng& rng) {
    check_temperature(temperature);
    Tape tape;
    Graph graph(model, tape);
    const EncoderStates enc = graph.encode(input_ids);
    Var hidden = graph.initial_state(enc);
    SampleResult r;
    int prev = text::kBos;
    for (std::size_t t = 0; t < model.arch().max_summary_length; ++t) {
        const auto lp = tempered_log_probs(graph.step(enc, hidden, prev).value().values(), temperature);
        const auto tok = draw(lp, rng);
        r.tokens.push_back(static_cast<int>(tok));
        r.step_log_probs.push_back(lp[tok]);
        r.sum_log_prob += lp[tok];
        if (static_cast<int>(tok) == text::kEos) break;
        prev = static_cast<int>(tok);
    }
    return r;
}

TapeSample sample_on_tape(Graph& graph, const EncoderStates& enc, double temperature, Rng& rng) {
    check_temperature(temperature);
    Var hidden = graph.initial_state(enc);
    TapeSample r;
    int prev = text::kBos;
    for (std::size_t t = 0; t < graph.model().arch().max_summary_length; ++t) {
        Var logits = graph.step(enc, hidden, prev);
        if (temperature != 1.0) logits = diff::scale(logits, 1.0 / temperature);
        const Var lp = diff::log_softmax(logits);
        const auto tok = draw(lp.value().values(), rng);
        r.tokens.push_back(static_cast<int>(tok));
        r.step_log_probs.push_back(diff::pick(lp, tok));
        if (static_cast<int>(tok) == text::kEos) break;
        prev = static_cast<int>(tok);
    }
    r.sum_log_prob = diff::add_all(r.step_log_probs);
    return r;
}

std::vector<double> next_token_log_probs(const SummarizerModel& model, std::span<const int> input_ids,
                                         std::span<const int> prefix, double temperature) {
    check_temperature(temperature);
    Tape tape;
    Graph graph(model, tape);
    const EncoderStates enc = graph.encode(input_ids);
    Var hidden = graph.initial_state(enc);
    int prev = text::kBos;
    for (const int tok : prefix) {
        graph.step(enc, hidden, prev);
        prev = tok;
    }
    return tempered_log_probs(graph.step(enc, hidden, prev).value().values(), temperature);
}

std::vector<int> strip_eos(std::vector<int> tokens) {
    if (!tokens.empty() && tokens.back() == text::kEos) tokens.pop_back();
    return tokens;
}

// ---- supervised training ---------------------------------------------------

void SupervisedConfig::validate() const {
    if (epochs == 0) throw ConfigError("supervised: epochs must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("supervised: lr must be positive");
    if (batch_size == 0) throw ConfigError("supervised: batch_size must be >= 1");
    if (warmup_fraction < 0.0 || warmup_fraction >= 1.0) throw ConfigError("supervised: warmup_fraction in [0, 1)");
    if (weight_decay < 0.0) throw ConfigError("supervised: weight_decay must be >= 0");
    if (grad_clip < 0.0) throw ConfigError("supervised: grad_clip must be >= 0");
}

double scheduled_lr(std::size_t step, std::size_t total, std::size_t warmup, double base) {
    if (step < warmup) return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
    if (step >= total) return 0.0;
    return base * static_cast<double>(total - step) / static_cast<double>(total - warmup);
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "epoch,train_loss,dev_loss,lr\n";
    for (const auto& e : epochs) out << fmt::format("{},{:.6f},{:.6f},{:.6g}\n", e.epoch, e.train_loss, e.dev_loss, e.lr);
}

double mean_nll(const SummarizerModel& model, const std::vector<corpus::OpinionCluster>& clusters) {
    if (clusters.empty()) return std::numeric_limits<double>::quiet_NaN();
    double total = 0.0;
    for (const auto& c : clusters) total += nll_value(model, model.input_ids(c), model.target_ids(c.reference));
    return total / static_cast<double>(clusters.size());
}

TrainLog train_supervised(SummarizerModel& model, const std::vector<corpus::OpinionCluster>& train,
                          const std::vector<corpus::OpinionCluster>& dev, const SupervisedConfig& config) {
    config.validate();
    if (train.empty()) throw DataError("train_supervised: empty training split");

    struct Example {
        std::vector<int> x, y;
    };
    std::vector<Example> examples;
    examples.reserve(train.size());
    for (const auto& c : train) examples.push_back({model.input_ids(c), model.target_ids(c.reference)});
    const auto& dev_set = dev.empty() ? train : dev;

    const std::size_t batches = (examples.size() + config.batch_size - 1) / config.batch_size;
    const std::size_t total = batches * config.epochs;
    const auto warmup = static_cast<std::size_t>(std::ceil(config.warmup_fraction * static_cast<double>(total)));

    TrainLog log;
    const double dev0 = mean_nll(model, dev_set);
    if (!std::isfinite(dev0)) throw TrainingAbort("supervised: initial dev loss is not finite");
    log.epochs.push_back({0, mean_nll(model, train), dev0, 0.0});
    log.best_epoch = 0;
    log.best_dev_loss = dev0;
    diff::ParamStore best = model.params();

    Rng rng(config.seed);
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t step = 0;
    model.params().zero_grad();
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        double lr = 0.0;
        for (std::size_t b = 0; b < batches; ++b, ++step) {
            const std::size_t begin = b * config.batch_size;
            const std::size_t end = std::min(begin + config.batch_size, examples.size());
            const double inv = 1.0 / static_cast<double>(end - begin);
            for (std::size_t i = begin; i < end; ++i) {
                const Example& ex = examples[order[i]];
                Tape tape;
                Graph graph(model, tape);
                const Var loss = nll_loss(graph, ex.x, ex.y);
                if (!std::isfinite(loss.scalar())) {
                    throw TrainingAbort(fmt::format("supervised: non-finite loss at epoch {} step {}", epoch, step));
                }
                loss_sum += loss.scalar();
                tape.backward(diff::scale(loss, inv));
            }
            if (!model.params().grads_finite()) {
                throw TrainingAbort(fmt::format("supervised: non-finite gradient at epoch {} step {}", epoch, step));
            }
            if (config.grad_clip > 0.0) model.params().clip_grad_norm(config.grad_clip);
            lr = scheduled_lr(step, total, warmup, config.lr);
            diff::adamw_step(model.params(), {.lr = lr, .weight_decay = config.weight_decay});
        }
        const double train_loss = loss_sum / static_cast<double>(examples.size());
        const double dev_loss = mean_nll(model, dev_set);
        if (!std::isfinite(dev_loss)) {
            throw TrainingAbort(fmt::format("supervised: dev loss diverged at epoch {}", epoch));
        }
        log.epochs.push_back({epoch, train_loss, dev_loss, lr});
        log::info("supervised epoch {}/{}: train {:.4f} dev {:.4f} lr {:.3g}", epoch, config.epochs, train_loss,
                  dev_loss, lr);
        if (dev_loss < log.best_dev_loss) {
            log.best_dev_loss = dev_loss;
            log.best_epoch = epoch;
            best = model.params();
        }
    }
    model.params().copy_values_from(best);
    return log;
}

}  // namespace poca::summ
