#include "poca/calibrate.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "poca/log.hpp"
#include "poca/metrics.hpp"

namespace poca::calib {

using diff::Tape;
using diff::Var;

std::string to_string(Baseline b) {
    switch (b) {
        case Baseline::none: return "none";
        case Baseline::batch_mean: return "batch_mean";
        case Baseline::greedy_self_critical: return "greedy_self_critical";
    }
    return "?";
}

Baseline parse_baseline(const std::string& s) {
    if (s == "none") return Baseline::none;
    if (s == "batch_mean") return Baseline::batch_mean;
    if (s == "greedy_self_critical") return Baseline::greedy_self_critical;
    throw ConfigError("unknown baseline '" + s + "' (none|batch_mean|greedy_self_critical)");
}

void RLConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("rl: lr must be positive");
    if (batch_size == 0) throw ConfigError("rl: batch_size must be >= 1");
    if (weight_decay < 0.0) throw ConfigError("rl: weight_decay must be >= 0");
    if (samples_per_input == 0) throw ConfigError("rl: samples_per_input must be >= 1");
    if (!(temperature > 0.0)) throw ConfigError("rl: temperature must be positive");
    if (ce_mix < 0.0 || ce_mix > 1.0) throw ConfigError("rl: ce_mix must be in [0, 1]");
    if (grad_clip < 0.0) throw ConfigError("rl: grad_clip must be >= 0");
    if (probe_every == 0) throw ConfigError("rl: probe_every must be >= 1");
}

void write_log_csv(const std::vector<RLStepLog>& log, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << "step,mean_reward,r_polarity,r_content,r_language,baseline,grad_norm,empty_samples,skipped,"
           "probe_rmse,probe_mae,probe_rouge1\n";
    for (const auto& e : log) {
        out << fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{},{}", e.step, e.mean_reward, e.mean_polarity,
                           e.mean_content, e.mean_language, e.mean_baseline, e.grad_norm, e.empty_samples,
                           e.skipped ? 1 : 0);
        if (e.probe) {
            out << fmt::format(",{:.6f},{:.6f},{:.6f}\n", e.probe->rmse, e.probe->mae, e.probe->rouge1);
        } else {
            out << ",,,\n";
        }
    }
}

RewardFn make_reward_fn(const rewards::RewardModels& models, const rewards::RewardWeights& weights,
                        std::shared_ptr<const text::Vocab> vocab) {
    weights.validate();
    auto owned = std::make_shared<const rewards::RewardModels>(models);
    auto cache = std::make_shared<std::map<std::string, double>>();
    return [owned, cache, weights, vocab](const corpus::OpinionCluster& cluster, std::span<const int> tokens) {
        const std::string key = corpus::to_string(cluster.mode) + "\n" + cluster.input_text();
        auto it = cache->find(key);
        if (it == cache->end()) it = cache->emplace(key, rewards::polarity_of_input(owned->polarity, cluster)).first;
        const auto summary = rewards::summary_from_text(text::detokenize(tokens, *vocab));
        return rewards::composite_reward(weights, cluster, it->second, summary, *owned);
    };
}

std::vector<double> baselines(std::span<const double> rewards, Baseline mode, double greedy_reward) {
    std::vector<double> out(rewards.size(), 0.0);
    if (mode == Baseline::greedy_self_critical) {
        std::fill(out.begin(), out.end(), greedy_reward);
    } else if (mode == Baseline::batch_mean && rewards.size() > 1) {
        // Written as r_i minus the mean gap to the others so equal rewards give
        // an advantage of exactly zero.
        const double others = static_cast<double>(rewards.size() - 1);
        for (std::size_t i = 0; i < rewards.size(); ++i) {
            double gap = 0.0;
            for (double r : rewards) gap += rewards[i] - r;
            out[i] = rewards[i] - gap / others;
        }
    }
    return out;
}

Var policy_gradient_loss(std::span<const Var> sequence_log_probs, std::span<const double> advantages,
                         double normalizer) {
    if (sequence_log_probs.size() != advantages.size() || sequence_log_probs.empty()) {
        throw std::invalid_argument("policy_gradient_loss: need one advantage per sequence");
    }
    std::vector<Var> terms;
    terms.reserve(advantages.size());
    for (std::size_t i = 0; i < advantages.size(); ++i) {
        terms.push_back(diff::scale(sequence_log_probs[i], -advantages[i] / normalizer));
    }
    return diff::add_all(terms);
}

RLStepLog reinforce_step(summ::SummarizerModel& model, std::span<const corpus::OpinionCluster> batch,
                         const RewardFn& reward, const RLConfig& config, Rng& rng) {
    config.validate();
    if (batch.empty()) throw std::invalid_argument("reinforce_step: empty batch");
    const std::size_t K = config.samples_per_input;
    const double total_samples = static_cast<double>(batch.size() * K);
    auto& params = model.params();
    params.zero_grad();

    RLStepLog log;
    for (const auto& cluster : batch) {
        const auto x = model.input_ids(cluster);
        double greedy_reward = 0.0;
        if (config.baseline == Baseline::greedy_self_critical) {
            greedy_reward = reward(cluster, summ::greedy_decode(model, x)).total;
        }
        Tape tape;
        summ::Graph graph(model, tape);
        const auto enc = graph.encode(x);
        std::vector<Var> log_probs;
        std::vector<double> totals;
        for (std::size_t k = 0; k < K; ++k) {
            const auto s = summ::sample_on_tape(graph, enc, config.temperature, rng);
            const auto tokens = summ::strip_eos(s.tokens);
            if (tokens.empty()) ++log.empty_samples;
            const auto r = reward(cluster, tokens);
            log.mean_reward += r.total;
            log.mean_polarity += r.r_polarity;
            log.mean_content += r.r_content;
            log.mean_language += r.r_language;
            totals.push_back(r.total);
            log_probs.push_back(s.sum_log_prob);
        }
        const auto base = baselines(totals, config.baseline, greedy_reward);
        std::vector<double> adv(K);
        for (std::size_t k = 0; k < K; ++k) {
            adv[k] = totals[k] - base[k];
            log.mean_baseline += base[k];
        }
        Var loss = policy_gradient_loss(log_probs, adv, total_samples);
        if (config.ce_mix > 0.0) {
            const auto y = model.target_ids(cluster.reference);
            const Var nll = summ::nll_loss(graph, x, y);
            loss = diff::add(loss, diff::scale(nll, config.ce_mix / static_cast<double>(batch.size())));
        }
        tape.backward(loss);
    }
    log.mean_reward /= total_samples;
    log.mean_polarity /= total_samples;
    log.mean_content /= total_samples;
    log.mean_language /= total_samples;
    log.mean_baseline /= total_samples;

    if (log.empty_samples == batch.size() * K) {
        log::warn("rl: every sample in the batch was empty; skipping update");
        params.zero_grad();
        log.skipped = true;
        return log;
    }
    if (!params.grads_finite()) throw TrainingAbort("rl: non-finite policy gradient");
    log.grad_norm = params.clip_grad_norm(config.grad_clip);
    diff::adamw_step(params, {.lr = config.lr, .weight_decay = config.weight_decay});
    return log;
}

ProbeResult probe(const summ::SummarizerModel& model, const std::vector<corpus::OpinionCluster>& clusters,
                  const rewards::PolarityModel& polarity) {
    if (clusters.empty()) throw std::invalid_argument("probe: no clusters");
    std::vector<double> residuals;
    double rouge1 = 0.0;
    for (const auto& c : clusters) {
        const std::string text = text::detokenize(summ::greedy_decode(model, model.input_ids(c)), model.vocab());
        const auto summary = rewards::summary_from_text(text);
        const double out = summary.sentences.empty() ? 0.5 : rewards::polarity_of_summary(polarity, summary, c.mode);
        residuals.push_back(out - rewards::polarity_of_input(polarity, c));
        rouge1 += metrics::rouge_n(text, c.reference.text(), 1);
    }
    const auto m = metrics::metrics_from_residuals(residuals);
    return {m.rmse, m.mae, rouge1 / static_cast<double>(clusters.size())};
}

CalibrationResult calibrate(const summ::SummarizerModel& base, const std::vector<corpus::OpinionCluster>& train,
                            const std::vector<corpus::OpinionCluster>& probe_clusters,
                            const rewards::PolarityModel& polarity, const RewardFn& reward, const RLConfig& config) {
    config.validate();
    if (train.empty()) throw DataError("calibrate: empty training split");
    CalibrationResult result{base, {}, 0, 0.0};
    summ::SummarizerModel& model = result.model;
    model.params().reset_optimizer();

    const auto initial = probe(model, probe_clusters, polarity);
    result.best_probe_rmse = initial.rmse;
    RLStepLog first;
    first.skipped = true;
    first.probe = initial;
    result.log.push_back(first);
    diff::ParamStore best = model.params();
    log::info("rl step 0: probe rmse {:.4f} rouge1 {:.4f}", initial.rmse, initial.rouge1);

    Rng rng(config.seed);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    std::size_t cursor = 0;
    std::vector<corpus::OpinionCluster> batch;
    for (std::size_t step = 1; step <= config.max_steps; ++step) {
        batch.clear();
        while (batch.size() < config.batch_size) {
            if (cursor == order.size()) {
                rng.shuffle(order);
                cursor = 0;
            }
            batch.push_back(train[order[cursor++]]);
            if (batch.size() == train.size()) break;
        }
        RLStepLog entry = reinforce_step(model, batch, reward, config, rng);
        entry.step = step;
        if (step % config.probe_every == 0 || step == config.max_steps) {
            entry.probe = probe(model, probe_clusters, polarity);
            log::info("rl step {}: reward {:.4f} probe rmse {:.4f} rouge1 {:.4f}", step, entry.mean_reward,
                      entry.probe->rmse, entry.probe->rouge1);
            if (entry.probe->rmse < result.best_probe_rmse) {
                result.best_probe_rmse = entry.probe->rmse;
                result.best_step = step;
                best = model.params();
            }
        }
        result.log.push_back(entry);
    }
    model.params().copy_values_from(best);
    return result;
}

CalibrationResult calibrate(const summ::SummarizerModel& base, const std::vector<corpus::OpinionCluster>& train,
                            const std::vector<corpus::OpinionCluster>& probe_clusters,
                            const rewards::RewardModels& models, const rewards::RewardWeights& weights,
                            const RLConfig& config) {
    return calibrate(base, train, probe_clusters, models.polarity, make_reward_fn(models, weights, base.vocab_ptr()),
                     config);
}

std::pair<double, double> smoothed_endpoints(std::span<const double> values, std::size_t window) {
    if (values.empty() || window == 0) throw std::invalid_argument("smoothed_endpoints: empty input");
    const std::size_t w = std::min(window, values.size());
    const double head = std::accumulate(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(w), 0.0);
    const double tail = std::accumulate(values.end() - static_cast<std::ptrdiff_t>(w), values.end(), 0.0);
    return {head / static_cast<double>(w), tail / static_cast<double>(w)};
}

// ---- toy policies ----------------------------------------------------------

ToyPolicy::ToyPolicy(std::size_t vocab, std::size_t length, std::uint64_t seed, double scale)
    : vocab_(vocab), length_(length) {
    if (vocab < 2 || length < 1) throw std::invalid_argument("ToyPolicy: need vocab >= 2 and length >= 1");
    params_.add("start", 1, vocab);
    params_.add("transition", vocab, vocab);
    params_.init_normal(seed, scale);
}

Var ToyPolicy::log_prob(Tape& tape, std::span<const int> sequence) {
    if (sequence.size() != length_) throw std::invalid_argument("ToyPolicy: wrong sequence length");
    const Var start = tape.param(params_.get("start"));
    const Var trans = tape.param(params_.get("transition"));
    std::vector<Var> terms;
    for (std::size_t t = 0; t < length_; ++t) {
        const Var row = t == 0 ? start : diff::embedding(trans, sequence[t - 1]);
        terms.push_back(diff::pick(diff::log_softmax(row), static_cast<std::size_t>(sequence[t])));
    }
    return diff::add_all(terms);
}

std::vector<double> ToyPolicy::step_probs(int prev) const {
    const auto& start = params_.get("start").value;
    const auto& trans = params_.get("transition").value;
    std::vector<double> logits(vocab_);
    for (std::size_t j = 0; j < vocab_; ++j) {
        logits[j] = prev < 0 ? start[j] : trans.at(static_cast<std::size_t>(prev), j);
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double& l : logits) z += (l = std::exp(l - mx));
    for (double& l : logits) l /= z;
    return logits;
}

std::vector<int> ToyPolicy::sample(Rng& rng) const {
    std::vector<int> out;
    int prev = -1;
    for (std::size_t t = 0; t < length_; ++t) {
        const auto p = step_probs(prev);
        const double u = rng.uniform();
        double acc = 0.0;
        std::size_t tok = vocab_ - 1;
        for (std::size_t j = 0; j < vocab_; ++j) {
            acc += p[j];
            if (u < acc) {
                tok = j;
                break;
            }
        }
        out.push_back(static_cast<int>(tok));
        prev = static_cast<int>(tok);
    }
    return out;
}

std::vector<int> ToyPolicy::greedy() const {
    std::vector<int> out;
    int prev = -1;
    for (std::size_t t = 0; t < length_; ++t) {
        const auto p = step_probs(prev);
        prev = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
        out.push_back(prev);
    }
    return out;
}

std::size_t ToyPolicy::outcomes() const {
    std::size_t n = 1;
    for (std::size_t t = 0; t < length_; ++t) {
        if (n > 100000 / vocab_ + 1) return 100001;
        n *= vocab_;
    }
    return n;
}

std::size_t ToyPolicy::index_of(std::span<const int> sequence) const {
    std::size_t idx = 0;
    for (int tok : sequence) idx = idx * vocab_ + static_cast<std::size_t>(tok);
    return idx;
}

std::vector<int> ToyPolicy::sequence_at(std::size_t index) const {
    std::vector<int> out(length_);
    for (std::size_t t = length_; t-- > 0;) {
        out[t] = static_cast<int>(index % vocab_);
        index /= vocab_;
    }
    return out;
}

std::vector<double> flat_grad(const diff::ParamStore& params) {
    std::vector<double> out;
    for (const auto* p : params.all()) out.insert(out.end(), p->grad.values().begin(), p->grad.values().end());
    return out;
}

ExactObjective expected_reward_exact(ToyPolicy& policy, std::span<const double> rewards) {
    const std::size_t n = policy.outcomes();
    if (n > 100000) throw std::invalid_argument("expected_reward_exact: more than 1e5 outcomes");
    if (rewards.size() != n) throw std::invalid_argument("expected_reward_exact: one reward per outcome required");
    policy.params().zero_grad();
    Tape tape;
    std::vector<Var> terms;
    for (std::size_t i = 0; i < n; ++i) {
        const auto seq = policy.sequence_at(i);
        terms.push_back(diff::scale(diff::exp(policy.log_prob(tape, seq)), rewards[i]));
    }
    const Var j = diff::add_all(terms);
    tape.backward(j);
    ExactObjective out{j.scalar(), flat_grad(policy.params())};
    policy.params().zero_grad();
    return out;
}

EstimatorStats estimate_toy_gradient(ToyPolicy& policy, std::span<const double> rewards, Baseline mode,
                                     std::size_t samples, std::size_t group_size, std::uint64_t seed) {
    if (group_size == 0 || samples < 2 * group_size) throw std::invalid_argument("estimate_toy_gradient: too few samples");
    const std::size_t groups = samples / group_size;
    const double greedy_reward = rewards[policy.index_of(policy.greedy())];
    const std::size_t dim = policy.params().num_values();
    std::vector<double> sum(dim, 0.0), sq(dim, 0.0);
    Rng rng(seed);
    policy.params().zero_grad();
    for (std::size_t g = 0; g < groups; ++g) {
        Tape tape;
        std::vector<Var> lps;
        std::vector<double> rs;
        for (std::size_t k = 0; k < group_size; ++k) {
            const auto seq = policy.sample(rng);
            rs.push_back(rewards[policy.index_of(seq)]);
            lps.push_back(policy.log_prob(tape, seq));
        }
        const auto base = baselines(rs, mode, greedy_reward);
        std::vector<double> adv(group_size);
        for (std::size_t k = 0; k < group_size; ++k) adv[k] = rs[k] - base[k];
        tape.backward(policy_gradient_loss(lps, adv, static_cast<double>(group_size)));
        const auto grad = flat_grad(policy.params());
        for (std::size_t i = 0; i < dim; ++i) {
            const double est = -grad[i];  // the loss is the negated estimate
            sum[i] += est;
            sq[i] += est * est;
        }
        policy.params().zero_grad();
    }
    EstimatorStats st;
    st.groups = groups;
    const double n = static_cast<double>(groups);
    for (std::size_t i = 0; i < dim; ++i) {
        const double mean = sum[i] / n;
        const double var = std::max(0.0, (sq[i] - n * mean * mean) / (n - 1.0));
        st.mean.push_back(mean);
        st.standard_error.push_back(std::sqrt(var / n));
        st.mean_variance += var / static_cast<double>(dim);
    }
    return st;
}

}  // namespace poca::calib
