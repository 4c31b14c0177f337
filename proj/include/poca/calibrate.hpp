#pragma once

// Policy-gradient fine-tuning of a summarizer toward a composite reward, plus
// small enumerable toy policies used to check the gradient estimator.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "poca/common.hpp"
#include "poca/corpus.hpp"
#include "poca/diffcore.hpp"
#include "poca/rewards.hpp"
#include "poca/summarizer.hpp"

namespace poca::calib {

enum class Baseline { none, batch_mean, greedy_self_critical };

std::string to_string(Baseline b);
/// Throws ConfigError.
Baseline parse_baseline(const std::string& s);

struct RLConfig {
    double lr = 1e-6;
    std::size_t batch_size = 32;
    double weight_decay = 1e-2;
    std::size_t samples_per_input = 4;
    Baseline baseline = Baseline::greedy_self_critical;
    double temperature = 1.0;
    std::size_t max_steps = 200;
    /// Weight of the supervised NLL mixed into the loss.
    double ce_mix = 0.0;
    /// Global gradient-norm clip; 0 disables.
    double grad_clip = 0.0;
    /// Probe every this many steps (and at step 0 and the last step).
    std::size_t probe_every = 25;
    std::uint64_t seed = 0;

    /// Throws ConfigError.
    void validate() const;
};

struct ProbeResult {
    double rmse = 0.0;
    double mae = 0.0;
    double rouge1 = 0.0;
};

struct RLStepLog {
    std::size_t step = 0;
    double mean_reward = 0.0;
    double mean_polarity = 0.0;
    double mean_content = 0.0;
    double mean_language = 0.0;
    double mean_baseline = 0.0;
    double grad_norm = 0.0;
    std::size_t empty_samples = 0;
    bool skipped = false;
    std::optional<ProbeResult> probe;
};

void write_log_csv(const std::vector<RLStepLog>& log, const std::filesystem::path& path);

/// Scores generated token ids (EOS removed) for a cluster.
using RewardFn = std::function<rewards::RewardBreakdown(const corpus::OpinionCluster&, std::span<const int>)>;

/// Composite reward from trained models. Input polarities are cached by
/// input text.
RewardFn make_reward_fn(const rewards::RewardModels& models, const rewards::RewardWeights& weights,
                        std::shared_ptr<const text::Vocab> vocab);

/// Per-sample baselines for one input's samples. batch_mean uses the mean of
/// the other samples of the same input (0 for a single sample);
/// greedy_self_critical uses `greedy_reward`.
std::vector<double> baselines(std::span<const double> rewards, Baseline mode, double greedy_reward);

/// -(1/n) sum_i advantage_i * log_prob_i over the given sequences.
diff::Var policy_gradient_loss(std::span<const diff::Var> sequence_log_probs, std::span<const double> advantages,
                               double normalizer);

/// One update on a batch of clusters. Throws TrainingAbort on a non-finite
/// gradient; skips the update (logged) when every sample is empty.
RLStepLog reinforce_step(summ::SummarizerModel& model, std::span<const corpus::OpinionCluster> batch,
                         const RewardFn& reward, const RLConfig& config, Rng& rng);

/// Greedy outputs on the probe clusters scored with the polarity model.
ProbeResult probe(const summ::SummarizerModel& model, const std::vector<corpus::OpinionCluster>& clusters,
                  const rewards::PolarityModel& polarity);

struct CalibrationResult {
    summ::SummarizerModel model;
    std::vector<RLStepLog> log;
    std::size_t best_step = 0;
    double best_probe_rmse = 0.0;
};

/// Runs max_steps updates over reshuffled training clusters and returns the
/// probed checkpoint with the lowest polarity RMSE (step 0 included). The
/// log's first entry is step 0 and carries only the initial probe.
CalibrationResult calibrate(const summ::SummarizerModel& base, const std::vector<corpus::OpinionCluster>& train,
                            const std::vector<corpus::OpinionCluster>& probe_clusters,
                            const rewards::PolarityModel& polarity, const RewardFn& reward, const RLConfig& config);

CalibrationResult calibrate(const summ::SummarizerModel& base, const std::vector<corpus::OpinionCluster>& train,
                            const std::vector<corpus::OpinionCluster>& probe_clusters,
                            const rewards::RewardModels& models, const rewards::RewardWeights& weights,
                            const RLConfig& config);

/// Mean of `values` over the first `window` entries and over the last
/// `window` entries.
std::pair<double, double> smoothed_endpoints(std::span<const double> values, std::size_t window);

// ---- toy policies ----------------------------------------------------------

/// Fixed-length sequences over a tiny vocabulary with no encoder: the first
/// token comes from a start logit row, each later one from a row of a
/// transition table indexed by the previous token.
class ToyPolicy {
   public:
    ToyPolicy(std::size_t vocab, std::size_t length, std::uint64_t seed, double scale = 1.0);

    std::size_t vocab() const { return vocab_; }
    std::size_t length() const { return length_; }
    diff::ParamStore& params() { return params_; }
    const diff::ParamStore& params() const { return params_; }

    /// log pi(sequence) on the tape.
    diff::Var log_prob(diff::Tape& tape, std::span<const int> sequence);
    std::vector<int> sample(Rng& rng) const;
    std::vector<int> greedy() const;

    /// Sequences indexed in base `vocab` with the first token most
    /// significant.
    std::size_t index_of(std::span<const int> sequence) const;
    std::vector<int> sequence_at(std::size_t index) const;
    std::size_t outcomes() const;

   private:
    std::vector<double> step_probs(int prev) const;

    std::size_t vocab_;
    std::size_t length_;
    diff::ParamStore params_;
};

/// Gradient vector in ParamStore insertion order, flattened.
std::vector<double> flat_grad(const diff::ParamStore& params);

struct ExactObjective {
    double value = 0.0;
    std::vector<double> gradient;
};

/// J = sum over all outcomes of pi(y) R(y), with its gradient. `rewards` is
/// indexed by ToyPolicy::index_of. Throws std::invalid_argument when there
/// are more than 1e5 outcomes.
ExactObjective expected_reward_exact(ToyPolicy& policy, std::span<const double> rewards);

struct EstimatorStats {
    std::vector<double> mean;
    std::vector<double> standard_error;
    /// Mean over coordinates of the per-group estimate variance.
    double mean_variance = 0.0;
    std::size_t groups = 0;
};

/// Averages the policy-gradient estimate over `samples` draws taken in groups
/// of `group_size` (one group plays the role of one input's samples).
EstimatorStats estimate_toy_gradient(ToyPolicy& policy, std::span<const double> rewards, Baseline mode,
                                     std::size_t samples, std::size_t group_size, std::uint64_t seed);

}  // namespace poca::calib
