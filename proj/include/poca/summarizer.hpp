#pragma once

// Attentional GRU encoder-decoder over token ids: teacher-forced likelihood,
// supervised training, greedy decoding and tempered sampling.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "poca/common.hpp"
#include "poca/corpus.hpp"
#include "poca/diffcore.hpp"
#include "poca/textproc.hpp"

namespace poca::summ {

struct ArchConfig {
    std::size_t embedding_dim = 64;
    std::size_t hidden_dim = 128;
    std::size_t attention_dim = 64;
    std::size_t max_input_length = 256;
    /// Generated tokens per summary, EOS included.
    std::size_t max_summary_length = 40;

    /// Throws ConfigError.
    void validate() const;
    friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

class SummarizerModel {
   public:
    SummarizerModel(std::shared_ptr<const text::Vocab> vocab, ArchConfig arch, std::uint64_t init_seed);
    SummarizerModel(const SummarizerModel& other);
    SummarizerModel& operator=(const SummarizerModel& other);

    const text::Vocab& vocab() const { return *vocab_; }
    std::shared_ptr<const text::Vocab> vocab_ptr() const { return vocab_; }
    const ArchConfig& arch() const { return arch_; }
    diff::ParamStore& params() { return params_; }
    const diff::ParamStore& params() const { return params_; }
    std::size_t vocab_size() const { return vocab_->size(); }

    /// Documents in cluster order joined by the separator id, cut to the
    /// maximum input length (counted as a truncation).
    std::vector<int> input_ids(const corpus::OpinionCluster& cluster) const;
    /// Reference tokens followed by EOS. Throws DataError when longer than
    /// the maximum summary length.
    std::vector<int> target_ids(const corpus::Summary& summary) const;

    std::size_t truncations() const { return truncations_.load(); }
    void note_truncation() const { truncations_.fetch_add(1); }

    /// Checkpoint at `path`, architecture JSON at `path` + ".json".
    void save(const std::filesystem::path& path) const;
    static SummarizerModel load(const std::filesystem::path& path, std::shared_ptr<const text::Vocab> vocab);

   private:
    std::shared_ptr<const text::Vocab> vocab_;
    ArchConfig arch_;
    diff::ParamStore params_;
    mutable std::atomic<std::size_t> truncations_{0};
};

void save_arch(const ArchConfig& arch, const std::filesystem::path& path);
ArchConfig load_arch(const std::filesystem::path& path);

struct EncoderStates {
    diff::Var states;  // L x H
    diff::Var keys;    // L x A, attention projections of the states
    diff::Var last;    // 1 x H
    std::size_t length = 0;
};

/// Binds model parameters to a tape once and builds the network step by step.
/// The mutable-model constructor records gradients into the model's store;
/// the const one reads values only.
class Graph {
   public:
    Graph(SummarizerModel& model, diff::Tape& tape);
    Graph(const SummarizerModel& model, diff::Tape& tape);

    diff::Tape& tape() { return *tape_; }
    const SummarizerModel& model() const { return *model_; }

    EncoderStates encode(std::span<const int> input_ids);
    diff::Var initial_state(const EncoderStates& enc);
    /// Next-token logits (1 x V) after feeding `prev_token`; advances `hidden`.
    diff::Var step(const EncoderStates& enc, diff::Var& hidden, int prev_token);

   private:
    template <typename Store>
    void bind(Store& store, bool trainable);
    diff::Var gru(diff::Var x, diff::Var h, diff::Var w, diff::Var u_gates, diff::Var u_cand, diff::Var b);

    const SummarizerModel* model_;
    diff::Tape* tape_;
    diff::Var embedding_, enc_w_, enc_u_gates_, enc_u_cand_, enc_b_;
    diff::Var bridge_w_, bridge_b_;
    diff::Var att_keys_, att_query_, att_score_;
    diff::Var dec_w_, dec_u_gates_, dec_u_cand_, dec_b_;
    diff::Var out_w_, out_b_;
};

/// Mean over target positions of -log p(y_t | y_<t, x), BOS-prefixed.
/// `target_ids` must end in EOS.
diff::Var nll_loss(Graph& graph, std::span<const int> input_ids, std::span<const int> target_ids);
double nll_value(const SummarizerModel& model, std::span<const int> input_ids, std::span<const int> target_ids);

/// Argmax each step, lowest id on ties; stops at EOS (not returned) or the
/// maximum summary length.
std::vector<int> greedy_decode(const SummarizerModel& model, std::span<const int> input_ids);

struct SampleResult {
    /// Includes the terminating EOS when one was drawn.
    std::vector<int> tokens;
    std::vector<double> step_log_probs;
    double sum_log_prob = 0.0;
};

SampleResult sample(const SummarizerModel& model, std::span<const int> input_ids, double temperature, Rng& rng);

/// A sample whose log-probabilities stay on the tape for policy gradients.
struct TapeSample {
    std::vector<int> tokens;
    std::vector<diff::Var> step_log_probs;
    diff::Var sum_log_prob;
};

TapeSample sample_on_tape(Graph& graph, const EncoderStates& enc, double temperature, Rng& rng);

/// Log-distribution of the next token after `prefix` at a temperature.
std::vector<double> next_token_log_probs(const SummarizerModel& model, std::span<const int> input_ids,
                                         std::span<const int> prefix, double temperature);

/// Drops a trailing EOS, if any.
std::vector<int> strip_eos(std::vector<int> tokens);

// ---- supervised training ---------------------------------------------------

struct SupervisedConfig {
    std::size_t epochs = 10;
    double lr = 1e-5;
    std::size_t batch_size = 32;
    double warmup_fraction = 0.05;
    double weight_decay = 1e-2;
    /// Global gradient-norm clip; 0 disables.
    double grad_clip = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Linear warmup over `warmup` steps, then linear decay to zero at `total`.
double scheduled_lr(std::size_t step, std::size_t total, std::size_t warmup, double base);

struct EpochLog {
    std::size_t epoch = 0;  // 0 = before training
    double train_loss = 0.0;
    double dev_loss = 0.0;
    double lr = 0.0;
};

struct TrainLog {
    std::vector<EpochLog> epochs;
    std::size_t best_epoch = 0;
    double best_dev_loss = 0.0;

    void write_csv(const std::filesystem::path& path) const;
};

/// Mean per-example NLL over clusters.
double mean_nll(const SummarizerModel& model, const std::vector<corpus::OpinionCluster>& clusters);

/// Leaves the model at its best-dev-loss epoch. Throws TrainingAbort when a
/// loss or gradient goes non-finite.
TrainLog train_supervised(SummarizerModel& model, const std::vector<corpus::OpinionCluster>& train,
                          const std::vector<corpus::OpinionCluster>& dev, const SupervisedConfig& config);

}  // namespace poca::summ
