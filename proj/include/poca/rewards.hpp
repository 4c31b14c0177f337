#pragma once

// Learned reward models (polarity, content similarity, fluency) and the
// weighted composite reward used for calibration.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "poca/corpus.hpp"
#include "poca/diffcore.hpp"
#include "poca/textproc.hpp"

namespace poca::rewards {

struct ModelArch {
    std::size_t embedding_dim = 32;
    std::size_t hidden_dim = 32;
    /// Longer texts are cut to this many tokens before scoring.
    std::size_t max_tokens = 256;

    void validate() const;
    friend bool operator==(const ModelArch&, const ModelArch&) = default;
};

/// Token ids for scoring: truncated to max_tokens, and a lone UNK for text
/// with no tokens.
std::vector<int> scoring_ids(std::string_view text, const text::Vocab& vocab, std::size_t max_tokens);

/// Shared plumbing: vocabulary, architecture and parameters.
class RewardModelBase {
   public:
    const text::Vocab& vocab() const { return *vocab_; }
    std::shared_ptr<const text::Vocab> vocab_ptr() const { return vocab_; }
    const ModelArch& arch() const { return arch_; }
    diff::ParamStore& params() { return params_; }
    const diff::ParamStore& params() const { return params_; }

    /// Checkpoint at `path`, architecture JSON at `path` + ".json".
    void save(const std::filesystem::path& path) const;

   protected:
    RewardModelBase(std::shared_ptr<const text::Vocab> vocab, ModelArch arch, const char* kind);
    void load_values(const std::filesystem::path& path);
    diff::Var leaf(diff::Tape& tape, const std::string& name, bool trainable) const;
    std::vector<int> ids(std::string_view text) const { return scoring_ids(text, *vocab_, arch_.max_tokens); }

    std::shared_ptr<const text::Vocab> vocab_;
    ModelArch arch_;
    std::string kind_;
    diff::ParamStore params_;
};

/// P(positive) for reviews, P(conservative) for articles: mean of token
/// embeddings, one tanh layer, sigmoid.
class PolarityModel : public RewardModelBase {
   public:
    PolarityModel(std::shared_ptr<const text::Vocab> vocab, ModelArch arch, std::uint64_t seed);
    double score(std::string_view text) const;
    diff::Var logit(diff::Tape& tape, std::span<const int> ids, bool trainable) const;
    static PolarityModel load(const std::filesystem::path& path, std::shared_ptr<const text::Vocab> vocab);
};

/// Similarity in [0, 1]. Both texts go through one mean-embedding encoder;
/// the head sees their elementwise product and absolute difference.
class SimilarityModel : public RewardModelBase {
   public:
    SimilarityModel(std::shared_ptr<const text::Vocab> vocab, ModelArch arch, std::uint64_t seed);
    double score(std::string_view a, std::string_view b) const;
    diff::Var logit(diff::Tape& tape, std::span<const int> a, std::span<const int> b, bool trainable) const;
    static SimilarityModel load(const std::filesystem::path& path, std::shared_ptr<const text::Vocab> vocab);
};

/// P(grammatical | sentence). Word order matters here, so features come from
/// adjacent token pairs (with sentence boundaries) max-pooled over the text.
class FluencyModel : public RewardModelBase {
   public:
    FluencyModel(std::shared_ptr<const text::Vocab> vocab, ModelArch arch, std::uint64_t seed);
    double score(std::string_view sentence) const;
    diff::Var logit(diff::Tape& tape, std::span<const int> ids, bool trainable) const;
    static FluencyModel load(const std::filesystem::path& path, std::shared_ptr<const text::Vocab> vocab);
};

// ---- training --------------------------------------------------------------

struct TrainConfig {
    ModelArch arch;
    std::size_t epochs = 6;
    double lr = 5e-3;
    std::size_t batch_size = 16;
    double weight_decay = 0.0;
    double heldout_fraction = 0.1;

    void validate() const;
};

struct ClassifierReport {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t train_size = 0;
    std::size_t heldout_size = 0;
};

struct RegressorReport {
    double pearson = 0.0;
    double mae = 0.0;
    std::size_t train_size = 0;
    std::size_t heldout_size = 0;
};

template <typename Model, typename Report>
struct Trained {
    Model model;
    Report report;
};

/// Throws DataError unless both labels occur.
Trained<PolarityModel, ClassifierReport> train_polarity_model(std::shared_ptr<const text::Vocab> vocab,
                                                              const std::vector<corpus::LabeledText>& data,
                                                              const TrainConfig& config, std::uint64_t seed);
Trained<FluencyModel, ClassifierReport> train_fluency_model(std::shared_ptr<const text::Vocab> vocab,
                                                            const std::vector<corpus::LabeledText>& data,
                                                            const TrainConfig& config, std::uint64_t seed);
/// Throws DataError when all scores are equal.
Trained<SimilarityModel, RegressorReport> train_similarity_model(std::shared_ptr<const text::Vocab> vocab,
                                                                 const std::vector<corpus::SimilarityPair>& data,
                                                                 const TrainConfig& config, std::uint64_t seed);

double pearson(std::span<const double> x, std::span<const double> y);

// ---- rewards ---------------------------------------------------------------

/// Sentences of a generated text.
corpus::Summary summary_from_text(std::string_view text);

/// Reviews: mean over every input sentence. Articles: mean of per-document
/// scores.
double polarity_of_input(const PolarityModel& model, const corpus::OpinionCluster& cluster);
/// Reviews: mean over summary sentences. Articles: the whole summary as one
/// text. Throws std::invalid_argument for an empty summary.
double polarity_of_summary(const PolarityModel& model, const corpus::Summary& summary, corpus::Mode mode);

double reward_polarity(double summary_polarity, double input_polarity);
double reward_polarity(const PolarityModel& model, const corpus::OpinionCluster& cluster,
                       const corpus::Summary& summary);
double reward_content(const SimilarityModel& model, const corpus::OpinionCluster& cluster,
                      const corpus::Summary& summary);
/// Mean per-sentence fluency.
double reward_language(const FluencyModel& model, const corpus::Summary& summary);

struct RewardWeights {
    double alpha = 1.0;
    double beta = 0.5;
    double gamma = 0.2;

    /// Throws ConfigError for negative or all-zero weights.
    void validate() const;
    friend bool operator==(const RewardWeights&, const RewardWeights&) = default;
};

struct RewardBreakdown {
    double r_polarity = 0.0;
    double r_content = 0.0;
    double r_language = 0.0;
    RewardWeights weights;
    double total = 0.0;
};

RewardBreakdown combine(const RewardWeights& weights, double r_polarity, double r_content, double r_language);

struct RewardModels {
    PolarityModel polarity;
    SimilarityModel similarity;
    FluencyModel fluency;

    /// Files polarity.ckpt, similarity.ckpt and fluency.ckpt (with sidecars).
    void save(const std::filesystem::path& dir) const;
    static RewardModels load(const std::filesystem::path& dir, std::shared_ptr<const text::Vocab> vocab);
};

/// An empty summary earns the floor: r_polarity -1, content and language 0.
RewardBreakdown composite_reward(const RewardWeights& weights, const corpus::OpinionCluster& cluster,
                                 const corpus::Summary& summary, const RewardModels& models);
/// Same, with the cluster's input polarity already computed.
RewardBreakdown composite_reward(const RewardWeights& weights, const corpus::OpinionCluster& cluster,
                                 double input_polarity, const corpus::Summary& summary, const RewardModels& models);

}  // namespace poca::rewards
