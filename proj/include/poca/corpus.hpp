#pragma once

// Synthetic opinion corpora with controllable polarity ground truth, plus the
// JSON-Lines interchange format for clusters and reward-model training sets.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace poca::corpus {

enum class Mode { reviews, articles };
enum class Polarity { positive, negative };

std::string to_string(Mode mode);
Mode parse_mode(const std::string& s);

struct Document {
    std::vector<std::string> sentences;
    std::optional<Polarity> source_label;

    friend bool operator==(const Document&, const Document&) = default;
};

struct Summary {
    std::vector<std::string> sentences;

    std::string text() const;
    friend bool operator==(const Summary&, const Summary&) = default;
};

struct OpinionCluster {
    std::string id;
    Mode mode = Mode::reviews;
    std::vector<Document> inputs;
    Summary reference;
    std::optional<double> mixture;

    /// Throws ValidationError naming the cluster id.
    void validate() const;
    /// Documents in order, each rendered as its sentences joined by spaces.
    std::vector<std::string> document_texts() const;
    std::string input_text() const;

    friend bool operator==(const OpinionCluster&, const OpinionCluster&) = default;
};

struct LabeledText {
    std::string text;
    int label = 0;  // 1 = positive / conservative / fluent

    friend bool operator==(const LabeledText&, const LabeledText&) = default;
};

struct SimilarityPair {
    std::string a;
    std::string b;
    double score = 0.0;

    friend bool operator==(const SimilarityPair&, const SimilarityPair&) = default;
};

struct CorpusBundle {
    std::vector<OpinionCluster> train;
    std::vector<OpinionCluster> dev;
    std::vector<OpinionCluster> test;
    std::vector<LabeledText> polarity_sentences;
    std::vector<SimilarityPair> similarity_pairs;
    std::vector<LabeledText> acceptability_pairs;

    /// Every text in the bundle, for vocabulary construction.
    std::vector<std::string> all_texts() const;

    friend bool operator==(const CorpusBundle&, const CorpusBundle&) = default;
};

/// Slot-filling templates. Sentences read "<opener> the <aspect> <phrase>."
/// in documents and "the <aspect> <summary phrase>." in references.
struct Lexicon {
    std::vector<std::string> aspects;
    std::vector<std::string> positive_phrases;
    std::vector<std::string> negative_phrases;
    std::vector<std::string> positive_summary;
    std::vector<std::string> negative_summary;
    std::vector<std::string> openers;

    static Lexicon reviews();
    static Lexicon articles();
    static Lexicon for_mode(Mode mode);
    /// True when any slot list needed for generation is empty.
    bool incomplete() const;
};

struct MixtureSpec {
    enum class Kind { fixed, uniform };
    Kind kind = Kind::uniform;
    double low = 0.6;   // the fixed value when kind == fixed
    double high = 0.9;

    double mean() const { return kind == Kind::fixed ? low : 0.5 * (low + high); }
};

struct CorpusConfig {
    Mode mode = Mode::reviews;
    std::size_t train_clusters = 400;
    std::size_t dev_clusters = 50;
    std::size_t test_clusters = 100;
    /// 0 selects the mode default: 8 for reviews, 3 for articles.
    std::size_t documents_per_cluster = 0;
    std::size_t sentences_per_document = 2;
    std::size_t aspects_per_cluster = 4;
    std::size_t reference_sentences = 4;
    std::size_t max_summary_tokens = 40;
    MixtureSpec mixture;
    /// Unset selects Lexicon::for_mode(mode).
    std::optional<Lexicon> lexicon;
    std::size_t polarity_examples = 2000;
    std::size_t similarity_examples = 3000;
    std::size_t acceptability_examples = 2000;

    std::size_t documents() const;
    Lexicon effective_lexicon() const;
    /// Throws ConfigError.
    void validate() const;
};

/// Pure function of (config, seed).
CorpusBundle generate_corpus(const CorpusConfig& config, std::uint64_t seed);

std::vector<OpinionCluster> load_jsonl(const std::filesystem::path& path);
void save_jsonl(const std::vector<OpinionCluster>& clusters, const std::filesystem::path& path);

std::vector<LabeledText> load_labeled(const std::filesystem::path& path);
void save_labeled(const std::vector<LabeledText>& items, const std::filesystem::path& path);
std::vector<SimilarityPair> load_pairs(const std::filesystem::path& path);
void save_pairs(const std::vector<SimilarityPair>& items, const std::filesystem::path& path);

/// Writes train/dev/test and the three reward sets as JSONL under `dir`.
void save_bundle(const CorpusBundle& bundle, const std::filesystem::path& dir);
CorpusBundle load_bundle(const std::filesystem::path& dir);

}  // namespace poca::corpus
