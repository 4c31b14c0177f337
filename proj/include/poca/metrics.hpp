#pragma once

// Rouge overlap scores, polarity residual statistics and a paired t-test.
// Rouge uses lowercased textproc tokens (punctuation included), no stemming
// and no stopword removal, and reports F1.

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace poca::metrics {

/// Clipped n-gram overlap F1. 0 when either side has fewer than n tokens.
double rouge_n(std::string_view candidate, std::string_view reference, std::size_t n);
double rouge_l(std::string_view candidate, std::string_view reference);
/// Summary-level LCS: per reference sentence, the union of its LCS hits
/// against every candidate sentence, clipped by overall token counts.
double rouge_lsum(std::span<const std::string> candidate_sentences, std::span<const std::string> reference_sentences);

/// Token-level variants, for callers that already tokenized.
double rouge_n_tokens(std::span<const std::string> candidate, std::span<const std::string> reference, std::size_t n);
double rouge_l_tokens(std::span<const std::string> candidate, std::span<const std::string> reference);
std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

struct RougeScores {
    double rouge1 = 0.0;
    double rouge2 = 0.0;
    double rougeL = 0.0;
    double rougeLsum = 0.0;
};

/// All four scores; Lsum splits both texts into sentences.
RougeScores rouge_all(std::string_view candidate, std::string_view reference);

struct PolarityMetrics {
    double rmse = 0.0;
    double mae = 0.0;
};

/// Throws std::invalid_argument on an empty set.
PolarityMetrics metrics_from_residuals(std::span<const double> residuals);

struct TTestResult {
    double mean_difference = 0.0;
    double t = 0.0;
    double p_value = 1.0;
    std::size_t df = 0;
};

/// Two-sided paired t-test on a - b. Needs at least two pairs.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

}  // namespace poca::metrics
