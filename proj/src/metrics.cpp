#include "poca/metrics.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <map>
#include <stdexcept>

#include "poca/textproc.hpp"

namespace poca::metrics {

namespace {

double f1(double overlap, double candidate_total, double reference_total) {
    if (overlap <= 0.0 || candidate_total <= 0.0 || reference_total <= 0.0) return 0.0;
    const double p = overlap / candidate_total;
    const double r = overlap / reference_total;
    return 2.0 * p * r / (p + r);
}

using Table = std::vector<std::vector<std::size_t>>;

Table lcs_table(std::span<const std::string> a, std::span<const std::string> b) {
    Table t(a.size() + 1, std::vector<std::size_t>(b.size() + 1, 0));
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            t[i][j] = a[i - 1] == b[j - 1] ? t[i - 1][j - 1] + 1 : std::max(t[i - 1][j], t[i][j - 1]);
        }
    }
    return t;
}

/// Positions in `ref` on one LCS with `cand`, preferring to drop candidate
/// tokens when both moves keep the length.
std::vector<std::size_t> lcs_positions(std::span<const std::string> ref, std::span<const std::string> cand) {
    const Table t = lcs_table(ref, cand);
    std::vector<std::size_t> out;
    std::size_t i = ref.size(), j = cand.size();
    while (i > 0 && j > 0) {
        if (ref[i - 1] == cand[j - 1]) {
            out.push_back(i - 1);
            --i;
            --j;
        } else if (t[i][j - 1] > t[i - 1][j]) {
            --j;
        } else {
            --i;
        }
    }
    std::reverse(out.begin(), out.end());
    return out;
}

}  // namespace

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
    return lcs_table(a, b)[a.size()][b.size()];
}

double rouge_n_tokens(std::span<const std::string> candidate, std::span<const std::string> reference, std::size_t n) {
    if (n == 0) throw std::invalid_argument("rouge_n: n must be >= 1");
    if (candidate.size() < n || reference.size() < n) return 0.0;
    auto grams = [n](std::span<const std::string> toks) {
        std::map<std::vector<std::string>, std::size_t> counts;
        for (std::size_t i = 0; i + n <= toks.size(); ++i) ++counts[{toks.begin() + i, toks.begin() + i + n}];
        return counts;
    };
    const auto c = grams(candidate), r = grams(reference);
    std::size_t overlap = 0;
    for (const auto& [g, k] : c) {
        auto it = r.find(g);
        if (it != r.end()) overlap += std::min(k, it->second);
    }
    return f1(static_cast<double>(overlap), static_cast<double>(candidate.size() - n + 1),
              static_cast<double>(reference.size() - n + 1));
}

double rouge_l_tokens(std::span<const std::string> candidate, std::span<const std::string> reference) {
    if (candidate.empty() || reference.empty()) return 0.0;
    return f1(static_cast<double>(lcs_length(candidate, reference)), static_cast<double>(candidate.size()),
              static_cast<double>(reference.size()));
}

double rouge_n(std::string_view candidate, std::string_view reference, std::size_t n) {
    return rouge_n_tokens(text::split_words(candidate), text::split_words(reference), n);
}

double rouge_l(std::string_view candidate, std::string_view reference) {
    return rouge_l_tokens(text::split_words(candidate), text::split_words(reference));
}

double rouge_lsum(std::span<const std::string> candidate_sentences, std::span<const std::string> reference_sentences) {
    std::vector<std::vector<std::string>> cand, ref;
    std::map<std::string, std::size_t> cand_counts, ref_counts;
    std::size_t cand_total = 0, ref_total = 0;
    for (const auto& s : candidate_sentences) {
        cand.push_back(text::split_words(s));
        for (const auto& t : cand.back()) ++cand_counts[t];
        cand_total += cand.back().size();
    }
    for (const auto& s : reference_sentences) {
        ref.push_back(text::split_words(s));
        for (const auto& t : ref.back()) ++ref_counts[t];
        ref_total += ref.back().size();
    }
    if (cand_total == 0 || ref_total == 0) return 0.0;

    std::size_t hits = 0;
    for (const auto& r : ref) {
        std::vector<bool> hit(r.size(), false);
        for (const auto& c : cand) {
            for (std::size_t pos : lcs_positions(r, c)) hit[pos] = true;
        }
        for (std::size_t i = 0; i < r.size(); ++i) {
            if (!hit[i]) continue;
            auto& cc = cand_counts[r[i]];
            auto& rc = ref_counts[r[i]];
            if (cc > 0 && rc > 0) {
                ++hits;
                --cc;
                --rc;
            }
        }
    }
    return f1(static_cast<double>(hits), static_cast<double>(cand_total), static_cast<double>(ref_total));
}

RougeScores rouge_all(std::string_view candidate, std::string_view reference) {
    const auto c = text::split_words(candidate), r = text::split_words(reference);
    RougeScores s;
    s.rouge1 = rouge_n_tokens(c, r, 1);
    s.rouge2 = rouge_n_tokens(c, r, 2);
    s.rougeL = rouge_l_tokens(c, r);
    s.rougeLsum = rouge_lsum(text::split_sentences(candidate), text::split_sentences(reference));
    return s;
}

PolarityMetrics metrics_from_residuals(std::span<const double> residuals) {
    if (residuals.empty()) throw std::invalid_argument("polarity metrics: empty residual set");
    double sq = 0.0, ab = 0.0;
    for (double r : residuals) {
        sq += r * r;
        ab += std::fabs(r);
    }
    const double n = static_cast<double>(residuals.size());
    return {std::sqrt(sq / n), ab / n};
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("paired_t_test: length mismatch");
    if (a.size() < 2) throw std::invalid_argument("paired_t_test: need at least two pairs");
    const double n = static_cast<double>(a.size());
    double mean = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
    mean /= n;
    double ss = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) ss += (a[i] - b[i] - mean) * (a[i] - b[i] - mean);
    TTestResult r;
    r.mean_difference = mean;
    r.df = a.size() - 1;
    const double se = std::sqrt(ss / (n - 1.0) / n);
    if (se == 0.0) {
        r.t = mean == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), mean);
        r.p_value = mean == 0.0 ? 1.0 : 0.0;
        return r;
    }
    r.t = mean / se;
    const boost::math::students_t dist(static_cast<double>(r.df));
    r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t)));
    return r;
}

}  // namespace poca::metrics
