#pragma once

// Brute-force Rouge reference used by the unit tests and the acceptance
// binary: naive n-gram matching and a forward-filled LCS table.

#include <algorithm>
#include <map>
#include <string>
#include <vector>

namespace poca::oracle {

using Tokens = std::vector<std::string>;

inline double oracle_f1(double hits, double cand, double ref) {
    if (hits <= 0.0 || cand <= 0.0 || ref <= 0.0) return 0.0;
    const double p = hits / cand;
    const double r = hits / ref;
    return 2.0 * p * r / (p + r);
}

// Each candidate n-gram consumes at most one unused equal reference n-gram.
inline double naive_rouge_n(const Tokens& c, const Tokens& r, std::size_t n) {
    if (c.size() < n || r.size() < n) return 0.0;
    std::vector<bool> used(r.size() - n + 1, false);
    std::size_t hits = 0;
    for (std::size_t i = 0; i + n <= c.size(); ++i) {
        for (std::size_t j = 0; j + n <= r.size(); ++j) {
            if (used[j]) continue;
            bool same = true;
            for (std::size_t k = 0; k < n && same; ++k) same = c[i + k] == r[j + k];
            if (same) {
                used[j] = true;
                ++hits;
                break;
            }
        }
    }
    return oracle_f1(static_cast<double>(hits), static_cast<double>(c.size() - n + 1),
                     static_cast<double>(r.size() - n + 1));
}

// table[i][j] = LCS of a[:i] and b[:j]
inline std::vector<std::vector<int>> naive_table(const Tokens& a, const Tokens& b) {
    std::vector<std::vector<int>> t(a.size() + 1, std::vector<int>(b.size() + 1, 0));
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < b.size(); ++j) {
            int best = std::max(t[i][j + 1], t[i + 1][j]);
            if (a[i] == b[j]) best = std::max(best, t[i][j] + 1);
            t[i + 1][j + 1] = best;
        }
    }
    return t;
}

inline double naive_rouge_l(const Tokens& c, const Tokens& r) {
    if (c.empty() || r.empty()) return 0.0;
    return oracle_f1(naive_table(c, r)[c.size()][r.size()], static_cast<double>(c.size()),
                     static_cast<double>(r.size()));
}

// Reference indices on the LCS found by walking back from the end: take a
// match, else step in the candidate when that side is strictly longer.
inline std::vector<std::size_t> naive_hits(const Tokens& ref, const Tokens& cand) {
    const auto t = naive_table(ref, cand);
    std::vector<std::size_t> hits;
    std::size_t i = ref.size(), j = cand.size();
    while (i > 0 && j > 0) {
        if (ref[i - 1] == cand[j - 1]) {
            hits.insert(hits.begin(), i - 1);
            --i;
            --j;
        } else if (t[i][j - 1] > t[i - 1][j]) {
            --j;
        } else {
            --i;
        }
    }
    return hits;
}

inline double naive_rouge_lsum(const std::vector<Tokens>& cand, const std::vector<Tokens>& ref) {
    std::map<std::string, int> cc, rc;
    double ct = 0, rt = 0;
    for (const auto& s : cand)
        for (const auto& w : s) ++cc[w], ++ct;
    for (const auto& s : ref)
        for (const auto& w : s) ++rc[w], ++rt;
    if (ct == 0 || rt == 0) return 0.0;
    double hits = 0;
    for (const auto& r : ref) {
        std::vector<std::size_t> uni;
        for (const auto& c : cand)
            for (std::size_t p : naive_hits(r, c))
                if (std::find(uni.begin(), uni.end(), p) == uni.end()) uni.push_back(p);
        std::sort(uni.begin(), uni.end());
        for (std::size_t p : uni) {
            if (cc[r[p]] > 0 && rc[r[p]] > 0) {
                hits += 1;
                --cc[r[p]];
                --rc[r[p]];
            }
        }
    }
    return oracle_f1(hits, ct, rt);
}

}  // namespace poca::oracle
