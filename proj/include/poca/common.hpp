#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace poca {

// Error categories. The CLI maps each family onto a distinct exit code.
class ConfigError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class ParseError : public DataError {
   public:
    ParseError(const std::string& what, std::size_t line) : DataError(what), line_(line) {}
    std::size_t line() const { return line_; }

   private:
    std::size_t line_;
};

class ValidationError : public DataError {
   public:
    using DataError::DataError;
};

class TrainingAbort : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Seeded generator. Draws are built directly from the 64-bit engine output so
// that streams do not depend on the standard library's distribution classes.
class Rng {
   public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::size_t below(std::size_t n) {
        if (n == 0) throw std::invalid_argument("Rng::below: empty range");
        // Rejection sampling removes modulo bias.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = engine_();
        while (x >= limit) x = engine_();
        return static_cast<std::size_t>(x % n);
    }

    bool bernoulli(double p) { return uniform() < p; }

    double normal() {
        // Box-Muller; the spare value is discarded to keep streams simple.
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::swap(items[i - 1], items[below(i)]);
        }
    }

    template <typename T>
    const T& pick(const std::vector<T>& items) {
        return items[below(items.size())];
    }

    // Independent child stream, so adding draws in one consumer does not
    // perturb another.
    Rng fork() { return Rng(engine_() ^ 0x9e3779b97f4a7c15ULL); }

   private:
    std::mt19937_64 engine_;
};

// FNV-1a, used for config hashes and derived seeds.
inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace poca
