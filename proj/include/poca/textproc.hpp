#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace poca::text {

// Reserved ids. kSep joins input documents and is never produced by text.
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kSep = 4;
inline constexpr int kNumReserved = 5;

class Vocab {
   public:
    Vocab();

    /// Tokens with frequency >= min_freq, ordered by frequency (descending)
    /// then lexicographically, after the reserved ids.
    static Vocab build(std::span<const std::string> texts, int min_freq);

    static Vocab from_tokens(std::vector<std::string> tokens);

    int id(std::string_view token) const;
    const std::string& token(int id) const;
    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    void save(const std::filesystem::path& path) const;
    static Vocab load(const std::filesystem::path& path);

    friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

   private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

/// Lowercased word/punctuation tokens. Every ASCII punctuation character is
/// its own token.
std::vector<std::string> split_words(std::string_view text);

std::vector<int> tokenize(std::string_view text, const Vocab& vocab);

/// Inverse of tokenize for UNK-free text. PAD/BOS/EOS are skipped; closing
/// punctuation attaches to the preceding word.
std::string detokenize(std::span<const int> ids, const Vocab& vocab);

/// The canonical surface form: detokenize(tokenize(text)) without a vocab.
std::string normalize(std::string_view text);

/// Splits after '.', '!' or '?' when followed by whitespace or end of text.
std::vector<std::string> split_sentences(std::string_view text);

std::string join(std::span<const std::string> parts, std::string_view separator = " ");

}  // namespace poca::text
