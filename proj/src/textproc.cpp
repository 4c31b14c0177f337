#include "poca/textproc.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <stdexcept>

#include "poca/common.hpp"

namespace poca::text {

namespace {

const std::vector<std::string>& reserved_tokens() {
    static const std::vector<std::string> kReserved = {"<pad>", "<bos>", "<eos>", "<unk>", "<sep>"};
    return kReserved;
}

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

bool attaches_left(std::string_view token) {
    return token == "." || token == "," || token == "!" || token == "?" || token == ";" ||
           token == ":" || token == ")";
}

std::string render(const std::vector<std::string>& tokens) {
    std::string out;
    for (const auto& tok : tokens) {
        if (!out.empty() && !attaches_left(tok)) out.push_back(' ');
        out += tok;
    }
    return out;
}

}  // namespace

Vocab::Vocab() : tokens_(reserved_tokens()) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<int>(i));
}

Vocab Vocab::build(std::span<const std::string> texts, int min_freq) {
    if (min_freq < 1) throw std::invalid_argument("build_vocab: min_freq must be >= 1");
    if (texts.empty()) throw DataError("build_vocab: empty corpus");
    std::map<std::string, long> counts;
    for (const auto& t : texts) {
        for (auto& w : split_words(t)) ++counts[w];
    }
    if (counts.empty()) throw DataError("build_vocab: corpus has no tokens");
    std::vector<std::pair<std::string, long>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    Vocab vocab;
    for (const auto& [tok, n] : ranked) {
        if (n < min_freq) continue;
        vocab.index_.emplace(tok, static_cast<int>(vocab.tokens_.size()));
        vocab.tokens_.push_back(tok);
    }
    return vocab;
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
    const auto& reserved = reserved_tokens();
    if (tokens.size() < reserved.size() ||
        !std::equal(reserved.begin(), reserved.end(), tokens.begin())) {
        throw DataError("vocab: token list must start with the reserved tokens");
    }
    Vocab vocab;
    vocab.tokens_ = std::move(tokens);
    vocab.index_.clear();
    for (std::size_t i = 0; i < vocab.tokens_.size(); ++i) {
        if (!vocab.index_.emplace(vocab.tokens_[i], static_cast<int>(i)).second) {
            throw DataError("vocab: duplicate token '" + vocab.tokens_[i] + "'");
        }
    }
    return vocab;
}

int Vocab::id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw std::out_of_range("vocab: id " + std::to_string(id) + " out of range");
    }
    return tokens_[static_cast<std::size_t>(id)];
}

void Vocab::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << nlohmann::json{{"tokens", tokens_}}.dump() << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read vocab " + path.string());
    nlohmann::json j;
    try {
        in >> j;
        return from_tokens(j.at("tokens").get<std::vector<std::string>>());
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed vocab " + path.string() + ": " + e.what());
    }
}

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) words.push_back(std::move(current));
        current.clear();
    };
    for (char c : text) {
        if (is_space(c)) {
            flush();
        } else if (is_punct(c)) {
            flush();
            words.emplace_back(1, c);
        } else {
            current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    flush();
    return words;
}

std::vector<int> tokenize(std::string_view text, const Vocab& vocab) {
    std::vector<int> ids;
    for (const auto& w : split_words(text)) ids.push_back(vocab.id(w));
    return ids;
}

std::string detokenize(std::span<const int> ids, const Vocab& vocab) {
    std::vector<std::string> tokens;
    tokens.reserve(ids.size());
    for (int id : ids) {
        const auto& tok = vocab.token(id);
        if (id == kPad || id == kBos || id == kEos) continue;
        tokens.push_back(tok);
    }
    return render(tokens);
}

std::string normalize(std::string_view text) { return render(split_words(text)); }

std::vector<std::string> split_sentences(std::string_view text) {
    std::vector<std::string> sentences;
    auto emit = [&](std::size_t begin, std::size_t end) {
        while (begin < end && is_space(text[begin])) ++begin;
        while (end > begin && is_space(text[end - 1])) --end;
        if (end > begin) sentences.emplace_back(text.substr(begin, end - begin));
    };
    std::size_t start = 0;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if ((c == '.' || c == '!' || c == '?') && (i + 1 == text.size() || is_space(text[i + 1]))) {
            emit(start, i + 1);
            start = i + 1;
        }
    }
    emit(start, text.size());
    return sentences;
}

std::string join(std::span<const std::string> parts, std::string_view separator) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i > 0) out += separator;
        out += parts[i];
    }
    return out;
}

}  // namespace poca::text
