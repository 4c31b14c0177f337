#include "poca/corpus.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fmt/core.h>
#include <fstream>
#include <set>

#include "poca/common.hpp"
#include "poca/textproc.hpp"

namespace poca::corpus {

using nlohmann::json;

std::string to_string(Mode mode) { return mode == Mode::reviews ? "reviews" : "articles"; }

Mode parse_mode(const std::string& s) {
    if (s == "reviews") return Mode::reviews;
    if (s == "articles") return Mode::articles;
    throw ConfigError("unknown mode '" + s + "' (expected reviews|articles)");
}

std::string Summary::text() const { return text::join(sentences); }

void OpinionCluster::validate() const {
    auto fail = [&](const std::string& why) { throw ValidationError("cluster '" + id + "': " + why); };
    if (id.empty()) throw ValidationError("cluster with empty id");
    if (inputs.empty()) fail("inputs is empty");
    if (mode == Mode::articles && inputs.size() != 3) {
        fail("articles mode needs exactly 3 documents, got " + std::to_string(inputs.size()));
    }
    for (std::size_t d = 0; d < inputs.size(); ++d) {
        if (inputs[d].sentences.empty()) fail("document " + std::to_string(d) + " has no sentences");
        for (const auto& s : inputs[d].sentences) {
            if (text::normalize(s).empty()) fail("document " + std::to_string(d) + " has an empty sentence");
        }
    }
    if (reference.sentences.empty()) fail("reference is empty");
    for (const auto& s : reference.sentences) {
        if (text::normalize(s).empty()) fail("reference has an empty sentence");
    }
    if (mixture && !(*mixture >= 0.0 && *mixture <= 1.0)) fail("mixture outside [0, 1]");
}

std::vector<std::string> OpinionCluster::document_texts() const {
    std::vector<std::string> out;
    out.reserve(inputs.size());
    for (const auto& d : inputs) out.push_back(text::join(d.sentences));
    return out;
}

std::string OpinionCluster::input_text() const {
    const auto docs = document_texts();
    return text::join(docs);
}

std::vector<std::string> CorpusBundle::all_texts() const {
    std::vector<std::string> out;
    for (const auto* split : {&train, &dev, &test}) {
        for (const auto& c : *split) {
            for (const auto& d : c.inputs) out.insert(out.end(), d.sentences.begin(), d.sentences.end());
            out.insert(out.end(), c.reference.sentences.begin(), c.reference.sentences.end());
        }
    }
    for (const auto& s : polarity_sentences) out.push_back(s.text);
    for (const auto& p : similarity_pairs) {
        out.push_back(p.a);
        out.push_back(p.b);
    }
    for (const auto& s : acceptability_pairs) out.push_back(s.text);
    return out;
}

// ---- lexicons --------------------------------------------------------------

Lexicon Lexicon::reviews() {
    return Lexicon{
        .aspects = {"battery", "screen", "sound", "price", "design", "keyboard", "camera", "speaker", "charger",
                    "display", "touchpad", "webcam"},
        .positive_phrases = {"is great", "works well", "is excellent", "feels solid", "is impressive",
                             "is fantastic"},
        .negative_phrases = {"is terrible", "stopped working", "is awful", "feels cheap", "is disappointing",
                             "is flimsy"},
        .positive_summary = {"is good", "is great"},
        .negative_summary = {"is bad", "is poor"},
        .openers = {"", "honestly,", "overall,", "i think", "in my opinion,", "to be fair,"},
    };
}

Lexicon Lexicon::articles() {
    return Lexicon{
        .aspects = {"tax plan", "border policy", "health bill", "energy proposal", "school reform", "trade deal",
                    "budget deal", "court ruling", "gun law", "climate rule"},
        .positive_phrases = {"protects taxpayers", "restores order", "cuts wasteful spending",
                             "defends traditional values", "strengthens security", "limits government"},
        .negative_phrases = {"expands access", "protects workers", "helps working families", "fights inequality",
                             "expands civil rights", "invests in communities"},
        .positive_summary = {"favors conservatives", "is praised by the right"},
        .negative_summary = {"favors progressives", "is praised by the left"},
        .openers = {"", "critics say", "supporters argue", "the article claims", "analysts say", "reporters note"},
    };
}

Lexicon Lexicon::for_mode(Mode mode) { return mode == Mode::reviews ? reviews() : articles(); }

bool Lexicon::incomplete() const {
    return aspects.empty() || positive_phrases.empty() || negative_phrases.empty() || positive_summary.empty() ||
           negative_summary.empty() || openers.empty();
}

// ---- config ----------------------------------------------------------------

std::size_t CorpusConfig::documents() const {
    if (documents_per_cluster != 0) return documents_per_cluster;
    return mode == Mode::reviews ? 8 : 3;
}

Lexicon CorpusConfig::effective_lexicon() const { return lexicon ? *lexicon : Lexicon::for_mode(mode); }

void CorpusConfig::validate() const {
    if (train_clusters == 0 || dev_clusters == 0 || test_clusters == 0) {
        throw ConfigError("corpus: every split needs at least one cluster");
    }
    if (mode == Mode::articles && documents() != 3) throw ConfigError("corpus: articles mode uses exactly 3 documents");
    if (documents() == 0 || sentences_per_document == 0) throw ConfigError("corpus: empty documents");
    if (reference_sentences == 0) throw ConfigError("corpus: reference_sentences must be >= 1");
    if (aspects_per_cluster == 0) throw ConfigError("corpus: aspects_per_cluster must be >= 1");
    const Lexicon lex = effective_lexicon();
    if (lex.incomplete()) throw ConfigError("corpus: empty template vocabulary");
    if (aspects_per_cluster > lex.aspects.size()) throw ConfigError("corpus: aspects_per_cluster exceeds lexicon");
    const bool ok_range = mixture.low >= 0.0 && mixture.low <= 1.0 &&
                          (mixture.kind == MixtureSpec::Kind::fixed || (mixture.high >= mixture.low && mixture.high <= 1.0));
    if (!ok_range) throw ConfigError("corpus: mixture bounds must lie in [0, 1] with low <= high");
    if (polarity_examples < 2 || acceptability_examples < 2 || similarity_examples < 2) {
        throw ConfigError("corpus: reward-model sets need at least two examples");
    }
}

// ---- generation ------------------------------------------------------------

namespace {

std::string with_terminal(std::string body, const std::string& end) { return text::normalize(body + end); }

std::string input_sentence(const Lexicon& lex, const std::string& aspect, Polarity pol, Rng& rng) {
    const std::string& opener = rng.pick(lex.openers);
    const std::string& phrase = rng.pick(pol == Polarity::positive ? lex.positive_phrases : lex.negative_phrases);
    std::string body = opener.empty() ? "" : opener + " ";
    body += "the " + aspect + " " + phrase;
    return with_terminal(body, rng.bernoulli(0.8) ? "." : "!");
}

std::string summary_sentence(const Lexicon& lex, const std::string& aspect, Polarity pol, Rng& rng) {
    const std::string& phrase = rng.pick(pol == Polarity::positive ? lex.positive_summary : lex.negative_summary);
    return with_terminal("the " + aspect + " " + phrase, ".");
}

Polarity random_polarity(Rng& rng) { return rng.bernoulli(0.5) ? Polarity::positive : Polarity::negative; }

std::vector<std::string> choose_aspects(const Lexicon& lex, std::size_t n, Rng& rng) {
    std::vector<std::string> pool = lex.aspects;
    rng.shuffle(pool);
    pool.resize(std::min(n, pool.size()));
    return pool;
}

double draw_mixture(const MixtureSpec& spec, Rng& rng) {
    if (spec.kind == MixtureSpec::Kind::fixed) return spec.low;
    return rng.uniform(spec.low, spec.high);
}

OpinionCluster make_cluster(const CorpusConfig& cfg, const Lexicon& lex, const std::string& id, Rng& rng) {
    OpinionCluster c;
    c.id = id;
    c.mode = cfg.mode;
    const double target = draw_mixture(cfg.mixture, rng);
    const auto aspects = choose_aspects(lex, cfg.aspects_per_cluster, rng);

    std::size_t positive_docs = 0;
    for (std::size_t d = 0; d < cfg.documents(); ++d) {
        Document doc;
        const Polarity pol = rng.bernoulli(target) ? Polarity::positive : Polarity::negative;
        if (pol == Polarity::positive) ++positive_docs;
        doc.source_label = pol;
        for (std::size_t s = 0; s < cfg.sentences_per_document; ++s) {
            doc.sentences.push_back(input_sentence(lex, rng.pick(aspects), pol, rng));
        }
        c.inputs.push_back(std::move(doc));
    }
    // Every document has the same sentence count, so this is also the
    // positive-sentence fraction.
    const double realized = static_cast<double>(positive_docs) / static_cast<double>(cfg.documents());
    c.mixture = realized;

    // Stochastic rounding keeps the reference's positive share unbiased and
    // within 1/R of the realized mixture.
    const std::size_t r = cfg.reference_sentences;
    const double scaled = realized * static_cast<double>(r);
    std::size_t k = static_cast<std::size_t>(std::floor(scaled));
    if (rng.bernoulli(scaled - std::floor(scaled))) ++k;
    k = std::min(k, r);

    std::vector<Polarity> slots(r, Polarity::negative);
    std::fill(slots.begin(), slots.begin() + static_cast<std::ptrdiff_t>(k), Polarity::positive);
    rng.shuffle(slots);
    std::vector<std::string> order = aspects;
    rng.shuffle(order);
    std::size_t tokens = 0;
    for (std::size_t i = 0; i < r; ++i) {
        c.reference.sentences.push_back(summary_sentence(lex, order[i % order.size()], slots[i], rng));
        tokens += text::split_words(c.reference.sentences.back()).size();
    }
    if (tokens > cfg.max_summary_tokens) {
        throw ConfigError(fmt::format("corpus: reference of {} tokens exceeds max_summary_tokens {}", tokens,
                                      cfg.max_summary_tokens));
    }
    return c;
}

std::vector<LabeledText> make_polarity_set(const CorpusConfig& cfg, const Lexicon& lex, Rng& rng) {
    std::vector<LabeledText> out;
    for (std::size_t i = 0; i < cfg.polarity_examples; ++i) {
        const Polarity pol = i % 2 == 0 ? Polarity::positive : Polarity::negative;
        const double style = rng.uniform();
        std::string text;
        if (style < 0.6) {
            text = input_sentence(lex, rng.pick(lex.aspects), pol, rng);
        } else if (style < 0.85 || cfg.mode == Mode::reviews) {
            text = summary_sentence(lex, rng.pick(lex.aspects), pol, rng);
        } else {
            // Whole articles are scored as one unit in articles mode.
            std::vector<std::string> doc;
            for (std::size_t s = 0; s < cfg.sentences_per_document; ++s) {
                doc.push_back(input_sentence(lex, rng.pick(lex.aspects), pol, rng));
            }
            text = text::join(doc);
        }
        out.push_back({std::move(text), pol == Polarity::positive ? 1 : 0});
    }
    rng.shuffle(out);
    return out;
}

std::string aspect_text(const Lexicon& lex, const std::vector<std::string>& aspects, bool summary_style,
                        Rng& rng) {
    std::vector<std::string> chosen = aspects;
    if (!summary_style) {
        const std::size_t extra = rng.below(aspects.size() + 1);
        for (std::size_t i = 0; i < extra; ++i) chosen.push_back(rng.pick(aspects));
    }
    rng.shuffle(chosen);
    std::vector<std::string> sentences;
    for (const auto& a : chosen) {
        sentences.push_back(summary_style ? summary_sentence(lex, a, random_polarity(rng), rng)
                                          : input_sentence(lex, a, random_polarity(rng), rng));
    }
    return text::join(sentences);
}

std::vector<SimilarityPair> make_similarity_set(const CorpusConfig& cfg, const Lexicon& lex, const Lexicon& other,
                                                Rng& rng) {
    std::vector<SimilarityPair> out;
    const std::size_t max_set = std::min<std::size_t>(5, lex.aspects.size());
    for (std::size_t i = 0; i < cfg.similarity_examples; ++i) {
        const double kind = rng.uniform();
        SimilarityPair p;
        if (kind < 0.15) {
            const auto a = choose_aspects(lex, 1 + rng.below(max_set), rng);
            const auto b = choose_aspects(other, 1 + rng.below(std::min<std::size_t>(5, other.aspects.size())), rng);
            p = {aspect_text(lex, a, rng.bernoulli(0.5), rng), aspect_text(other, b, rng.bernoulli(0.5), rng), 0.0};
        } else if (kind < 0.3) {
            const auto a = choose_aspects(lex, 1 + rng.below(max_set), rng);
            const std::string t = aspect_text(lex, a, rng.bernoulli(0.5), rng);
            p = {t, t, 1.0};
        } else {
            auto pool = lex.aspects;
            rng.shuffle(pool);
            const std::size_t na = 1 + rng.below(max_set);
            const std::size_t overlap = rng.below(na + 1);
            const std::size_t fresh = std::min(rng.below(4), pool.size() - na);
            std::vector<std::string> a(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(na));
            std::vector<std::string> b(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(overlap));
            b.insert(b.end(), pool.begin() + static_cast<std::ptrdiff_t>(na),
                     pool.begin() + static_cast<std::ptrdiff_t>(na + fresh));
            if (b.empty()) b.push_back(pool[na < pool.size() ? na : 0]);
            std::set<std::string> sa(a.begin(), a.end()), sb(b.begin(), b.end()), uni = sa, inter;
            uni.insert(sb.begin(), sb.end());
            for (const auto& x : sa) {
                if (sb.count(x) != 0) inter.insert(x);
            }
            const double score = static_cast<double>(inter.size()) / static_cast<double>(uni.size());
            p = {aspect_text(lex, a, false, rng), aspect_text(lex, b, rng.bernoulli(0.5), rng), score};
        }
        if (rng.bernoulli(0.5)) std::swap(p.a, p.b);
        out.push_back(std::move(p));
    }
    return out;
}

std::string corrupt(const std::string& sentence, Rng& rng) {
    auto tokens = text::split_words(sentence);
    const std::size_t n = tokens.size();
    const std::size_t kind = rng.below(3);
    if (kind == 0 && n > 2) {
        const auto original = tokens;
        while (tokens == original) rng.shuffle(tokens);
    } else if (kind == 1 || n <= 2) {
        const std::size_t at = rng.below(n);
        tokens.insert(tokens.begin() + static_cast<std::ptrdiff_t>(at), tokens[at]);
    } else {
        const std::size_t drop = 1 + rng.below(std::min<std::size_t>(3, n - 1));
        tokens.resize(n - drop);
    }
    return text::normalize(text::join(tokens));
}

std::vector<LabeledText> make_acceptability_set(const CorpusConfig& cfg, const Lexicon& lex, Rng& rng) {
    std::vector<LabeledText> out;
    for (std::size_t i = 0; i < cfg.acceptability_examples; ++i) {
        const std::string& aspect = rng.pick(lex.aspects);
        const Polarity pol = random_polarity(rng);
        const std::string fluent = rng.bernoulli(0.5) ? input_sentence(lex, aspect, pol, rng)
                                                      : summary_sentence(lex, aspect, pol, rng);
        if (i % 2 == 0) {
            out.push_back({fluent, 1});
        } else {
            out.push_back({corrupt(fluent, rng), 0});
        }
    }
    rng.shuffle(out);
    return out;
}

}  // namespace

CorpusBundle generate_corpus(const CorpusConfig& config, std::uint64_t seed) {
    config.validate();
    const Lexicon lex = config.effective_lexicon();
    const Lexicon other = Lexicon::for_mode(config.mode == Mode::reviews ? Mode::articles : Mode::reviews);
    Rng root(seed);
    Rng cluster_rng = root.fork();
    Rng polarity_rng = root.fork();
    Rng similarity_rng = root.fork();
    Rng accept_rng = root.fork();

    CorpusBundle bundle;
    auto fill = [&](std::vector<OpinionCluster>& split, std::size_t n, const char* prefix) {
        for (std::size_t i = 0; i < n; ++i) {
            split.push_back(make_cluster(config, lex, fmt::format("{}-{:05d}", prefix, i), cluster_rng));
        }
    };
    fill(bundle.train, config.train_clusters, "train");
    fill(bundle.dev, config.dev_clusters, "dev");
    fill(bundle.test, config.test_clusters, "test");
    bundle.polarity_sentences = make_polarity_set(config, lex, polarity_rng);
    bundle.similarity_pairs = make_similarity_set(config, lex, other, similarity_rng);
    bundle.acceptability_pairs = make_acceptability_set(config, lex, accept_rng);
    return bundle;
}

// ---- JSON-Lines ------------------------------------------------------------

namespace {

struct RecordError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

json cluster_to_json(const OpinionCluster& c) {
    json inputs = json::array();
    for (const auto& d : c.inputs) {
        json label = nullptr;
        if (d.source_label) label = *d.source_label == Polarity::positive ? "positive" : "negative";
        inputs.push_back({{"sentences", d.sentences}, {"source_label", label}});
    }
    json mixture = nullptr;
    if (c.mixture) mixture = *c.mixture;
    return {{"id", c.id},
            {"mode", to_string(c.mode)},
            {"inputs", inputs},
            {"reference", {{"sentences", c.reference.sentences}}},
            {"mixture", mixture}};
}

OpinionCluster cluster_from_json(const json& j) {
    OpinionCluster c;
    c.id = j.at("id").get<std::string>();
    const auto mode = j.at("mode").get<std::string>();
    if (mode == "reviews") {
        c.mode = Mode::reviews;
    } else if (mode == "articles") {
        c.mode = Mode::articles;
    } else {
        throw RecordError("unknown mode '" + mode + "'");
    }
    for (const auto& d : j.at("inputs")) {
        Document doc;
        doc.sentences = d.at("sentences").get<std::vector<std::string>>();
        if (d.contains("source_label") && !d.at("source_label").is_null()) {
            const auto label = d.at("source_label").get<std::string>();
            if (label != "positive" && label != "negative") {
                throw RecordError("unknown source_label '" + label + "'");
            }
            doc.source_label = label == "positive" ? Polarity::positive : Polarity::negative;
        }
        c.inputs.push_back(std::move(doc));
    }
    c.reference.sentences = j.at("reference").at("sentences").get<std::vector<std::string>>();
    if (j.contains("mixture") && !j.at("mixture").is_null()) c.mixture = j.at("mixture").get<double>();
    return c;
}

template <typename T, typename Parse>
std::vector<T> read_lines(const std::filesystem::path& path, Parse parse) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::vector<T> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(parse(json::parse(line)));
        } catch (const json::exception& e) {
            throw ParseError(fmt::format("{}:{}: malformed record: {}", path.string(), lineno, e.what()), lineno);
        } catch (const RecordError& e) {
            throw ParseError(fmt::format("{}:{}: malformed record: {}", path.string(), lineno, e.what()), lineno);
        }
    }
    return out;
}

template <typename T, typename Emit>
void write_lines(const std::vector<T>& items, const std::filesystem::path& path, Emit emit) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& item : items) out << emit(item).dump() << '\n';
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

std::vector<OpinionCluster> load_jsonl(const std::filesystem::path& path) {
    auto clusters = read_lines<OpinionCluster>(path, cluster_from_json);
    for (const auto& c : clusters) c.validate();
    return clusters;
}

void save_jsonl(const std::vector<OpinionCluster>& clusters, const std::filesystem::path& path) {
    write_lines(clusters, path, cluster_to_json);
}

std::vector<LabeledText> load_labeled(const std::filesystem::path& path) {
    return read_lines<LabeledText>(path, [](const json& j) {
        LabeledText t{j.at("text").get<std::string>(), j.at("label").get<int>()};
        if (t.label != 0 && t.label != 1) throw RecordError("label must be 0 or 1");
        return t;
    });
}

void save_labeled(const std::vector<LabeledText>& items, const std::filesystem::path& path) {
    write_lines(items, path, [](const LabeledText& t) { return json{{"text", t.text}, {"label", t.label}}; });
}

std::vector<SimilarityPair> load_pairs(const std::filesystem::path& path) {
    return read_lines<SimilarityPair>(path, [](const json& j) {
        return SimilarityPair{j.at("a").get<std::string>(), j.at("b").get<std::string>(), j.at("score").get<double>()};
    });
}

void save_pairs(const std::vector<SimilarityPair>& items, const std::filesystem::path& path) {
    write_lines(items, path, [](const SimilarityPair& p) { return json{{"a", p.a}, {"b", p.b}, {"score", p.score}}; });
}

void save_bundle(const CorpusBundle& bundle, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_jsonl(bundle.train, dir / "train.jsonl");
    save_jsonl(bundle.dev, dir / "dev.jsonl");
    save_jsonl(bundle.test, dir / "test.jsonl");
    save_labeled(bundle.polarity_sentences, dir / "polarity.jsonl");
    save_pairs(bundle.similarity_pairs, dir / "similarity.jsonl");
    save_labeled(bundle.acceptability_pairs, dir / "acceptability.jsonl");
}

CorpusBundle load_bundle(const std::filesystem::path& dir) {
    CorpusBundle b;
    b.train = load_jsonl(dir / "train.jsonl");
    b.dev = load_jsonl(dir / "dev.jsonl");
    b.test = load_jsonl(dir / "test.jsonl");
    b.polarity_sentences = load_labeled(dir / "polarity.jsonl");
    b.similarity_pairs = load_pairs(dir / "similarity.jsonl");
    b.acceptability_pairs = load_labeled(dir / "acceptability.jsonl");
    return b;
}

}  // namespace poca::corpus
