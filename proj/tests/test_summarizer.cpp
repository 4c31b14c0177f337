#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <memory>
#include <vector>

#include "poca/common.hpp"
#include "poca/corpus.hpp"
#include "poca/summarizer.hpp"

using namespace poca;
using namespace poca::summ;
using Catch::Approx;

namespace {

std::shared_ptr<const text::Vocab> tiny_vocab() {
    return std::make_shared<const text::Vocab>(
        text::Vocab::from_tokens({"<pad>", "<bos>", "<eos>", "<unk>", "<sep>", "the", "battery", "screen", "is",
                                  "good", "bad", "."}));
}

ArchConfig tiny_arch(std::size_t max_summary = 8) {
    ArchConfig a;
    a.embedding_dim = 5;
    a.hidden_dim = 6;
    a.attention_dim = 4;
    a.max_input_length = 32;
    a.max_summary_length = max_summary;
    return a;
}

corpus::OpinionCluster one_cluster() {
    corpus::OpinionCluster c;
    c.id = "c0";
    c.inputs = {{{"the battery is good."}, corpus::Polarity::positive},
                {{"the screen is bad."}, corpus::Polarity::negative}};
    c.reference.sentences = {"the battery is good.", "the screen is bad."};
    return c;
}

// ---- plain-loop oracle of the forward pass ---------------------------------

using Vec = std::vector<double>;

Vec row_times(const Vec& x, const diff::Tensor& w) {
    Vec out(w.cols(), 0.0);
    for (std::size_t i = 0; i < w.rows(); ++i) {
        for (std::size_t j = 0; j < w.cols(); ++j) out[j] += x[i] * w.at(i, j);
    }
    return out;
}

double sigm(double v) { return 1.0 / (1.0 + std::exp(-v)); }

struct Oracle {
    const diff::ParamStore& p;
    std::size_t H;

    const diff::Tensor& w(const char* name) const { return p.get(name).value; }

    Vec emb(int id) const {
        const auto& t = w("embedding");
        return Vec(t.data() + id * t.cols(), t.data() + (id + 1) * t.cols());
    }

    Vec gru(const Vec& x, const Vec& h, const char* W, const char* Ug, const char* Uc, const char* B) const {
        Vec gx = row_times(x, w(W));
        for (std::size_t j = 0; j < gx.size(); ++j) gx[j] += w(B)[j];
        const Vec gh = row_times(h, w(Ug));
        Vec z(H), r(H), rh(H);
        for (std::size_t j = 0; j < H; ++j) {
            z[j] = sigm(gx[j] + gh[j]);
            r[j] = sigm(gx[H + j] + gh[H + j]);
            rh[j] = r[j] * h[j];
        }
        const Vec c = row_times(rh, w(Uc));
        Vec out(H);
        for (std::size_t j = 0; j < H; ++j) {
            const double n = std::tanh(gx[2 * H + j] + c[j]);
            out[j] = (1.0 - z[j]) * n + z[j] * h[j];
        }
        return out;
    }

    double nll(const std::vector<int>& x, const std::vector<int>& y) const {
        std::vector<Vec> states;
        Vec h(H, 0.0);
        for (int id : x) {
            h = gru(emb(id), h, "enc.w", "enc.u_gates", "enc.u_cand", "enc.b");
            states.push_back(h);
        }
        std::vector<Vec> keys;
        for (const auto& s : states) keys.push_back(row_times(s, w("att.keys")));
        Vec s = row_times(h, w("bridge.w"));
        for (std::size_t j = 0; j < H; ++j) s[j] = std::tanh(s[j] + w("bridge.b")[j]);

        double total = 0.0;
        int prev = text::kBos;
        for (int target : y) {
            const Vec q = row_times(s, w("att.query"));
            Vec score(states.size());
            double mx = -1e300;
            for (std::size_t i = 0; i < states.size(); ++i) {
                double e = 0.0;
                for (std::size_t a = 0; a < q.size(); ++a) e += std::tanh(keys[i][a] + q[a]) * w("att.score")[a];
                score[i] = e;
                mx = std::max(mx, e);
            }
            double z = 0.0;
            for (double& e : score) z += (e = std::exp(e - mx));
            Vec ctx(H, 0.0);
            for (std::size_t i = 0; i < states.size(); ++i) {
                for (std::size_t j = 0; j < H; ++j) ctx[j] += score[i] / z * states[i][j];
            }
            Vec in = emb(prev);
            in.insert(in.end(), ctx.begin(), ctx.end());
            s = gru(in, s, "dec.w", "dec.u_gates", "dec.u_cand", "dec.b");
            Vec feat = s;
            feat.insert(feat.end(), ctx.begin(), ctx.end());
            Vec logits = row_times(feat, w("out.w"));
            double lmx = -1e300;
            for (std::size_t j = 0; j < logits.size(); ++j) lmx = std::max(lmx, logits[j] += w("out.b")[j]);
            double lz = 0.0;
            for (double l : logits) lz += std::exp(l - lmx);
            total += -(logits[target] - lmx - std::log(lz));
            prev = target;
        }
        return total / static_cast<double>(y.size());
    }
};

}  // namespace

TEST_CASE("zero output layer gives loss ln V") {
    SummarizerModel model(tiny_vocab(), tiny_arch(16), 1);
    model.params().get("out.w").value.fill(0.0);
    model.params().get("out.b").value.fill(0.0);
    const auto c = one_cluster();
    const double loss = nll_value(model, model.input_ids(c), model.target_ids(c.reference));
    CHECK(loss == Approx(std::log(static_cast<double>(model.vocab_size()))).epsilon(1e-12));
}

TEST_CASE("teacher-forced loss matches a hand-rolled oracle") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        SummarizerModel model(tiny_vocab(), tiny_arch(), seed);
        Rng rng(seed + 100);
        for (auto* p : model.params().all()) {
            for (double& v : p->value.values()) v = rng.uniform(-0.8, 0.8);
        }
        const std::vector<int> x = {5, 6, 8, 9, 11, 4, 5, 7, 8, 10, 11};
        const std::vector<int> y = {5, 7, 8, 10, 11, text::kEos};
        const Oracle oracle{model.params(), model.arch().hidden_dim};
        CHECK(std::fabs(nll_value(model, x, y) - oracle.nll(x, y)) < 1e-10);
    }
}

TEST_CASE("saturated model drives the loss toward zero") {
    // Output bias strongly favors the single target token.
    SummarizerModel model(tiny_vocab(), tiny_arch(1), 4);
    model.params().get("out.w").value.fill(0.0);
    model.params().get("out.b").value.fill(0.0);
    model.params().get("out.b").value[text::kEos] = 60.0;
    const std::vector<int> x = {5, 6};
    const std::vector<int> y = {text::kEos};
    CHECK(nll_value(model, x, y) < 1e-20);
}

TEST_CASE("nll gradient passes a finite-difference check") {
    SummarizerModel model(tiny_vocab(), tiny_arch(), 7);
    const std::vector<int> x = {5, 6, 8, 4, 7, 9};
    const std::vector<int> y = {5, 9, 10, text::kEos};
    const double err = finite_diff_check([&](diff::Tape& t) {
        Graph g(model, t);
        return nll_loss(g, x, y);
    }, model.params(), 1e-5, 400, 11);
    CHECK(err < 1e-4);
}

TEST_CASE("encode: one state per position, deterministic, parameter-sensitive") {
    SummarizerModel model(tiny_vocab(), tiny_arch(), 3);
    const std::vector<int> single = {6};
    {
        diff::Tape t;
        Graph g(std::as_const(model), t);
        const auto enc = g.encode(single);
        CHECK(enc.length == 1);
        CHECK(enc.states.rows() == 1);
    }
    const std::vector<int> x = {5, 6, 7, 8};
    auto states = [&] {
        diff::Tape t;
        Graph g(std::as_const(model), t);
        return g.encode(x).states.value();
    };
    const diff::Tensor a = states();
    CHECK(a.rows() == 4);
    CHECK(states() == a);
    model.params().get("enc.u_cand").value[0] += 0.5;
    CHECK_FALSE(states() == a);
}

TEST_CASE("over-length input is truncated and counted") {
    ArchConfig arch = tiny_arch();
    arch.max_input_length = 6;
    SummarizerModel model(tiny_vocab(), arch, 1);
    const auto ids = model.input_ids(one_cluster());
    CHECK(ids.size() == 6);
    CHECK(model.truncations() == 1);
    const std::vector<int> longer = {5, 6, 7, 8, 9, 10, 11, 5};
    diff::Tape t;
    Graph g(std::as_const(model), t);
    CHECK(g.encode(longer).length == 6);
    CHECK(model.truncations() == 2);
}

TEST_CASE("input ids join documents with the separator") {
    SummarizerModel model(tiny_vocab(), tiny_arch(), 1);
    const auto& v = model.vocab();
    const std::vector<int> expect = {v.id("the"), v.id("battery"), v.id("is"), v.id("good"), v.id("."), text::kSep,
                                     v.id("the"), v.id("screen"),  v.id("is"), v.id("bad"),  v.id(".")};
    CHECK(model.input_ids(one_cluster()) == expect);
}

TEST_CASE("targets: EOS-terminated; empty or over-long targets are rejected") {
    SummarizerModel model(tiny_vocab(), tiny_arch(4), 1);
    corpus::Summary s{{"the battery is good."}};
    CHECK_THROWS_AS(model.target_ids(s), DataError);
    s.sentences = {"good ."};
    const auto ids = model.target_ids(s);
    CHECK(ids.back() == text::kEos);
    diff::Tape t;
    Graph g(model, t);
    CHECK_THROWS(nll_loss(g, std::vector<int>{5}, std::vector<int>{}));
}

TEST_CASE("greedy decode breaks ties toward the lowest id and respects max length") {
    SummarizerModel model(tiny_vocab(), tiny_arch(5), 2);
    model.params().get("out.w").value.fill(0.0);
    model.params().get("out.b").value.fill(0.0);
    const auto out = greedy_decode(model, std::vector<int>{5, 6});
    CHECK(out == std::vector<int>(5, 0));
}

TEST_CASE("sampling: low-temperature limit equals greedy decoding") {
    for (std::uint64_t seed : {5u, 6u, 7u}) {
        SummarizerModel model(tiny_vocab(), tiny_arch(), seed);
        const std::vector<int> x = {5, 6, 7, 4, 8, 9};
        Rng rng(seed);
        const auto s = sample(model, x, 1e-6, rng);
        CHECK(strip_eos(s.tokens) == greedy_decode(model, x));
    }
}

TEST_CASE("sampling: single-step outcomes enumerate to probability one") {
    SummarizerModel model(tiny_vocab(), tiny_arch(1), 8);
    const std::vector<int> x = {5, 9, 11};
    for (double temp : {0.5, 1.0, 2.0}) {
        const auto lp = next_token_log_probs(model, x, {}, temp);
        double total = 0.0;
        for (double l : lp) total += std::exp(l);
        CHECK(std::fabs(total - 1.0) < 1e-9);
        for (int trial = 0; trial < 20; ++trial) {
            Rng rng(static_cast<std::uint64_t>(trial));
            const auto s = sample(model, x, temp, rng);
            REQUIRE(s.tokens.size() == 1);
            CHECK(s.step_log_probs[0] == Approx(lp[static_cast<std::size_t>(s.tokens[0])]).epsilon(1e-12));
        }
    }
}

TEST_CASE("sampling: every step's distribution is normalized and log-probs add up") {
    SummarizerModel model(tiny_vocab(), tiny_arch(), 9);
    const std::vector<int> x = {5, 6, 7, 8};
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        const auto s = sample(model, x, 1.0, rng);
        double acc = 0.0;
        for (std::size_t t = 0; t < s.tokens.size(); ++t) {
            const std::vector<int> prefix(s.tokens.begin(), s.tokens.begin() + static_cast<long>(t));
            const auto lp = next_token_log_probs(model, x, prefix, 1.0);
            double total = 0.0;
            for (double l : lp) {
                CHECK(std::exp(l) > 0.0);
                CHECK(std::exp(l) <= 1.0);
                total += std::exp(l);
            }
            CHECK(std::fabs(total - 1.0) < 1e-9);
            CHECK(s.step_log_probs[t] == Approx(lp[static_cast<std::size_t>(s.tokens[t])]).epsilon(1e-12));
            acc += s.step_log_probs[t];
        }
        CHECK(std::fabs(acc - s.sum_log_prob) < 1e-9);
        CHECK(s.sum_log_prob <= 0.0);
    }
}

TEST_CASE("sampling: fixed seed reproduces the sample; on-tape sampler agrees") {
    SummarizerModel model(tiny_vocab(), tiny_arch(), 10);
    const std::vector<int> x = {5, 6, 7, 8};
    Rng r1(42), r2(42), r3(42);
    const auto a = sample(model, x, 0.8, r1);
    const auto b = sample(model, x, 0.8, r2);
    CHECK(a.tokens == b.tokens);
    CHECK(a.sum_log_prob == b.sum_log_prob);

    diff::Tape t;
    Graph g(model, t);
    const auto enc = g.encode(x);
    const auto c = sample_on_tape(g, enc, 0.8, r3);
    CHECK(c.tokens == a.tokens);
    CHECK(c.sum_log_prob.scalar() == Approx(a.sum_log_prob).epsilon(1e-12));
}

TEST_CASE("argmax is invariant under temperature rescaling") {
    SummarizerModel model(tiny_vocab(), tiny_arch(), 12);
    const std::vector<int> x = {6, 7, 8};
    const auto greedy = greedy_decode(model, x);
    const int first = greedy.empty() ? text::kEos : greedy[0];
    for (double temp : {0.1, 1.0, 7.0}) {
        const auto lp = next_token_log_probs(model, x, {}, temp);
        const auto best = std::max_element(lp.begin(), lp.end()) - lp.begin();
        CHECK(best == first);
    }
}

TEST_CASE("memorizing a single cluster reproduces its reference") {
    ArchConfig arch = tiny_arch(16);
    arch.embedding_dim = 16;
    arch.hidden_dim = 24;
    arch.attention_dim = 12;
    SummarizerModel model(tiny_vocab(), arch, 5);
    const std::vector<corpus::OpinionCluster> train = {one_cluster()};
    SupervisedConfig cfg;
    cfg.epochs = 150;
    cfg.lr = 2e-2;
    cfg.batch_size = 1;
    cfg.warmup_fraction = 0.0;
    cfg.weight_decay = 0.0;
    const auto log = train_supervised(model, train, train, cfg);
    CHECK(log.epochs.back().train_loss < 0.1);
    CHECK(log.best_dev_loss < 0.1);
    const auto out = greedy_decode(model, model.input_ids(train[0]));
    CHECK(text::detokenize(out, model.vocab()) == train[0].reference.text());
}

TEST_CASE("supervised training: deterministic curves, best dev <= initial") {
    corpus::CorpusConfig cc;
    cc.train_clusters = 6;
    cc.dev_clusters = 3;
    cc.test_clusters = 1;
    cc.polarity_examples = cc.similarity_examples = cc.acceptability_examples = 10;
    const auto bundle = corpus::generate_corpus(cc, 3);
    const auto texts = bundle.all_texts();
    auto vocab = std::make_shared<const text::Vocab>(text::Vocab::build(texts, 1));
    ArchConfig arch = tiny_arch(40);
    arch.max_input_length = 256;
    SupervisedConfig cfg;
    cfg.epochs = 3;
    cfg.lr = 5e-3;
    cfg.batch_size = 4;
    cfg.seed = 9;
    auto run = [&] {
        SummarizerModel model(vocab, arch, 1);
        return train_supervised(model, bundle.train, bundle.dev, cfg);
    };
    const auto a = run();
    const auto b = run();
    REQUIRE(a.epochs.size() == 4);
    for (std::size_t i = 0; i < a.epochs.size(); ++i) {
        CHECK(a.epochs[i].train_loss == b.epochs[i].train_loss);
        CHECK(a.epochs[i].dev_loss == b.epochs[i].dev_loss);
    }
    CHECK(a.best_dev_loss <= a.epochs[0].dev_loss);
    for (const auto& e : a.epochs) CHECK(a.best_dev_loss <= e.dev_loss);
}

TEST_CASE("best checkpoint is restored after training") {
    corpus::CorpusConfig cc;
    cc.train_clusters = 4;
    cc.dev_clusters = 2;
    cc.test_clusters = 1;
    cc.polarity_examples = cc.similarity_examples = cc.acceptability_examples = 10;
    const auto bundle = corpus::generate_corpus(cc, 8);
    auto vocab = std::make_shared<const text::Vocab>(text::Vocab::build(bundle.all_texts(), 1));
    ArchConfig arch = tiny_arch(40);
    arch.max_input_length = 256;
    SummarizerModel model(vocab, arch, 2);
    SupervisedConfig cfg;
    cfg.epochs = 2;
    cfg.lr = 1e-2;
    cfg.batch_size = 2;
    const auto log = train_supervised(model, bundle.train, bundle.dev, cfg);
    CHECK(mean_nll(model, bundle.dev) == Approx(log.best_dev_loss).epsilon(1e-12));
}

TEST_CASE("learning-rate schedule warms up then decays linearly") {
    CHECK(scheduled_lr(0, 100, 10, 1.0) == Approx(0.1));
    CHECK(scheduled_lr(9, 100, 10, 1.0) == Approx(1.0));
    CHECK(scheduled_lr(10, 100, 10, 1.0) == Approx(1.0));
    CHECK(scheduled_lr(55, 100, 10, 1.0) == Approx(0.5));
    CHECK(scheduled_lr(99, 100, 10, 1.0) == Approx(1.0 / 90.0));
    CHECK(scheduled_lr(0, 10, 0, 2.0) == Approx(2.0));
}

TEST_CASE("invalid training configs are rejected") {
    SummarizerModel model(tiny_vocab(), tiny_arch(), 1);
    SupervisedConfig cfg;
    cfg.batch_size = 0;
    CHECK_THROWS_AS(train_supervised(model, {one_cluster()}, {}, cfg), ConfigError);
    CHECK_THROWS_AS(train_supervised(model, {}, {}, SupervisedConfig{}), DataError);
    ArchConfig bad = tiny_arch();
    bad.max_summary_length = 0;
    CHECK_THROWS_AS(SummarizerModel(tiny_vocab(), bad, 1), ConfigError);
}

TEST_CASE("checkpoint with architecture sidecar round-trips") {
    SummarizerModel model(tiny_vocab(), tiny_arch(), 13);
    const auto path = std::filesystem::temp_directory_path() / "poca_summ_test.ckpt";
    model.save(path);
    const auto loaded = SummarizerModel::load(path, model.vocab_ptr());
    CHECK(loaded.arch() == model.arch());
    CHECK(loaded.params().same_values(model.params()));
    const std::vector<int> x = {5, 6, 7};
    CHECK(greedy_decode(loaded, x) == greedy_decode(model, x));
}
