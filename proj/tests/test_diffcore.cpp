#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <vector>

#include "poca/common.hpp"
#include "poca/diffcore.hpp"

using namespace poca;
using namespace poca::diff;
using Catch::Approx;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng) {
    Tensor t(r, c);
    for (double& v : t.values()) v = rng.uniform(-1.0, 1.0);
    return t;
}

}  // namespace

TEST_CASE("softmax of equal logits is uniform") {
    Tape tape;
    const Var s = softmax(tape.constant(Tensor(1, 2, 0.0)));
    CHECK(s.value()[0] == Approx(0.5));
    CHECK(s.value()[1] == Approx(0.5));
}

TEST_CASE("softmax sums to one and log_softmax matches log(softmax)") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        Tape tape;
        Tensor x = random_tensor(3, 7, rng);
        for (double& v : x.values()) v *= 20.0;
        const Var a = tape.constant(x);
        const Tensor& s = softmax(a).value();
        const Tensor& ls = log_softmax(a).value();
        for (std::size_t i = 0; i < 3; ++i) {
            double total = 0.0;
            for (std::size_t j = 0; j < 7; ++j) {
                total += s.at(i, j);
                if (s.at(i, j) > 1e-300) CHECK(std::fabs(ls.at(i, j) - std::log(s.at(i, j))) < 1e-10);
            }
            CHECK(std::fabs(total - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("cross-entropy of uniform logits is ln V") {
    for (int v : {2, 5, 37}) {
        for (int target = 0; target < v; target += 3) {
            Tape tape;
            CHECK(cross_entropy(tape.constant(Tensor(1, v, 0.7)), target).scalar() == Approx(std::log(v)));
        }
    }
}

TEST_CASE("matmul matches a naive triple loop") {
    Rng rng(17);
    const Tensor A = random_tensor(3, 4, rng);
    const Tensor B = random_tensor(4, 2, rng);
    Tape tape;
    const Tensor& C = matmul(tape.constant(A), tape.constant(B)).value();
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 2; ++j) {
            double ref = 0.0;
            for (std::size_t k = 0; k < 4; ++k) ref += A.at(i, k) * B.at(k, j);
            CHECK(std::fabs(C.at(i, j) - ref) < 1e-12);
        }
    }
}

TEST_CASE("shape mismatch names the op and shapes") {
    Tape tape;
    const Var a = tape.constant(Tensor(2, 3));
    const Var b = tape.constant(Tensor(2, 3));
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("[2x3]") != std::string::npos);
    }
    CHECK_THROWS_AS(add(a, tape.constant(Tensor(3, 2))), ShapeError);
}

TEST_CASE("backward of sum gives all ones; unreachable params get zero") {
    ParamStore store;
    Parameter& p = store.add("p", 2, 3);
    store.add("unused", 1, 4);
    p.value.fill(0.3);
    Tape tape;
    tape.backward(sum(tape.param(p)));
    for (double g : p.grad.values()) CHECK(g == 1.0);
    for (double g : store.get("unused").grad.values()) CHECK(g == 0.0);
}

TEST_CASE("backward of cross-entropy is softmax minus one-hot") {
    Rng rng(9);
    ParamStore store;
    Parameter& logits = store.add("logits", 1, 6);
    logits.value = random_tensor(1, 6, rng);
    Tape tape;
    const Var l = tape.param(logits);
    tape.backward(cross_entropy(l, 4));
    Tape probe;
    const Tensor& s = softmax(probe.constant(logits.value)).value();
    for (std::size_t j = 0; j < 6; ++j) {
        CHECK(std::fabs(logits.grad[j] - (s[j] - (j == 4 ? 1.0 : 0.0))) < 1e-12);
    }
}

TEST_CASE("backward rejects a non-scalar loss") {
    ParamStore store;
    Parameter& p = store.add("p", 1, 2);
    Tape tape;
    CHECK_THROWS_AS(tape.backward(tape.param(p)), ShapeError);
}

TEST_CASE("finite-difference check on a quadratic") {
    ParamStore store;
    Parameter& w = store.add("w", 1, 5);
    Rng rng(1);
    w.value = random_tensor(1, 5, rng);
    const double err = finite_diff_check([&](Tape& t) {
        const Var x = t.param(w);
        return sum(mul(x, x));
    }, store, 1e-5);
    CHECK(err < 1e-8);
}

TEST_CASE("per-tensor finite-difference report") {
    ParamStore store;
    Parameter& w = store.add("w", 2, 5);
    Parameter& b = store.add("b", 1, 3);
    Rng rng(4);
    w.value = random_tensor(2, 5, rng);
    b.value = random_tensor(1, 3, rng);
    const auto rows = finite_diff_report([&](Tape& t) {
        return add(sum(mul(t.param(w), t.param(w))), sum(tanh(t.param(b))));
    }, store, 1e-5, 4, 9);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].name == "w");
    CHECK(rows[0].coords == 4);
    CHECK(rows[1].coords == 3);
    for (const auto& r : rows) {
        CHECK(r.relative_error < 1e-8);
        CHECK(r.max_abs_error < 1e-8);
    }
    CHECK(w.grad.values()[0] == 0.0);
}

TEST_CASE("finite-difference check with no parameters is zero") {
    ParamStore store;
    CHECK(finite_diff_check([](Tape& t) { return t.scalar(1.0); }, store, 1e-5) == 0.0);
}

TEST_CASE("every primitive passes a finite-difference check") {
    Rng rng(23);
    ParamStore store;
    Parameter& a = store.add("a", 3, 4);
    Parameter& b = store.add("b", 4, 3);
    Parameter& r = store.add("r", 1, 3);
    Parameter& e = store.add("e", 5, 4);
    for (Parameter* p : store.all()) p->value = random_tensor(p->value.rows(), p->value.cols(), rng);

    const double err = finite_diff_check([&](Tape& t) {
        const Var A = t.param(a), B = t.param(b), R = t.param(r), E = t.param(e);
        const Var ab = matmul(A, B);                          // 3x3
        const Var h = tanh(add_row(ab, R));                   // 3x3
        const Var s = sigmoid(sub(h, mul(h, h)));             // 3x3
        const Var attn = softmax(reshape(slice_cols(s, 1, 1), 1, 3));
        const Var ctx = matmul(attn, h);                      // 1x3
        const Var emb = embedding(E, 2);                      // 1x4
        const Var row = concat({ctx, emb, one_minus(R)});     // 1x10
        const Var pooled = add(mean_rows(stack_rows(std::vector<Var>{row, scale(row, 0.5)})),
                               max_rows(stack_rows(std::vector<Var>{relu(row), abs(row)})));
        const Var ce = cross_entropy(pooled, 3);
        const Var lsm = pick(log_softmax(pooled), 7);
        const Var bce = bce_with_logits(pick(pooled, 1), 0.3);
        const Var ex = sum(exp(scale(h, 0.5)));
        const Var terms[] = {ce, lsm, bce, mean(s), ex};
        return add_all(terms);
    }, store, 1e-5);
    CHECK(err < 1e-6);
}

TEST_CASE("AdamW: zero gradient and zero decay leave parameters unchanged") {
    ParamStore store;
    Parameter& p = store.add("p", 2, 2);
    p.value.fill(0.7);
    const Tensor before = p.value;
    adamw_step(store, {.lr = 0.1, .weight_decay = 0.0});
    CHECK(p.value == before);
}

TEST_CASE("AdamW: first step with constant unit gradient moves by lr/(1+eps)") {
    ParamStore store;
    Parameter& p = store.add("p", 1, 1);
    p.value[0] = 2.0;
    p.grad[0] = 1.0;
    const AdamWOptions opts{.lr = 0.1, .weight_decay = 0.0};
    adamw_step(store, opts);
    CHECK(std::fabs((2.0 - p.value[0]) - 0.1 / (1.0 + opts.eps)) < 1e-15);
    CHECK(p.grad[0] == 0.0);
}

TEST_CASE("AdamW: decoupled decay shrinks by (1 - lr*wd) under zero gradient") {
    ParamStore store;
    Parameter& p = store.add("p", 1, 3);
    p.value = Tensor(1, 3, {1.0, -2.0, 0.5});
    adamw_step(store, {.lr = 0.1, .weight_decay = 1e-2});
    CHECK(p.value[0] == Approx(1.0 * (1 - 0.1 * 1e-2)).epsilon(1e-14));
    CHECK(p.value[1] == Approx(-2.0 * (1 - 0.1 * 1e-2)).epsilon(1e-14));
}

TEST_CASE("forward and backward are deterministic") {
    Rng rng(4);
    ParamStore store;
    Parameter& w = store.add("w", 4, 4);
    w.value = random_tensor(4, 4, rng);
    auto run = [&] {
        store.zero_grad();
        Tape t;
        const Var x = t.param(w);
        const Var loss = sum(tanh(matmul(x, x)));
        t.backward(loss);
        return std::make_pair(loss.scalar(), w.grad);
    };
    const auto r1 = run();
    const auto r2 = run();
    CHECK(r1.first == r2.first);
    CHECK(r1.second == r2.second);
}

TEST_CASE("checkpoint round-trip and shape rejection") {
    Rng rng(2);
    ParamStore store;
    store.add("a", 2, 3).value = random_tensor(2, 3, rng);
    store.add("b", 1, 4).value = random_tensor(1, 4, rng);
    const auto path = std::filesystem::temp_directory_path() / "poca_ckpt_test.bin";
    save_checkpoint(store, path);

    ParamStore loaded;
    loaded.add("a", 2, 3);
    loaded.add("b", 1, 4);
    load_checkpoint(loaded, path);
    CHECK(loaded.same_values(store));

    ParamStore wrong;
    wrong.add("a", 3, 2);
    wrong.add("b", 1, 4);
    CHECK_THROWS_AS(load_checkpoint(wrong, path), DataError);
    std::filesystem::remove(path);
}
