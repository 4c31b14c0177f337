#include "poca/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include "poca/common.hpp"

namespace poca::diff {

namespace {

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " + b.shape_str());
}

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const std::string& why) {
    throw ShapeError(std::string(op) + ": shape " + a.shape_str() + " " + why);
}

void check_same_tape(Var a, Var b) {
    if (a.tape != b.tape || a.tape == nullptr) throw std::invalid_argument("vars recorded on different tapes");
}

#ifndef NDEBUG
void check_finite(const char* op, const Tensor& t) {
    for (double v : t.values()) {
        if (!std::isfinite(v)) throw std::domain_error(std::string(op) + ": non-finite output");
    }
}
#else
void check_finite(const char*, const Tensor&) {}
#endif

template <typename Fwd, typename Deriv>
Var unary(const char* name, Var a, Fwd fwd, Deriv deriv_from_out) {
    const Tensor& x = a.value();
    Tensor out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
    check_finite(name, out);
    return a.tape->record(std::move(out), {a}, [a, deriv_from_out](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        const Tensor& x = t.value(a.id);
        Tensor& ga = t.grad_mut(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv_from_out(x[i], y[i]);
    });
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
    if (data_.size() != rows * cols) {
        throw ShapeError("Tensor: " + std::to_string(data_.size()) + " values for shape [" +
                         std::to_string(rows) + "x" + std::to_string(cols) + "]");
    }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string Tensor::shape_str() const { return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]"; }

// ---- ParamStore ------------------------------------------------------------

ParamStore::ParamStore(const ParamStore& other) : index_(other.index_), step_(other.step_) {
    params_.reserve(other.params_.size());
    for (const auto& p : other.params_) params_.push_back(std::make_unique<Parameter>(*p));
}

ParamStore& ParamStore::operator=(const ParamStore& other) {
    if (this != &other) {
        ParamStore copy(other);
        *this = std::move(copy);
    }
    return *this;
}

Parameter& ParamStore::add(const std::string& name, std::size_t rows, std::size_t cols) {
    if (index_.count(name) != 0) throw std::invalid_argument("ParamStore: duplicate parameter '" + name + "'");
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->value = Tensor(rows, cols);
    p->grad = Tensor(rows, cols);
    p->moment1 = Tensor(rows, cols);
    p->moment2 = Tensor(rows, cols);
    index_.emplace(name, params_.size());
    params_.push_back(std::move(p));
    return *params_.back();
}

Parameter& ParamStore::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("ParamStore: no parameter '" + name + "'");
    return *params_[it->second];
}

const Parameter& ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("ParamStore: no parameter '" + name + "'");
    return *params_[it->second];
}

std::size_t ParamStore::num_values() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
}

std::vector<Parameter*> ParamStore::all() {
    std::vector<Parameter*> out;
    for (auto& p : params_) out.push_back(p.get());
    return out;
}

std::vector<const Parameter*> ParamStore::all() const {
    std::vector<const Parameter*> out;
    for (const auto& p : params_) out.push_back(p.get());
    return out;
}

void ParamStore::zero_grad() {
    for (auto& p : params_) p->grad.fill(0.0);
}

double ParamStore::grad_norm() const {
    double sq = 0.0;
    for (const auto& p : params_) {
        for (double g : p->grad.values()) sq += g * g;
    }
    return std::sqrt(sq);
}

double ParamStore::clip_grad_norm(double max_norm) {
    const double norm = grad_norm();
    if (max_norm > 0.0 && norm > max_norm) {
        const double f = max_norm / norm;
        for (auto& p : params_) {
            for (double& g : p->grad.values()) g *= f;
        }
    }
    return norm;
}

bool ParamStore::grads_finite() const {
    for (const auto& p : params_) {
        for (double g : p->grad.values()) {
            if (!std::isfinite(g)) return false;
        }
    }
    return true;
}

void ParamStore::init_normal(std::uint64_t seed, double scale) {
    for (auto& p : params_) {
        Rng rng(seed ^ fnv1a64(p->name));
        for (double& v : p->value.values()) v = scale * rng.normal();
    }
}

void ParamStore::reset_optimizer() {
    for (auto& p : params_) {
        p->moment1.fill(0.0);
        p->moment2.fill(0.0);
    }
    step_ = 0;
}

void ParamStore::copy_values_from(const ParamStore& other) {
    for (auto& p : params_) {
        const Parameter& src = other.get(p->name);
        if (src.value.rows() != p->value.rows() || src.value.cols() != p->value.cols()) {
            throw ShapeError("copy_values_from: shape mismatch for '" + p->name + "'");
        }
        p->value = src.value;
    }
}

bool ParamStore::same_values(const ParamStore& other) const {
    if (other.params_.size() != params_.size()) return false;
    for (const auto& p : params_) {
        if (!other.contains(p->name) || !(other.get(p->name).value == p->value)) return false;
    }
    return true;
}

// ---- Tape ------------------------------------------------------------------

const Tensor& Var::value() const { return tape->value(id); }

double Var::scalar() const {
    const Tensor& v = value();
    if (v.size() != 1) shape_fail("scalar", v, "is not 1x1");
    return v[0];
}

Var Tape::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::scalar(double value) { return constant(Tensor(1, 1, value)); }

Var Tape::param(Parameter& p) {
    Node n;
    n.param = &p;
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::frozen(const Parameter& p) {
    Node n;
    n.ref = &p.value;
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

const Tensor& Tape::value(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.param != nullptr) return n.param->value;
    return n.ref != nullptr ? *n.ref : n.value;
}

const Tensor& Tape::grad(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.param != nullptr ? n.param->grad : n.grad;
}

Tensor& Tape::grad_mut(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.param != nullptr) return n.param->grad;
    if (n.grad.empty()) {
        const Tensor& v = n.value;
        n.grad = Tensor(v.rows(), v.cols());
    }
    return n.grad;
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, std::function<void(Tape&, int)> back) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(back));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, std::function<void(Tape&, int)> back) {
    Node n;
    n.value = std::move(value);
    for (const Var& v : inputs) {
        if (v.tape != this) throw std::invalid_argument("op input recorded on a different tape");
        if (nodes_[static_cast<std::size_t>(v.id)].requires_grad) n.requires_grad = true;
    }
    if (n.requires_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size() - 1)};
}

void Tape::backward(Var loss) {
    if (loss.tape != this) throw std::invalid_argument("backward: loss on a different tape");
    const Tensor& lv = value(loss.id);
    if (lv.size() != 1) shape_fail("backward", lv, "is not a scalar loss");
    if (!requires_grad(loss.id)) return;
    if (nodes_[static_cast<std::size_t>(loss.id)].param != nullptr) {
        nodes_[static_cast<std::size_t>(loss.id)].param->grad[0] += 1.0;
        return;
    }
    grad_mut(loss.id)[0] += 1.0;
    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.param != nullptr || !n.back || n.grad.empty()) continue;
        n.back(*this, id);
    }
}

// ---- ops -------------------------------------------------------------------

Var matmul(Var a, Var b) {
    check_same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.cols() != B.rows()) shape_fail("matmul", A, B);
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    Tensor out(m, n);
    for (std::size_t i = 0; i < m; ++i) {
        double* o = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = A[i * k + p];
            if (av == 0.0) continue;
            const double* brow = B.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) o[j] += av * brow[j];
        }
    }
    check_finite("matmul", out);
    return a.tape->record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, int self) {
        const Tensor& G = t.grad(self);
        const Tensor& A = t.value(a.id);
        const Tensor& B = t.value(b.id);
        if (t.requires_grad(a.id)) {
            Tensor& GA = t.grad_mut(a.id);
            for (std::size_t i = 0; i < m; ++i) {
                const double* g = G.data() + i * n;
                for (std::size_t p = 0; p < k; ++p) {
                    const double* brow = B.data() + p * n;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += g[j] * brow[j];
                    GA[i * k + p] += acc;
                }
            }
        }
        if (t.requires_grad(b.id)) {
            Tensor& GB = t.grad_mut(b.id);
            for (std::size_t i = 0; i < m; ++i) {
                const double* g = G.data() + i * n;
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = A[i * k + p];
                    if (av == 0.0) continue;
                    double* gb = GB.data() + p * n;
                    for (std::size_t j = 0; j < n; ++j) gb[j] += av * g[j];
                }
            }
        }
    });
}

Var add(Var a, Var b) {
    check_same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.rows() != B.rows() || A.cols() != B.cols()) shape_fail("add", A, B);
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        for (Var v : {a, b}) {
            if (!t.requires_grad(v.id)) continue;
            Tensor& gv = t.grad_mut(v.id);
            for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
        }
    });
}

Var add_row(Var a, Var b) {
    check_same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (B.rows() != 1 || A.cols() != B.cols()) shape_fail("add_row", A, B);
    const std::size_t m = A.rows(), n = A.cols();
    Tensor out = A;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] += B[j];
    }
    return a.tape->record(std::move(out), {a, b}, [a, b, m, n](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        if (t.requires_grad(a.id)) {
            Tensor& ga = t.grad_mut(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.requires_grad(b.id)) {
            Tensor& gb = t.grad_mut(b.id);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
            }
        }
    });
}

Var sub(Var a, Var b) {
    check_same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.rows() != B.rows() || A.cols() != B.cols()) shape_fail("sub", A, B);
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        if (t.requires_grad(a.id)) {
            Tensor& ga = t.grad_mut(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.requires_grad(b.id)) {
            Tensor& gb = t.grad_mut(b.id);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
    });
}

Var mul(Var a, Var b) {
    check_same_tape(a, b);
    const Tensor& A = a.value();
    const Tensor& B = b.value();
    if (A.rows() != B.rows() || A.cols() != B.cols()) shape_fail("mul", A, B);
    Tensor out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
    return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        const Tensor& A = t.value(a.id);
        const Tensor& B = t.value(b.id);
        if (t.requires_grad(a.id)) {
            Tensor& ga = t.grad_mut(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
        }
        if (t.requires_grad(b.id)) {
            Tensor& gb = t.grad_mut(b.id);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
        }
    });
}

Var scale(Var a, double factor) {
    return unary("scale", a, [factor](double x) { return factor * x; },
                 [factor](double, double) { return factor; });
}

Var one_minus(Var a) {
    return unary("one_minus", a, [](double x) { return 1.0 - x; }, [](double, double) { return -1.0; });
}

Var exp(Var a) {
    return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var tanh(Var a) {
    return unary("tanh", a, [](double x) { return std::tanh(x); },
                 [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
    return unary("sigmoid", a,
                 [](double x) {
                     if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
                     const double e = std::exp(x);
                     return e / (1.0 + e);
                 },
                 [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
    return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var abs(Var a) {
    return unary("abs", a, [](double x) { return std::fabs(x); },
                 [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var embedding(Var table, int index) {
    const Tensor& T = table.value();
    if (index < 0 || static_cast<std::size_t>(index) >= T.rows()) {
        shape_fail("embedding", T, "has no row " + std::to_string(index));
    }
    const std::size_t n = T.cols();
    const std::size_t row = static_cast<std::size_t>(index);
    Tensor out(1, n);
    std::copy_n(T.data() + row * n, n, out.data());
    return table.tape->record(std::move(out), {table}, [table, row, n](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        double* gt = t.grad_mut(table.id).data() + row * n;
        for (std::size_t j = 0; j < n; ++j) gt[j] += g[j];
    });
}

Var concat(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    Tape* tape = parts[0].tape;
    const std::size_t m = parts[0].rows();
    std::size_t total = 0;
    for (const Var& p : parts) {
        if (p.tape != tape) throw std::invalid_argument("concat: inputs on different tapes");
        if (p.rows() != m) shape_fail("concat", parts[0].value(), p.value());
        total += p.cols();
    }
    Tensor out(m, total);
    std::size_t offset = 0;
    for (const Var& p : parts) {
        const Tensor& v = p.value();
        for (std::size_t i = 0; i < m; ++i) {
            std::copy_n(v.data() + i * v.cols(), v.cols(), out.data() + i * total + offset);
        }
        offset += v.cols();
    }
    std::vector<Var> inputs(parts.begin(), parts.end());
    return tape->record(std::move(out), parts, [inputs, m, total](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        std::size_t off = 0;
        for (const Var& p : inputs) {
            const std::size_t c = t.value(p.id).cols();
            if (t.requires_grad(p.id)) {
                Tensor& gp = t.grad_mut(p.id);
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t j = 0; j < c; ++j) gp[i * c + j] += g[i * total + off + j];
                }
            }
            off += c;
        }
    });
}

Var concat(std::initializer_list<Var> parts) { return concat(std::span<const Var>(parts.begin(), parts.size())); }

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
    const Tensor& A = a.value();
    if (begin + count > A.cols() || count == 0) {
        shape_fail("slice_cols", A, "cannot slice [" + std::to_string(begin) + ", +" + std::to_string(count) + ")");
    }
    const std::size_t m = A.rows(), n = A.cols();
    Tensor out(m, count);
    for (std::size_t i = 0; i < m; ++i) std::copy_n(A.data() + i * n + begin, count, out.data() + i * count);
    return a.tape->record(std::move(out), {a}, [a, begin, count, m, n](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        Tensor& ga = t.grad_mut(a.id);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < count; ++j) ga[i * n + begin + j] += g[i * count + j];
        }
    });
}

Var stack_rows(std::span<const Var> rows) {
    if (rows.empty()) throw ShapeError("stack_rows: no inputs");
    Tape* tape = rows[0].tape;
    const std::size_t n = rows[0].cols();
    Tensor out(rows.size(), n);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const Tensor& r = rows[i].value();
        if (rows[i].tape != tape) throw std::invalid_argument("stack_rows: inputs on different tapes");
        if (r.rows() != 1 || r.cols() != n) shape_fail("stack_rows", rows[0].value(), r);
        std::copy_n(r.data(), n, out.data() + i * n);
    }
    std::vector<Var> inputs(rows.begin(), rows.end());
    return tape->record(std::move(out), rows, [inputs, n](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            if (!t.requires_grad(inputs[i].id)) continue;
            Tensor& gr = t.grad_mut(inputs[i].id);
            for (std::size_t j = 0; j < n; ++j) gr[j] += g[i * n + j];
        }
    });
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
    const Tensor& A = a.value();
    if (rows * cols != A.size()) shape_fail("reshape", A, "cannot become " + Tensor(rows, cols).shape_str());
    Tensor out(rows, cols, std::vector<double>(A.values().begin(), A.values().end()));
    return a.tape->record(std::move(out), {a}, [a](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        Tensor& ga = t.grad_mut(a.id);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

Var mean_rows(Var a) {
    const Tensor& A = a.value();
    if (A.rows() == 0) shape_fail("mean_rows", A, "has no rows");
    const std::size_t m = A.rows(), n = A.cols();
    Tensor out(1, n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) out[j] += A[i * n + j];
    }
    for (std::size_t j = 0; j < n; ++j) out[j] /= static_cast<double>(m);
    return a.tape->record(std::move(out), {a}, [a, m, n](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        Tensor& ga = t.grad_mut(a.id);
        const double inv = 1.0 / static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j] * inv;
        }
    });
}

Var max_rows(Var a) {
    const Tensor& A = a.value();
    if (A.rows() == 0) shape_fail("max_rows", A, "has no rows");
    const std::size_t m = A.rows(), n = A.cols();
    Tensor out(1, n);
    std::vector<std::size_t> arg(n, 0);
    for (std::size_t j = 0; j < n; ++j) {
        out[j] = A[j];
        for (std::size_t i = 1; i < m; ++i) {
            if (A[i * n + j] > out[j]) {
                out[j] = A[i * n + j];
                arg[j] = i;
            }
        }
    }
    return a.tape->record(std::move(out), {a}, [a, arg, n](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        Tensor& ga = t.grad_mut(a.id);
        for (std::size_t j = 0; j < n; ++j) ga[arg[j] * n + j] += g[j];
    });
}

Var softmax(Var a) {
    const Tensor& A = a.value();
    const std::size_t m = A.rows(), n = A.cols();
    Tensor out(m, n);
    for (std::size_t i = 0; i < m; ++i) {
        const double* x = A.data() + i * n;
        double* y = out.data() + i * n;
        const double mx = *std::max_element(x, x + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += (y[j] = std::exp(x[j] - mx));
        for (std::size_t j = 0; j < n; ++j) y[j] /= z;
    }
    return a.tape->record(std::move(out), {a}, [a, m, n](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        Tensor& ga = t.grad_mut(a.id);
        for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
        }
    });
}

Var log_softmax(Var a) {
    const Tensor& A = a.value();
    const std::size_t m = A.rows(), n = A.cols();
    Tensor out(m, n);
    for (std::size_t i = 0; i < m; ++i) {
        const double* x = A.data() + i * n;
        double* y = out.data() + i * n;
        const double mx = *std::max_element(x, x + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += std::exp(x[j] - mx);
        const double lse = mx + std::log(z);
        for (std::size_t j = 0; j < n; ++j) y[j] = x[j] - lse;
    }
    return a.tape->record(std::move(out), {a}, [a, m, n](Tape& t, int self) {
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        Tensor& ga = t.grad_mut(a.id);
        for (std::size_t i = 0; i < m; ++i) {
            double gs = 0.0;
            for (std::size_t j = 0; j < n; ++j) gs += g[i * n + j];
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i * n + j] - std::exp(y[i * n + j]) * gs;
        }
    });
}

Var cross_entropy(Var logits, int target) {
    const Tensor& L = logits.value();
    if (L.rows() != 1) shape_fail("cross_entropy", L, "is not a single row");
    if (target < 0 || static_cast<std::size_t>(target) >= L.cols()) {
        shape_fail("cross_entropy", L, "has no class " + std::to_string(target));
    }
    const std::size_t n = L.cols();
    const double mx = *std::max_element(L.data(), L.data() + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(L[j] - mx);
    const double lse = mx + std::log(z);
    Tensor out(1, 1, lse - L[static_cast<std::size_t>(target)]);
    return logits.tape->record(std::move(out), {logits}, [logits, target, n, lse](Tape& t, int self) {
        const double g = t.grad(self)[0];
        const Tensor& L = t.value(logits.id);
        Tensor& gl = t.grad_mut(logits.id);
        for (std::size_t j = 0; j < n; ++j) gl[j] += g * std::exp(L[j] - lse);
        gl[static_cast<std::size_t>(target)] -= g;
    });
}

Var bce_with_logits(Var logit, double target) {
    const Tensor& L = logit.value();
    if (L.size() != 1) shape_fail("bce_with_logits", L, "is not 1x1");
    const double x = L[0];
    // log(1 + e^x) - t x, stable for large |x|.
    const double loss = std::max(x, 0.0) - target * x + std::log1p(std::exp(-std::fabs(x)));
    return logit.tape->record(Tensor(1, 1, loss), {logit}, [logit, target](Tape& t, int self) {
        const double g = t.grad(self)[0];
        const double x = t.value(logit.id)[0];
        const double p = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        t.grad_mut(logit.id)[0] += g * (p - target);
    });
}

Var pick(Var a, std::size_t index) {
    const Tensor& A = a.value();
    if (index >= A.size()) shape_fail("pick", A, "has no element " + std::to_string(index));
    return a.tape->record(Tensor(1, 1, A[index]), {a}, [a, index](Tape& t, int self) {
        t.grad_mut(a.id)[index] += t.grad(self)[0];
    });
}

Var sum(Var a) {
    const Tensor& A = a.value();
    const double s = std::accumulate(A.values().begin(), A.values().end(), 0.0);
    return a.tape->record(Tensor(1, 1, s), {a}, [a](Tape& t, int self) {
        const double g = t.grad(self)[0];
        for (double& v : t.grad_mut(a.id).values()) v += g;
    });
}

Var mean(Var a) {
    const std::size_t n = a.value().size();
    if (n == 0) shape_fail("mean", a.value(), "is empty");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var add_all(std::span<const Var> scalars) {
    if (scalars.empty()) throw ShapeError("add_all: no inputs");
    Tape* tape = scalars[0].tape;
    double s = 0.0;
    for (const Var& v : scalars) {
        if (v.tape != tape) throw std::invalid_argument("add_all: inputs on different tapes");
        if (v.value().size() != 1) shape_fail("add_all", v.value(), "is not 1x1");
        s += v.value()[0];
    }
    std::vector<Var> inputs(scalars.begin(), scalars.end());
    return tape->record(Tensor(1, 1, s), scalars, [inputs](Tape& t, int self) {
        const double g = t.grad(self)[0];
        for (const Var& v : inputs) {
            if (t.requires_grad(v.id)) t.grad_mut(v.id)[0] += g;
        }
    });
}

// ---- optimizer -------------------------------------------------------------

void adamw_step(ParamStore& store, const AdamWOptions& o) {
    const auto step = static_cast<double>(store.advance_step());
    const double bc1 = 1.0 - std::pow(o.beta1, step);
    const double bc2 = 1.0 - std::pow(o.beta2, step);
    for (Parameter* p : store.all()) {
        double* w = p->value.data();
        double* g = p->grad.data();
        double* m = p->moment1.data();
        double* v = p->moment2.data();
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            w[i] -= o.lr * o.weight_decay * w[i];
            m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
            v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= o.lr * mhat / (std::sqrt(vhat) + o.eps);
            g[i] = 0.0;
        }
    }
}

// ---- gradient verification -------------------------------------------------

double finite_diff_check(const std::function<Var(Tape&)>& loss_fn, ParamStore& params, double eps,
                         std::size_t max_coords, std::uint64_t seed) {
    if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_check: eps must be positive");
    std::vector<std::pair<Parameter*, std::size_t>> coords;
    for (Parameter* p : params.all()) {
        for (std::size_t i = 0; i < p->value.size(); ++i) coords.emplace_back(p, i);
    }
    if (coords.empty()) return 0.0;
    if (max_coords > 0 && coords.size() > max_coords) {
        Rng rng(seed);
        rng.shuffle(coords);
        coords.resize(max_coords);
    }

    std::vector<Tensor> saved;
    for (Parameter* p : params.all()) saved.push_back(p->grad);
    params.zero_grad();
    {
        Tape tape;
        tape.backward(loss_fn(tape));
    }
    std::map<const Parameter*, Tensor> analytic;
    for (Parameter* p : params.all()) analytic[p] = p->grad;

    auto eval = [&] {
        Tape tape;
        return loss_fn(tape).scalar();
    };
    double worst = 0.0;
    for (auto [p, i] : coords) {
        const double orig = p->value[i];
        p->value[i] = orig + eps;
        const double fp = eval();
        p->value[i] = orig - eps;
        const double fm = eval();
        p->value[i] = orig;
        const double numeric = (fp - fm) / (2.0 * eps);
        const double a = analytic[p][i];
        const double err = std::fabs(a - numeric) / std::max(1e-12, std::fabs(a) + std::fabs(numeric));
        worst = std::max(worst, err);
    }
    auto all = params.all();
    for (std::size_t k = 0; k < all.size(); ++k) all[k]->grad = saved[k];
    return worst;
}

std::vector<TensorGradCheck> finite_diff_report(const std::function<Var(Tape&)>& loss_fn, ParamStore& params,
                                                double eps, std::size_t coords_per_tensor, std::uint64_t seed) {
    if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_report: eps must be positive");
    auto all = params.all();
    std::vector<Tensor> saved;
    for (Parameter* p : all) saved.push_back(p->grad);
    params.zero_grad();
    {
        Tape tape;
        tape.backward(loss_fn(tape));
    }
    std::vector<Tensor> analytic;
    for (Parameter* p : all) analytic.push_back(p->grad);

    auto eval = [&] {
        Tape tape;
        return loss_fn(tape).scalar();
    };
    Rng rng(seed);
    std::vector<TensorGradCheck> out;
    for (std::size_t k = 0; k < all.size(); ++k) {
        Parameter* p = all[k];
        std::vector<std::size_t> idx(p->value.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        if (coords_per_tensor > 0 && idx.size() > coords_per_tensor) {
            rng.shuffle(idx);
            idx.resize(coords_per_tensor);
        }
        TensorGradCheck r{p->name, idx.size(), 0.0, 0.0, 0.0};
        double diff_sq = 0.0, a_sq = 0.0, n_sq = 0.0;
        for (std::size_t i : idx) {
            const double orig = p->value[i];
            p->value[i] = orig + eps;
            const double fp = eval();
            p->value[i] = orig - eps;
            const double fm = eval();
            p->value[i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = analytic[k][i];
            diff_sq += (a - numeric) * (a - numeric);
            a_sq += a * a;
            n_sq += numeric * numeric;
            r.max_abs_error = std::max(r.max_abs_error, std::fabs(a - numeric));
            r.max_elementwise_error = std::max(
                r.max_elementwise_error, std::fabs(a - numeric) / std::max(1e-12, std::fabs(a) + std::fabs(numeric)));
        }
        r.relative_error = std::sqrt(diff_sq) / std::max(1e-300, std::sqrt(a_sq) + std::sqrt(n_sq));
        out.push_back(r);
    }
    for (std::size_t k = 0; k < all.size(); ++k) all[k]->grad = saved[k];
    return out;
}

// ---- checkpoints -----------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'P', 'O', 'C', 'A', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
        throw DataError("checkpoint " + path.string() + ": truncated");
    }
    return v;
}

}  // namespace

void save_checkpoint(const ParamStore& store, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kVersion);
    put<std::uint64_t>(out, store.count());
    for (const Parameter* p : store.all()) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
        out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        put<std::uint64_t>(out, p->value.rows());
        put<std::uint64_t>(out, p->value.cols());
        out.write(reinterpret_cast<const char*>(p->value.data()),
                  static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

void load_checkpoint(ParamStore& store, const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read checkpoint " + path.string());
    char magic[8];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw DataError("checkpoint " + path.string() + ": bad magic");
    }
    const auto version = get<std::uint32_t>(in, path);
    if (version != kVersion) {
        throw DataError("checkpoint " + path.string() + ": unsupported version " + std::to_string(version));
    }
    const auto count = get<std::uint64_t>(in, path);
    if (count != store.count()) {
        throw DataError("checkpoint " + path.string() + ": has " + std::to_string(count) +
                        " parameters, model expects " + std::to_string(store.count()));
    }
    std::vector<std::pair<Parameter*, Tensor>> staged;
    for (std::uint64_t k = 0; k < count; ++k) {
        const auto len = get<std::uint32_t>(in, path);
        std::string name(len, '\0');
        if (!in.read(name.data(), len)) throw DataError("checkpoint " + path.string() + ": truncated");
        const auto rows = get<std::uint64_t>(in, path);
        const auto cols = get<std::uint64_t>(in, path);
        if (!store.contains(name)) throw DataError("checkpoint " + path.string() + ": unknown parameter '" + name + "'");
        Parameter& p = store.get(name);
        if (p.value.rows() != rows || p.value.cols() != cols) {
            throw DataError("checkpoint " + path.string() + ": shape mismatch for '" + name + "': file [" +
                            std::to_string(rows) + "x" + std::to_string(cols) + "], model " + p.value.shape_str());
        }
        Tensor t(rows, cols);
        if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)))) {
            throw DataError("checkpoint " + path.string() + ": truncated");
        }
        staged.emplace_back(&p, std::move(t));
    }
    for (auto& [p, t] : staged) p->value = std::move(t);
}

}  // namespace poca::diff
