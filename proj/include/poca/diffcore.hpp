#pragma once

// Dense 2-D tensors with tape-based reverse-mode differentiation, a named
// parameter store, and a decoupled-weight-decay Adam optimizer.
//
// A Tape records one forward pass. Parameter leaves reference the values in a
// ParamStore directly; backward() accumulates into the store's gradients, so
// several tapes can contribute to one optimizer step.

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace poca::diff {

class ShapeError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

class Tensor {
   public:
    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Tensor(std::size_t rows, std::size_t cols, std::vector<double> values);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }
    std::vector<std::size_t> shape() const { return {rows_, cols_}; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    void fill(double v);
    std::string shape_str() const;

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

   private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor moment1;
    Tensor moment2;
};

class ParamStore {
   public:
    ParamStore() = default;
    // Tapes hold raw pointers into the store; keep it at a fixed address.
    ParamStore(const ParamStore& other);
    ParamStore& operator=(const ParamStore& other);
    ParamStore(ParamStore&&) noexcept = default;
    ParamStore& operator=(ParamStore&&) noexcept = default;

    Parameter& add(const std::string& name, std::size_t rows, std::size_t cols);
    Parameter& get(const std::string& name);
    const Parameter& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t count() const { return params_.size(); }
    std::size_t num_values() const;
    std::uint64_t step() const { return step_; }

    // Stable order: insertion order.
    std::vector<Parameter*> all();
    std::vector<const Parameter*> all() const;

    void zero_grad();
    double grad_norm() const;
    /// Rescales gradients so their global norm is at most max_norm; returns
    /// the norm before clipping.
    double clip_grad_norm(double max_norm);
    bool grads_finite() const;

    /// Fills every parameter with N(0, scale^2) draws, keyed on the seed.
    void init_normal(std::uint64_t seed, double scale);
    void reset_optimizer();

    /// Copies values only; shapes must match.
    void copy_values_from(const ParamStore& other);
    bool same_values(const ParamStore& other) const;

    std::uint64_t advance_step() { return ++step_; }

   private:
    std::vector<std::unique_ptr<Parameter>> params_;
    std::map<std::string, std::size_t> index_;
    std::uint64_t step_ = 0;
};

class Tape;

struct Var {
    Tape* tape = nullptr;
    int id = -1;

    const Tensor& value() const;
    double scalar() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
};

class Tape {
   public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var scalar(double value);
    Var param(Parameter& p);
    /// Leaf that reads a parameter's value without recording gradients.
    Var frozen(const Parameter& p);

    const Tensor& value(int id) const;
    const Tensor& grad(int id) const;
    Tensor& grad_mut(int id);
    bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

    /// Populates gradients of a 1x1 loss: parameter leaves accumulate into
    /// their ParamStore, intermediate nodes into tape-local buffers.
    void backward(Var loss);

    std::size_t size() const { return nodes_.size(); }

    // Op construction. `inputs` determine requires_grad of the result.
    Var record(Tensor value, std::initializer_list<Var> inputs, std::function<void(Tape&, int)> back);
    Var record(Tensor value, std::span<const Var> inputs, std::function<void(Tape&, int)> back);

   private:
    struct Node {
        Tensor value;
        Tensor grad;
        Parameter* param = nullptr;
        const Tensor* ref = nullptr;
        bool requires_grad = false;
        std::function<void(Tape&, int)> back;
    };
    // deque: values stay addressable while later ops are recorded.
    std::deque<Node> nodes_;
};

// ---- primitive ops ---------------------------------------------------------
// Row vectors are 1xN tensors. Ops throw ShapeError naming the op and shapes.

Var matmul(Var a, Var b);
Var add(Var a, Var b);
/// a (m x n) + b (1 x n) broadcast over rows.
Var add_row(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var one_minus(Var a);
Var exp(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var abs(Var a);
/// Row `index` of an embedding table, as a 1 x cols vector.
Var embedding(Var table, int index);
/// Column-wise concatenation; all inputs share the row count.
Var concat(std::span<const Var> parts);
Var concat(std::initializer_list<Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
/// Stacks 1 x n rows into an m x n matrix.
Var stack_rows(std::span<const Var> rows);
Var reshape(Var a, std::size_t rows, std::size_t cols);
Var mean_rows(Var a);
Var max_rows(Var a);
/// Row-wise softmax and log-softmax.
Var softmax(Var a);
Var log_softmax(Var a);
/// -log softmax(logits)[target] for a 1 x V row.
Var cross_entropy(Var logits, int target);
/// Binary cross-entropy of sigmoid(logit) against a target in [0, 1].
Var bce_with_logits(Var logit, double target);
Var pick(Var a, std::size_t index);
Var sum(Var a);
Var mean(Var a);
Var add_all(std::span<const Var> scalars);

// ---- optimization ----------------------------------------------------------

struct AdamWOptions {
    double lr = 1e-3;
    double weight_decay = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One decoupled-weight-decay Adam update; gradients are zeroed afterwards.
void adamw_step(ParamStore& store, const AdamWOptions& options);

/// Max over sampled coordinates of |analytic - central difference| /
/// max(1e-12, |analytic| + |numeric|). `max_coords` 0 checks every coordinate.
double finite_diff_check(const std::function<Var(Tape&)>& loss_fn, ParamStore& params, double eps,
                         std::size_t max_coords = 0, std::uint64_t seed = 0);

struct TensorGradCheck {
    std::string name;
    std::size_t coords = 0;
    /// ||analytic - numeric|| / (||analytic|| + ||numeric||) over the checked coordinates.
    double relative_error = 0.0;
    double max_abs_error = 0.0;
    double max_elementwise_error = 0.0;
};

/// Per-parameter comparison of analytic and central-difference gradients on
/// up to `coords_per_tensor` sampled coordinates of each tensor (0 = all).
std::vector<TensorGradCheck> finite_diff_report(const std::function<Var(Tape&)>& loss_fn, ParamStore& params,
                                                double eps, std::size_t coords_per_tensor = 0,
                                                std::uint64_t seed = 0);

// ---- checkpoints -----------------------------------------------------------

/// Binary format: magic "POCACKPT", u32 version, u64 count, then per
/// parameter: u32 name length, name bytes, u64 rows, u64 cols, f64 values.
void save_checkpoint(const ParamStore& store, const std::filesystem::path& path);
/// Loads into an existing store; names and shapes must match exactly.
void load_checkpoint(ParamStore& store, const std::filesystem::path& path);

}  // namespace poca::diff
