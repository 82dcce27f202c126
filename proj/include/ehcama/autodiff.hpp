#pragma once

// Dense row-major tensors with a reverse-mode differentiation tape and Adam.
//
// Every value is a 2-D matrix; a vector is a 1 x n (or n x 1) matrix. A Tape
// records primitive operations in execution order, so reverse iteration is a
// valid topological order for backpropagation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ehcama/errors.hpp"

namespace ehcama::ad {

class Tensor {
public:
    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
    Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Tensor row(std::initializer_list<double> values);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    std::string shape_string() const;
    bool same_shape(const Tensor &other) const { return rows_ == other.rows_ && cols_ == other.cols_; }

    double &operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double &operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    const std::vector<double> &values() const { return data_; }

    void fill(double v);
    bool operator==(const Tensor &other) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// A named leaf tensor owned by a network. `grad` stays empty until a
/// backward pass reaches the parameter while `requires_grad` is set.
struct Parameter {
    std::string name;
    Tensor value;
    std::optional<Tensor> grad;
    bool requires_grad = true;

    void zero_grad() { grad.reset(); }
};

class Tape;

/// Handle to a value recorded on a tape.
class Var {
public:
    Var() = default;
    Var(Tape *tape, std::size_t id) : tape_(tape), id_(id) {}

    const Tensor &value() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    bool requires_grad() const;
    Tape *tape() const { return tape_; }
    std::size_t id() const { return id_; }

private:
    Tape *tape_ = nullptr;
    std::size_t id_ = 0;
};

enum class Binding { trainable, frozen };

class Tape {
public:
    using BackwardFn = std::function<void(Tape &, std::size_t self)>;

    Tape() = default;
    Tape(const Tape &) = delete;
    Tape &operator=(const Tape &) = delete;

    Var constant(Tensor value);
    /// Leaf whose gradient is readable through grad() after backward.
    Var input(Tensor value, bool requires_grad = true);
    /// Binds a parameter. Frozen bindings (or parameters with requires_grad
    /// unset) take part in the forward pass only.
    Var parameter(Parameter &param, Binding binding = Binding::trainable);

    Var record(Tensor value, bool requires_grad, BackwardFn backward);

    const Tensor &value(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    /// Gradient buffer of a node during/after backward. Only valid for nodes
    /// that require gradients.
    Tensor &grad(std::size_t id) { return nodes_[id].grad; }
    const Tensor &grad(Var v) const { return nodes_[v.id()].grad; }

    /// Backpropagates d(loss)/d(node) through every recorded node, then adds
    /// leaf gradients into their bound parameters. Repeated calls accumulate
    /// into parameters.
    void backward(Var loss);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        BackwardFn backward;
        Parameter *param = nullptr;
    };
    std::vector<Node> nodes_;
};

// ---- primitives ----------------------------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
/// x[r x c] + bias[1 x c] applied to every row.
Var add_bias(Var x, Var bias);
Var tanh(Var x);
Var sigmoid(Var x);
Var exp(Var x);
Var log(Var x);
Var square(Var x);
/// Elementwise clamp; the gradient is passed only where lo < x < hi.
Var clamp(Var x, double lo, double hi);
Var minimum(Var a, Var b);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var x, std::size_t start, std::size_t count);
/// r x c -> r x 1
Var row_sum(Var x);
/// -> 1 x 1
Var sum(Var x);
Var mean(Var x);

struct MaskedSoftmax {
    Var probs;
    /// Rows whose mask was entirely false. Such rows are all zero.
    std::vector<bool> empty_rows;
};

/// Row-wise softmax restricted to entries whose mask byte is nonzero.
/// `mask` has one byte per logit.
MaskedSoftmax masked_softmax(Var logits, std::span<const std::uint8_t> mask);

/// Multi-head masked dot-product attention over batched blocks.
///
/// queries: [batch*n_query x heads*head_dim], keys/values: [batch*n_key x
/// heads*head_dim], mask: batch*n_query*n_key bytes. For each block b, query
/// row i and head h the logits are q_{b,i,h} . k_{b,j,h} over masked-in j;
/// the output is the softmax-weighted sum of v_{b,j,h}. A query without any
/// masked-in key yields a zero output row for every head.
Var attend(Var queries, Var keys, Var values, std::span<const std::uint8_t> mask, std::size_t batch,
           std::size_t heads);

struct GaussianSample {
    Var sample;
    /// Diagonal Gaussian log-density of `sample`, summed over columns: r x 1.
    Var log_density;
};

/// Reparameterized draw u = mu + exp(log_sigma) * noise.
GaussianSample gaussian_rsample(Var mu, Var log_sigma, const Tensor &noise);

// ---- optimization --------------------------------------------------------

struct AdamOptions {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

class Adam {
public:
    Adam(std::vector<Parameter *> params, AdamOptions options = {});

    /// One bias-corrected Adam update over every parameter, then clears their
    /// gradients. Throws ContractViolation naming a parameter without a
    /// gradient.
    void step();

    std::uint64_t step_count() const { return step_count_; }
    const AdamOptions &options() const { return options_; }
    const std::vector<Tensor> &first_moment() const { return m_; }
    const std::vector<Tensor> &second_moment() const { return v_; }

private:
    std::vector<Parameter *> params_;
    AdamOptions options_;
    std::uint64_t step_count_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

/// Scales all gradients so their joint L2 norm is at most max_norm. Returns
/// the norm measured before scaling.
double clip_grad_norm(std::span<Parameter *const> params, double max_norm);

} // namespace ehcama::ad
