#pragma once

// Minimal reverse-mode automatic differentiation.
//
// A Graph is built fresh for every forward pass and thrown away after
// backward(). Nodes are appended in evaluation order, so insertion order is a
// valid topological order and backward simply walks the node list in reverse.

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "msfner/tensor.hpp"

namespace msfner {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while its Graph lives.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Tensor& grad() const;
    bool requires_grad() const;
    std::size_t id() const noexcept { return id_; }
    Graph* graph() const noexcept { return graph_; }

private:
    friend class Graph;
    Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

    Graph* graph_ = nullptr;
    std::size_t id_ = 0;
};

class Graph {
public:
    /// Receives the gradient flowing into the node; adds its contribution to
    /// the inputs through Graph::accumulate.
    using BackwardFn = std::function<void(Graph&, const Tensor& out_grad)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor value);
    Var parameter(Tensor value);

    /// Appends a derived node. `backward` is dropped when no input needs a
    /// gradient.
    Var add_node(Tensor value, std::span<const Var> inputs, BackwardFn backward);

    /// Adds `g` into the gradient buffer of `v` (no-op when `v` does not
    /// require a gradient).
    void accumulate(const Var& v, const Tensor& g);
    /// Mutable gradient buffer of `v`, allocated on first use; nullptr when
    /// `v` does not require a gradient.
    Tensor* grad_buffer(const Var& v);

    /// Reverse sweep from a scalar output. Gradients accumulate over fan-out.
    void backward(const Var& output);

    const Tensor& value(const Var& v) const { return nodes_[v.id_].value; }
    /// Gradient of the last backward() output w.r.t. `v` (zeros if untouched).
    const Tensor& grad(const Var& v) const;
    bool requires_grad(const Var& v) const { return nodes_[v.id_].requires_grad; }

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        mutable Tensor grad;
        mutable bool has_grad = false;
        bool requires_grad = false;
        BackwardFn backward;
    };

    Var push(Node node);
    void check_owner(const Var& v) const;

    std::vector<Node> nodes_;
};

/// Row index that gather_rows maps to an all-zero row.
inline constexpr std::size_t kPadRow = std::numeric_limits<std::size_t>::max();

namespace ops {

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
/// m x n plus a length-n vector added to every row.
Var add_row_broadcast(const Var& a, const Var& row);
/// m x n plus a length-m vector added to every column.
Var add_col_broadcast(const Var& a, const Var& col);
Var relu(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);

/// log sum exp over all entries, max-shifted.
Var logsumexp(const Var& a);
/// Per-row log sum exp of an m x n matrix; result has length m.
Var logsumexp_rows(const Var& a);
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);

/// Elementwise max over rows [first, last] of a matrix. Ties route the
/// gradient to the lowest row index.
Var max_pool_rows(const Var& a, std::size_t first, std::size_t last);
/// Rows of `table` selected by `rows`; kPadRow yields zeros.
Var gather_rows(const Var& table, std::span<const std::size_t> rows);
/// Side-by-side concatenation of matrices with equal row counts.
Var concat_cols(std::span<const Var> parts);
/// Stacks vectors (or matrices with equal column counts) vertically.
Var concat_rows(std::span<const Var> parts);

/// ||a - b||^2 for equally shaped inputs.
Var sq_dist(const Var& a, const Var& b);
/// Squared Euclidean distance between every row of a (m x d) and b (k x d).
Var pairwise_sq_dist(const Var& a, const Var& b);

Var sum(const Var& a);
Var mean(const Var& a);
/// Sum across columns; m x n gives a length-m vector.
Var sum_cols(const Var& a);

/// Inverted dropout with a mask drawn from `seed`; identity when !train.
Var dropout(const Var& a, double p, std::uint64_t seed, bool train);

}  // namespace ops

/// log sum exp of a plain vector with max-shift. Throws on empty or
/// non-finite input.
double log_sum_exp(std::span<const double> v);

}  // namespace msfner
