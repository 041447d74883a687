#pragma once

#include "fedstgd/tensor.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace fedstgd {

/// Reverse-mode differentiation over a closed set of matrix primitives.
///
/// Every call records one node and evaluates it eagerly. Leaves are either
/// constants or parameters; only parameters receive gradients. A tape is
/// confined to the thread that builds it.
class Tape {
public:
    struct Var {
        std::size_t id = std::numeric_limits<std::size_t>::max();
        bool valid() const { return id != std::numeric_limits<std::size_t>::max(); }
    };

    using Gradients = std::map<std::size_t, Tensor>;

    Var constant(Tensor value);
    Var parameter(Tensor value);

    const Tensor& value(Var v) const;
    bool is_parameter(Var v) const;
    bool requires_grad(Var v) const;
    std::size_t size() const { return nodes_.size(); }

    /// Overwrites a leaf; call replay() to refresh downstream values.
    void set_leaf(Var leaf, Tensor value);
    /// Re-executes every recorded operation from the current leaf values.
    void replay();

    Var matmul(Var a, Var b);
    Var transpose(Var a);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var hadamard(Var a, Var b);
    Var scale(Var a, double factor);
    /// `s` must hold one value; returns s·m.
    Var scale_by(Var s, Var m);
    /// Adds a 1×c row to every row of `a`.
    Var add_row(Var a, Var bias);
    Var concat_cols(Var a, Var b);
    Var slice_cols(Var a, std::size_t begin, std::size_t end);
    Var slice_rows(Var a, std::size_t begin, std::size_t end);
    Var reshape(Var a, Dims dims);
    Var sigmoid(Var a);
    Var tanh(Var a);
    Var relu(Var a);
    Var leaky_relu(Var a);
    Var activation(std::string_view name, Var a);
    Var softmax_rows(Var a);
    Var gamma_map(Var w, Var v);
    Var sum(Var a);
    Var mean(Var a);
    Var abs(Var a);
    /// out[n,:] = u[n,:] · reshape(w[n,:], u.cols() × out_cols).
    Var rowwise_vecmat(Var u, Var w, std::size_t out_cols);
    /// Value is `value`; the backward pass routes the incoming gradient to
    /// `live` unchanged. `live` must have the same extents.
    Var straight_through(Tensor value, Var live);

    /// Gradients of a scalar node with respect to every parameter leaf that
    /// it depends on, keyed by leaf id.
    Gradients backward(Var loss) const;

private:
    enum class Op : std::uint8_t {
        Constant, Parameter, MatMul, Transpose, Add, Sub, Hadamard, Scale, ScaleBy, AddRow,
        ConcatCols, SliceCols, SliceRows, Reshape, Sigmoid, Tanh, Relu, LeakyRelu,
        SoftmaxRows, GammaMap, Sum, Mean, Abs, RowwiseVecMat, StraightThrough,
    };

    struct Node {
        Op op = Op::Constant;
        std::size_t lhs = 0;
        std::size_t rhs = 0;
        double factor = 0.0;
        std::size_t begin = 0;
        std::size_t end = 0;
        Dims shape;
        Tensor value;
        Tensor pinned; // straight-through forward value
        bool grad = false;
    };

    Var record(Node node);
    Tensor evaluate(const Node& node) const;
    const Node& node(Var v) const;

    std::vector<Node> nodes_;
};

/// A loss builder: records a scalar loss on `tape` from the given parameter
/// leaves.
using TapeLoss = std::function<Tape::Var(Tape& tape, std::span<const Tape::Var> params)>;

/// Compares tape gradients against central differences with step `eps`.
/// Returns max over coordinates of |analytic - numeric| / max(1, |numeric|).
double finite_diff_check(const TapeLoss& loss, const std::vector<Tensor>& params, double eps);

} // namespace fedstgd
