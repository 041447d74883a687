#include "fedstgd/tape.hpp"

#include "fedstgd/errors.hpp"

#include <algorithm>
#include <cmath>

namespace fedstgd {

namespace {

void accumulate(Tensor& into, Tensor delta)
{
    if (into.empty()) {
        into = std::move(delta);
        return;
    }
    double* dst = into.data();
    const double* src = delta.data();
    for (std::size_t i = 0; i < into.size(); ++i) {
        dst[i] += src[i];
    }
}

Tensor as_shape(Tensor t, const Dims& dims)
{
    if (t.dims() == dims) return t;
    return t.reshaped(dims);
}

/// Adds `g` into the block of `into` (shaped like `like`) that starts at
/// row `row0` and column `col0`.
void accumulate_block(Tensor& into, const Tensor& like, const Tensor& g, std::size_t row0, std::size_t col0)
{
    if (into.empty()) into = Tensor(like.dims());
    const std::size_t cols = like.cols();
    const std::size_t w = g.size() / g.rows();
    for (std::size_t r = 0; r < g.rows(); ++r) {
        double* dst = into.data() + (row0 + r) * cols + col0;
        const double* src = g.data() + r * w;
        for (std::size_t c = 0; c < w; ++c) dst[c] += src[c];
    }
}

} // namespace

const Tape::Node& Tape::node(Var v) const
{
    if (!v.valid() || v.id >= nodes_.size()) {
        throw UsageError("variable is not recorded on this tape");
    }
    return nodes_[v.id];
}

Tape::Var Tape::record(Node n)
{
    n.value = evaluate(n);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Tape::Var Tape::constant(Tensor value)
{
    Node n;
    n.op = Op::Constant;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Tape::Var Tape::parameter(Tensor value)
{
    Node n;
    n.op = Op::Parameter;
    n.value = std::move(value);
    n.grad = true;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

bool Tape::is_parameter(Var v) const { return node(v).op == Op::Parameter; }

bool Tape::requires_grad(Var v) const { return node(v).grad; }

void Tape::set_leaf(Var leaf, Tensor value)
{
    const Node& n = node(leaf);
    if (n.op != Op::Constant && n.op != Op::Parameter) {
        throw UsageError("set_leaf on a non-leaf node");
    }
    if (n.value.dims() != value.dims()) {
        throw ShapeError("set_leaf: extents differ");
    }
    nodes_[leaf.id].value = std::move(value);
}

void Tape::replay()
{
    for (auto& n : nodes_) {
        if (n.op != Op::Constant && n.op != Op::Parameter) {
            n.value = evaluate(n);
        }
    }
}

Tensor Tape::evaluate(const Node& n) const
{
    const Tensor& a = nodes_[n.lhs].value;
    switch (n.op) {
    case Op::Constant:
    case Op::Parameter: return n.value;
    case Op::MatMul: return fedstgd::matmul(a, nodes_[n.rhs].value);
    case Op::Transpose: return fedstgd::transpose(a);
    case Op::Add: return fedstgd::add(a, nodes_[n.rhs].value);
    case Op::Sub: return fedstgd::sub(a, nodes_[n.rhs].value);
    case Op::Hadamard: return fedstgd::hadamard(a, nodes_[n.rhs].value);
    case Op::Scale: return fedstgd::scale(a, n.factor);
    case Op::ScaleBy: return fedstgd::scale(nodes_[n.rhs].value, a[0]);
    case Op::AddRow: return fedstgd::add_row(a, nodes_[n.rhs].value);
    case Op::ConcatCols: return fedstgd::concat_cols(a, nodes_[n.rhs].value);
    case Op::SliceCols: return fedstgd::slice_cols(a, n.begin, n.end);
    case Op::SliceRows: return fedstgd::slice_rows(a, n.begin, n.end);
    case Op::Reshape: return a.reshaped(n.shape);
    case Op::Sigmoid: return fedstgd::activation("sigmoid", a);
    case Op::Tanh: return fedstgd::activation("tanh", a);
    case Op::Relu: return fedstgd::activation("relu", a);
    case Op::LeakyRelu: return fedstgd::activation("leaky_relu", a);
    case Op::SoftmaxRows: return fedstgd::softmax_rows(a);
    case Op::GammaMap: return fedstgd::gamma_map(a, nodes_[n.rhs].value);
    case Op::Sum: return Tensor::scalar(fedstgd::sum(a));
    case Op::Mean: return Tensor::scalar(fedstgd::mean(a));
    case Op::Abs: {
        Tensor out = a;
        for (double& v : out.values()) {
            v = std::abs(v);
        }
        return out;
    }
    case Op::RowwiseVecMat: {
        const Tensor& w = nodes_[n.rhs].value;
        const std::size_t rows = a.rows();
        const std::size_t in = a.cols();
        const std::size_t out_cols = n.end;
        Tensor out = Tensor::zeros(rows, out_cols);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* u = a.data() + r * in;
            const double* wr = w.data() + r * in * out_cols;
            double* o = out.data() + r * out_cols;
            for (std::size_t i = 0; i < in; ++i) {
                const double ui = u[i];
                const double* wi = wr + i * out_cols;
                for (std::size_t j = 0; j < out_cols; ++j) {
                    o[j] += ui * wi[j];
                }
            }
        }
        return out;
    }
    case Op::StraightThrough: return n.pinned;
    }
    throw UsageError("unknown tape op");
}

namespace {

bool any_grad(bool a, bool b) { return a || b; }

} // namespace

#define FEDSTGD_UNARY(name, opcode)            \
    Tape::Var Tape::name(Var a)                \
    {                                          \
        Node n;                                \
        n.op = Op::opcode;                     \
        n.lhs = a.id;                          \
        n.grad = node(a).grad;                 \
        return record(std::move(n));           \
    }

#define FEDSTGD_BINARY(name, opcode)                     \
    Tape::Var Tape::name(Var a, Var b)                   \
    {                                                    \
        Node n;                                          \
        n.op = Op::opcode;                               \
        n.lhs = a.id;                                    \
        n.rhs = b.id;                                    \
        n.grad = any_grad(node(a).grad, node(b).grad);   \
        return record(std::move(n));                     \
    }

FEDSTGD_BINARY(matmul, MatMul)
FEDSTGD_UNARY(transpose, Transpose)
FEDSTGD_BINARY(add, Add)
FEDSTGD_BINARY(sub, Sub)
FEDSTGD_BINARY(hadamard, Hadamard)
FEDSTGD_BINARY(scale_by, ScaleBy)
FEDSTGD_BINARY(add_row, AddRow)
FEDSTGD_BINARY(concat_cols, ConcatCols)
FEDSTGD_UNARY(sigmoid, Sigmoid)
FEDSTGD_UNARY(tanh, Tanh)
FEDSTGD_UNARY(relu, Relu)
FEDSTGD_UNARY(leaky_relu, LeakyRelu)
FEDSTGD_UNARY(softmax_rows, SoftmaxRows)
FEDSTGD_BINARY(gamma_map, GammaMap)
FEDSTGD_UNARY(sum, Sum)
FEDSTGD_UNARY(mean, Mean)
FEDSTGD_UNARY(abs, Abs)

#undef FEDSTGD_UNARY
#undef FEDSTGD_BINARY

Tape::Var Tape::scale(Var a, double factor)
{
    Node n;
    n.op = Op::Scale;
    n.lhs = a.id;
    n.factor = factor;
    n.grad = node(a).grad;
    return record(std::move(n));
}

Tape::Var Tape::slice_cols(Var a, std::size_t begin, std::size_t end)
{
    Node n;
    n.op = Op::SliceCols;
    n.lhs = a.id;
    n.begin = begin;
    n.end = end;
    n.grad = node(a).grad;
    return record(std::move(n));
}

Tape::Var Tape::slice_rows(Var a, std::size_t begin, std::size_t end)
{
    Node n;
    n.op = Op::SliceRows;
    n.lhs = a.id;
    n.begin = begin;
    n.end = end;
    n.grad = node(a).grad;
    return record(std::move(n));
}

Tape::Var Tape::reshape(Var a, Dims dims)
{
    Node n;
    n.op = Op::Reshape;
    n.lhs = a.id;
    n.shape = std::move(dims);
    n.grad = node(a).grad;
    return record(std::move(n));
}

Tape::Var Tape::activation(std::string_view name, Var a)
{
    if (name == "sigmoid") {
        return sigmoid(a);
    }
    if (name == "tanh") {
        return tanh(a);
    }
    if (name == "relu") {
        return relu(a);
    }
    if (name == "leaky_relu") {
        return leaky_relu(a);
    }
    throw ConfigError("unknown activation '" + std::string(name) + "'");
}

Tape::Var Tape::rowwise_vecmat(Var u, Var w, std::size_t out_cols)
{
    const Tensor& uv = node(u).value;
    const Tensor& wv = node(w).value;
    if (wv.rows() != uv.rows() || wv.cols() != uv.cols() * out_cols) {
        throw ShapeError("rowwise_vecmat: " + uv.shape_string() + " with " + wv.shape_string());
    }
    Node n;
    n.op = Op::RowwiseVecMat;
    n.lhs = u.id;
    n.rhs = w.id;
    n.end = out_cols;
    n.grad = node(u).grad || node(w).grad;
    return record(std::move(n));
}

Tape::Var Tape::straight_through(Tensor value, Var live)
{
    if (value.dims() != node(live).value.dims()) {
        throw ShapeError("straight_through: " + value.shape_string() + " vs "
                         + node(live).value.shape_string());
    }
    Node n;
    n.op = Op::StraightThrough;
    n.lhs = live.id;
    n.pinned = std::move(value);
    n.grad = node(live).grad;
    return record(std::move(n));
}

Tape::Gradients Tape::backward(Var loss) const
{
    const Node& root = node(loss);
    if (root.value.size() != 1) {
        throw UsageError("backward needs a scalar loss, got " + root.value.shape_string());
    }
    Gradients result;
    if (!root.grad) {
        return result;
    }

    std::vector<Tensor> grads(loss.id + 1);
    grads[loss.id] = Tensor::filled(root.value.dims(), 1.0);

    for (std::size_t id = loss.id + 1; id-- > 0;) {
        const Node& n = nodes_[id];
        if (!n.grad || grads[id].empty()) {
            continue;
        }
        const Tensor g = std::move(grads[id]);
        grads[id] = Tensor();
        if (n.op == Op::Parameter) {
            result.emplace(id, g);
            continue;
        }
        const Tensor& a = nodes_[n.lhs].value;
        const bool ga = nodes_[n.lhs].grad;
        const bool gb = n.rhs < nodes_.size() && nodes_[n.rhs].grad;
        auto push_a = [&](Tensor t) {
            if (ga) accumulate(grads[n.lhs], as_shape(std::move(t), a.dims()));
        };
        auto push_b = [&](Tensor t) {
            if (gb) accumulate(grads[n.rhs], as_shape(std::move(t), nodes_[n.rhs].value.dims()));
        };

        switch (n.op) {
        case Op::Constant:
        case Op::Parameter: break;
        case Op::MatMul: {
            const Tensor& b = nodes_[n.rhs].value;
            if (ga) push_a(matmul_nt(g, b));
            if (gb) push_b(matmul_tn(a, g));
            break;
        }
        case Op::Transpose: push_a(fedstgd::transpose(g)); break;
        case Op::Add:
            push_a(g);
            push_b(g);
            break;
        case Op::Sub:
            push_a(g);
            if (gb) push_b(fedstgd::scale(g, -1.0));
            break;
        case Op::Hadamard: {
            const Tensor& b = nodes_[n.rhs].value;
            if (ga) push_a(fedstgd::hadamard(g, as_shape(b, g.dims())));
            if (gb) push_b(fedstgd::hadamard(g, as_shape(a, g.dims())));
            break;
        }
        case Op::Scale: push_a(fedstgd::scale(g, n.factor)); break;
        case Op::ScaleBy: {
            const Tensor& m = nodes_[n.rhs].value;
            if (ga) {
                double s = 0.0;
                for (std::size_t i = 0; i < g.size(); ++i) {
                    s += g[i] * m[i];
                }
                push_a(Tensor(a.dims(), {s}));
            }
            if (gb) push_b(fedstgd::scale(g, a[0]));
            break;
        }
        case Op::AddRow: {
            push_a(g);
            if (gb) {
                const std::size_t c = g.cols();
                Tensor db = Tensor::zeros(1, c);
                for (std::size_t r = 0; r < g.rows(); ++r) {
                    for (std::size_t j = 0; j < c; ++j) {
                        db[j] += g[r * c + j];
                    }
                }
                push_b(std::move(db));
            }
            break;
        }
        case Op::ConcatCols: {
            const std::size_t ca = a.cols();
            if (ga) push_a(fedstgd::slice_cols(g, 0, ca));
            if (gb) push_b(fedstgd::slice_cols(g, ca, g.cols()));
            break;
        }
        case Op::SliceCols:
            if (ga) accumulate_block(grads[n.lhs], a, g, 0, n.begin);
            break;
        case Op::SliceRows:
            if (ga) accumulate_block(grads[n.lhs], a, g, n.begin, 0);
            break;
        case Op::Reshape: push_a(g.reshaped(a.dims())); break;
        case Op::Sigmoid: {
            Tensor d = g;
            for (std::size_t i = 0; i < d.size(); ++i) {
                const double y = n.value[i];
                d[i] *= y * (1.0 - y);
            }
            push_a(std::move(d));
            break;
        }
        case Op::Tanh: {
            Tensor d = g;
            for (std::size_t i = 0; i < d.size(); ++i) {
                const double y = n.value[i];
                d[i] *= 1.0 - y * y;
            }
            push_a(std::move(d));
            break;
        }
        case Op::Relu:
        case Op::LeakyRelu: {
            const double neg = n.op == Op::Relu ? 0.0 : 0.01;
            Tensor d = g;
            for (std::size_t i = 0; i < d.size(); ++i) {
                d[i] *= a[i] > 0.0 ? 1.0 : neg;
            }
            push_a(std::move(d));
            break;
        }
        case Op::SoftmaxRows: {
            Tensor d = g;
            const std::size_t c = g.cols();
            for (std::size_t r = 0; r < g.rows(); ++r) {
                const double* y = n.value.data() + r * c;
                double* dr = d.data() + r * c;
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    dot += dr[j] * y[j];
                }
                for (std::size_t j = 0; j < c; ++j) {
                    dr[j] = y[j] * (dr[j] - dot);
                }
            }
            push_a(std::move(d));
            break;
        }
        case Op::GammaMap: {
            const Tensor& v = nodes_[n.rhs].value;
            const std::size_t rows = a.rows();
            const std::size_t dw = a.cols();
            const std::size_t dv = v.cols();
            Tensor dw_out = Tensor::zeros(rows, dw);
            Tensor dv_out = Tensor::zeros(rows, dv);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* gr = g.data() + r * dw * dv;
                for (std::size_t k = 0; k < dw; ++k) {
                    for (std::size_t l = 0; l < dv; ++l) {
                        const double gk = gr[k * dv + l];
                        dw_out[r * dw + k] += gk * v[r * dv + l];
                        dv_out[r * dv + l] += gk * a[r * dw + k];
                    }
                }
            }
            push_a(std::move(dw_out));
            push_b(std::move(dv_out));
            break;
        }
        case Op::Sum: push_a(Tensor::filled(a.dims(), g[0])); break;
        case Op::Mean: push_a(Tensor::filled(a.dims(), g[0] / static_cast<double>(a.size()))); break;
        case Op::Abs: {
            Tensor d = g;
            for (std::size_t i = 0; i < d.size(); ++i) {
                d[i] *= a[i] > 0.0 ? 1.0 : (a[i] < 0.0 ? -1.0 : 0.0);
            }
            push_a(std::move(d));
            break;
        }
        case Op::RowwiseVecMat: {
            const Tensor& w = nodes_[n.rhs].value;
            const std::size_t rows = a.rows();
            const std::size_t in = a.cols();
            const std::size_t out_cols = n.end;
            if (ga) {
                Tensor du = Tensor::zeros(rows, in);
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* gr = g.data() + r * out_cols;
                    const double* wr = w.data() + r * in * out_cols;
                    for (std::size_t i = 0; i < in; ++i) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < out_cols; ++j) {
                            acc += gr[j] * wr[i * out_cols + j];
                        }
                        du[r * in + i] = acc;
                    }
                }
                push_a(std::move(du));
            }
            if (gb) {
                Tensor dw = Tensor::zeros(rows, in * out_cols);
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* gr = g.data() + r * out_cols;
                    const double* ur = a.data() + r * in;
                    double* dr = dw.data() + r * in * out_cols;
                    for (std::size_t i = 0; i < in; ++i) {
                        for (std::size_t j = 0; j < out_cols; ++j) {
                            dr[i * out_cols + j] = ur[i] * gr[j];
                        }
                    }
                }
                push_b(std::move(dw));
            }
            break;
        }
        case Op::StraightThrough: push_a(g); break;
        }
    }
    return result;
}

double finite_diff_check(const TapeLoss& loss, const std::vector<Tensor>& params, double eps)
{
    if (!(eps > 0.0)) {
        throw UsageError("finite_diff_check needs eps > 0");
    }
    auto evaluate = [&](const std::vector<Tensor>& values) {
        Tape tape;
        std::vector<Tape::Var> vars;
        vars.reserve(values.size());
        for (const auto& v : values) {
            vars.push_back(tape.parameter(v));
        }
        const Tape::Var out = loss(tape, vars);
        const double value = tape.value(out)[0];
        if (!std::isfinite(value)) {
            throw NumericError("finite_diff_check: non-finite loss");
        }
        return value;
    };

    Tape tape;
    std::vector<Tape::Var> vars;
    for (const auto& p : params) {
        vars.push_back(tape.parameter(p));
    }
    const Tape::Var out = loss(tape, vars);
    if (!std::isfinite(tape.value(out)[0])) {
        throw NumericError("finite_diff_check: non-finite loss");
    }
    const Tape::Gradients grads = tape.backward(out);

    double worst = 0.0;
    std::vector<Tensor> probe = params;
    for (std::size_t p = 0; p < params.size(); ++p) {
        const auto it = grads.find(vars[p].id);
        for (std::size_t i = 0; i < params[p].size(); ++i) {
            const double base = params[p][i];
            probe[p][i] = base + eps;
            const double up = evaluate(probe);
            probe[p][i] = base - eps;
            const double down = evaluate(probe);
            probe[p][i] = base;
            const double numeric = (up - down) / (2.0 * eps);
            const double analytic = it == grads.end() ? 0.0 : it->second[i];
            worst = std::max(worst, std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric)));
        }
    }
    return worst;
}

} // namespace fedstgd
