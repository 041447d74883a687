#include "fedstgd/errors.hpp"
#include "fedstgd/random.hpp"
#include "fedstgd/tape.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace fedstgd;
using Var = Tape::Var;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0)
{
    const CounterRng rng(seed, r * 131 + c);
    Tensor t = Tensor::zeros(r, c);
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = scale * rng.normal(i);
    }
    return t;
}

// Reduce any matrix to a scalar with a fixed random weighting so every
// output coordinate contributes a distinct gradient.
Var weighted_sum(Tape& tape, Var m)
{
    const Tensor& v = tape.value(m);
    const Tensor w = random_matrix(v.rows(), v.cols(), 999).reshaped(v.dims());
    return tape.sum(tape.hadamard(m, tape.constant(w)));
}

constexpr double kEps = 1e-5;
constexpr double kTol = 1e-4;

} // namespace

TEST(Tape, SigmoidGradientAtZeroIsQuarter)
{
    Tape tape;
    const Var x = tape.parameter(Tensor::row({0.0}));
    const Var loss = tape.sum(tape.sigmoid(x));
    const auto grads = tape.backward(loss);
    ASSERT_EQ(grads.count(x.id), 1u);
    EXPECT_DOUBLE_EQ(grads.at(x.id)[0], 0.25);
}

TEST(Tape, ConstantLeavesGetNoGradient)
{
    Tape tape;
    const Var c = tape.constant(Tensor::row({1.0, 2.0}));
    const auto grads = tape.backward(tape.sum(c));
    EXPECT_TRUE(grads.empty());
}

TEST(Tape, BackwardNeedsScalarOnTape)
{
    Tape tape;
    const Var x = tape.parameter(Tensor::row({1.0, 2.0}));
    EXPECT_THROW(tape.backward(x), UsageError);
    EXPECT_THROW(tape.backward(Var{}), UsageError);
    EXPECT_THROW(tape.backward(Var{42}), UsageError);
}

TEST(Tape, ReplayIsBitExact)
{
    Tape tape;
    const Var a = tape.parameter(random_matrix(3, 4, 1));
    const Var b = tape.parameter(random_matrix(4, 2, 2));
    const Var out = tape.softmax_rows(tape.tanh(tape.matmul(a, b)));
    const Tensor first = tape.value(out);
    tape.replay();
    EXPECT_TRUE(tape.value(out).identical(first));

    tape.set_leaf(a, random_matrix(3, 4, 3));
    tape.replay();
    EXPECT_FALSE(tape.value(out).identical(first));
    tape.set_leaf(a, random_matrix(3, 4, 1));
    tape.replay();
    EXPECT_TRUE(tape.value(out).identical(first));
}

TEST(FiniteDiff, QuadraticIsExact)
{
    const double err = finite_diff_check(
        [](Tape& tape, std::span<const Var> p) { return tape.sum(tape.hadamard(p[0], p[0])); },
        {Tensor::row({3.0})}, kEps);
    EXPECT_LE(err, 1e-10);
}

TEST(FiniteDiff, ConstantFunctionHasZeroGradients)
{
    const double err = finite_diff_check(
        [](Tape& tape, std::span<const Var>) { return tape.sum(tape.constant(Tensor::row({4.0}))); },
        {Tensor::row({1.0, 2.0})}, kEps);
    EXPECT_EQ(err, 0.0);
}

TEST(FiniteDiff, RejectsBadEpsAndNonFiniteLoss)
{
    const TapeLoss id = [](Tape& tape, std::span<const Var> p) { return tape.sum(p[0]); };
    EXPECT_THROW(finite_diff_check(id, {Tensor::row({1.0})}, 0.0), UsageError);
    const TapeLoss blow = [](Tape& tape, std::span<const Var> p) {
        return tape.sum(tape.scale(p[0], std::numeric_limits<double>::infinity()));
    };
    EXPECT_THROW(finite_diff_check(blow, {Tensor::row({1.0})}, kEps), NumericError);
}

struct PrimitiveCase {
    const char* name;
    std::vector<Tensor> params;
    TapeLoss loss;
};

class PrimitiveGradient : public ::testing::TestWithParam<int> {};

std::vector<PrimitiveCase> primitive_cases()
{
    std::vector<PrimitiveCase> cases;
    auto unary = [&](const char* name, auto op) {
        cases.push_back({name, {random_matrix(3, 4, 10)},
                         [op](Tape& t, std::span<const Var> p) { return weighted_sum(t, op(t, p[0])); }});
    };
    unary("transpose", [](Tape& t, Var a) { return t.transpose(a); });
    unary("scale", [](Tape& t, Var a) { return t.scale(a, -2.5); });
    unary("slice_cols", [](Tape& t, Var a) { return t.slice_cols(a, 1, 3); });
    unary("slice_rows", [](Tape& t, Var a) { return t.slice_rows(a, 1, 3); });
    unary("reshape", [](Tape& t, Var a) { return t.reshape(a, {2, 6}); });
    unary("sigmoid", [](Tape& t, Var a) { return t.sigmoid(a); });
    unary("tanh", [](Tape& t, Var a) { return t.tanh(a); });
    unary("relu", [](Tape& t, Var a) { return t.relu(a); });
    unary("leaky_relu", [](Tape& t, Var a) { return t.leaky_relu(a); });
    unary("softmax_rows", [](Tape& t, Var a) { return t.softmax_rows(a); });
    unary("abs", [](Tape& t, Var a) { return t.abs(a); });
    unary("mean", [](Tape& t, Var a) { return t.scale(t.mean(a), 3.0); });

    auto binary = [&](const char* name, Tensor a, Tensor b, auto op) {
        cases.push_back({name, {std::move(a), std::move(b)},
                         [op](Tape& t, std::span<const Var> p) { return weighted_sum(t, op(t, p[0], p[1])); }});
    };
    binary("matmul", random_matrix(3, 4, 11), random_matrix(4, 2, 12),
           [](Tape& t, Var a, Var b) { return t.matmul(a, b); });
    binary("add", random_matrix(3, 4, 13), random_matrix(3, 4, 14), [](Tape& t, Var a, Var b) { return t.add(a, b); });
    binary("sub", random_matrix(3, 4, 15), random_matrix(3, 4, 16), [](Tape& t, Var a, Var b) { return t.sub(a, b); });
    binary("hadamard", random_matrix(3, 4, 17), random_matrix(3, 4, 18),
           [](Tape& t, Var a, Var b) { return t.hadamard(a, b); });
    binary("scale_by", random_matrix(1, 1, 19), random_matrix(3, 4, 20),
           [](Tape& t, Var a, Var b) { return t.scale_by(a, b); });
    binary("add_row", random_matrix(3, 4, 21), random_matrix(1, 4, 22),
           [](Tape& t, Var a, Var b) { return t.add_row(a, b); });
    binary("concat_cols", random_matrix(3, 2, 23), random_matrix(3, 3, 24),
           [](Tape& t, Var a, Var b) { return t.concat_cols(a, b); });
    binary("gamma_map", random_matrix(3, 2, 25), random_matrix(3, 3, 26),
           [](Tape& t, Var a, Var b) { return t.gamma_map(a, b); });
    binary("rowwise_vecmat", random_matrix(3, 4, 27), random_matrix(3, 4 * 5, 28),
           [](Tape& t, Var a, Var b) { return t.rowwise_vecmat(a, b, 5); });
    cases.push_back({"straight_through", {random_matrix(2, 3, 29)}, [](Tape& t, std::span<const Var> p) {
                         // The pinned value is independent of p, yet the
                         // gradient is routed to p as if it were the identity.
                         const Var pinned = t.straight_through(t.value(p[0]), p[0]);
                         return weighted_sum(t, pinned);
                     }});
    cases.push_back({"composed", {random_matrix(4, 3, 30), random_matrix(4, 2, 31), random_matrix(6, 2, 32)},
                     [](Tape& t, std::span<const Var> p) {
                         const Var g = t.gamma_map(t.softmax_rows(p[0]), t.tanh(p[1]));
                         const Var mixed = t.matmul(t.matmul(g, t.transpose(g)), t.matmul(g, p[2]));
                         return t.mean(t.abs(t.sub(t.sigmoid(mixed), t.constant(Tensor::filled({4, 2}, 0.5)))));
                     }});
    return cases;
}

TEST_P(PrimitiveGradient, MatchesCentralDifferences)
{
    const auto cases = primitive_cases();
    const auto& c = cases.at(static_cast<std::size_t>(GetParam()));
    EXPECT_LE(finite_diff_check(c.loss, c.params, kEps), kTol) << c.name;
}

INSTANTIATE_TEST_SUITE_P(AllPrimitives, PrimitiveGradient,
                         ::testing::Range(0, static_cast<int>(primitive_cases().size())),
                         [](const ::testing::TestParamInfo<int>& info) {
                             return std::string(primitive_cases().at(static_cast<std::size_t>(info.param)).name);
                         });

TEST(Tape, StraightThroughKeepsPinnedValue)
{
    Tape tape;
    const Var live = tape.parameter(Tensor::row({1.0, 2.0}));
    const Var st = tape.straight_through(Tensor::row({5.0, 7.0}), live);
    EXPECT_TRUE(tape.value(st).identical(Tensor::row({5.0, 7.0})));
    EXPECT_THROW(tape.straight_through(Tensor::row({1.0}), live), ShapeError);
}

TEST(Tape, RowwiseVecMatShapeChecked)
{
    Tape tape;
    const Var u = tape.constant(Tensor::zeros(2, 3));
    const Var w = tape.constant(Tensor::zeros(2, 5));
    EXPECT_THROW(tape.rowwise_vecmat(u, w, 2), ShapeError);
}
