#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "pixrec/errors.hpp"
#include "pixrec/grad_check.hpp"
#include "pixrec/ops.hpp"
#include "test_util.hpp"

using namespace pixrec;
using pixrec::testing::random_tensor;

TEST(TensorTest, ShapeAndDataLengthMustAgree) {
  EXPECT_THROW(Tensor(Shape{2, 3}, std::vector<double>(5)), DimensionError);
  Tensor t(Shape{2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_FALSE(t.has_grad());
  t.enable_grad();
  EXPECT_EQ(t.grad().size(), t.size());
  EXPECT_THROW(t.reshaped(Shape{4}), DimensionError);
}

TEST(LogSumExpTest, WorkedValues) {
  Graph g(false);
  EXPECT_NEAR(log_sum_exp(g.constant(Tensor::from({2}, {0, 0}))).value().item(), std::log(2.0),
              1e-15);
  for (double c : {-7.5, 0.0, 3.25, 1e4}) {
    EXPECT_DOUBLE_EQ(log_sum_exp(g.constant(Tensor::from({1}, {c}))).value().item(), c);
  }
  const double big = log_sum_exp(g.constant(Tensor::from({2}, {1000, 1000}))).value().item();
  ASSERT_TRUE(std::isfinite(big));
  EXPECT_NEAR(big, 1000.0 + std::log(2.0), 1e-12);
}

TEST(LogSumExpTest, ShiftProperty) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> uc(-1e4, 1e4);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor v = random_tensor({7}, rng, -5, 5);
    const double c = uc(rng);
    Tensor shifted = v;
    for (double& x : shifted.data()) x += c;
    EXPECT_NEAR(log_sum_exp_row(shifted.data()) - c, log_sum_exp_row(v.data()), 1e-9);
  }
}

TEST(SoftmaxTest, WorkedValues) {
  Graph g(false);
  const Tensor u = softmax(g.constant(Tensor::from({4}, {0, 0, 0, 0}))).value();
  for (double p : u.data()) EXPECT_DOUBLE_EQ(p, 0.25);
  const Tensor h = softmax(g.constant(Tensor::from({2}, {1 + 123.4, 1 + 123.4}))).value();
  EXPECT_NEAR(h[0], 0.5, 1e-15);
  EXPECT_NEAR(h[1], 0.5, 1e-15);
  const Tensor t = softmax(g.constant(Tensor::from({2}, {std::log(3.0), 0}))).value();
  EXPECT_NEAR(t[0], 0.75, 1e-15);
  EXPECT_NEAR(t[1], 0.25, 1e-15);
}

TEST(SoftmaxTest, NormalisedAndShiftInvariant) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> uc(-1e3, 1e3);
  Graph g(false);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor v = random_tensor({3, 6}, rng, -20, 20);
    const double c = uc(rng);
    Tensor shifted = v;
    for (double& x : shifted.data()) x += c;
    const Tensor p = softmax(g.constant(v)).value();
    const Tensor q = softmax(g.constant(shifted)).value();
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < 6; ++k) {
        EXPECT_GE(p[r * 6 + k], 0.0);
        EXPECT_NEAR(p[r * 6 + k], q[r * 6 + k], 1e-9);
        s += p[r * 6 + k];
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(GradCheckTest, LinearLossIsNearlyExact) {
  std::mt19937_64 rng(1);
  Tensor x = random_tensor({10}, rng);
  const Tensor w = random_tensor({10}, rng);
  Tensor* params[] = {&x};
  const double err = grad_check(
      [&](Graph& g) { return sum(mul(g.param(x), g.input(w))); }, params, {.eps = 1e-4});
  EXPECT_LE(err, 1e-7);
}

TEST(GradCheckTest, SoftmaxCrossEntropy) {
  std::mt19937_64 rng(2);
  Tensor z = random_tensor({1, 5}, rng, -2, 2);
  const std::vector<std::int32_t> target{3};
  Tensor* params[] = {&z};
  const double err = grad_check(
      [&](Graph& g) { return cross_entropy(g.param(z), target); }, params, {.eps = 1e-5});
  EXPECT_LE(err, 1e-4);
}

TEST(GradCheckTest, ReluAwayFromKink) {
  std::mt19937_64 rng(3);
  const double eps = 1e-5;
  Tensor x = random_tensor({20}, rng, 10 * eps + 0.05, 1.0);
  for (std::size_t i = 0; i < x.size(); i += 2) x[i] = -x[i];
  Tensor* params[] = {&x};
  const double err = grad_check(
      [&](Graph& g) { return mean(relu(g.param(x))); }, params, {.eps = eps});
  EXPECT_LE(err, 1e-5);
}

TEST(GradCheckTest, RejectsNonFiniteLossAndBadEps) {
  Tensor x(Shape{1}, 1.0);
  Tensor* params[] = {&x};
  const LossFn inf_loss = [&](Graph& g) {
    return scale(g.param(x), std::numeric_limits<double>::infinity());
  };
  EXPECT_THROW(grad_check(inf_loss, params), NumericError);
  EXPECT_THROW(grad_check([&](Graph& g) { return sum(g.param(x)); }, params, {.eps = 1e-2}),
               ParameterError);
}

// Every differentiable op, checked through a random linear read-out so that no
// coordinate has a vanishing gradient by symmetry.
class OpGradTest : public ::testing::Test {
 protected:
  std::mt19937_64 rng{77};

  double check(Tensor& x, const std::function<Var(Graph&, const Var&)>& op, double eps = 1e-5) {
    Tensor readout;
    {
      Graph probe(false);
      readout = random_tensor(op(probe, probe.param(x)).shape(), rng, 0.5, 1.5);
    }
    Tensor* params[] = {&x};
    return grad_check(
        [&](Graph& g) { return sum(mul(op(g, g.param(x)), g.input(readout))); }, params,
        {.eps = eps});
  }
};

TEST_F(OpGradTest, Elementwise) {
  Tensor x = random_tensor({3, 4}, rng);
  Tensor y = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4}, rng);
  EXPECT_LE(check(x, [&](Graph& g, const Var& v) { return add(v, g.input(y)); }), 1e-4);
  EXPECT_LE(check(x, [&](Graph& g, const Var& v) { return sub(g.input(y), v); }), 1e-4);
  EXPECT_LE(check(x, [&](Graph& g, const Var& v) { return mul(v, g.input(y)); }), 1e-4);
  EXPECT_LE(check(x, [&](Graph&, const Var& v) { return mul(v, v); }), 1e-4);
  EXPECT_LE(check(x, [&](Graph&, const Var& v) { return scale(v, -2.5); }), 1e-4);
  EXPECT_LE(check(x, [&](Graph&, const Var& v) { return tanh(v); }), 1e-4);
  EXPECT_LE(check(x, [&](Graph&, const Var& v) { return sigmoid(v); }), 1e-4);
  EXPECT_LE(check(x, [&](Graph& g, const Var& v) { return add_bias(v, g.input(b)); }), 1e-4);
  EXPECT_LE(check(b, [&](Graph& g, const Var& v) { return add_bias(g.input(x), v); }), 1e-4);
}

TEST_F(OpGradTest, ShapeOpsAndReductions) {
  Tensor x = random_tensor({2, 3, 4}, rng);
  Tensor y = random_tensor({2, 3, 2}, rng);
  EXPECT_LE(check(x, [](Graph&, const Var& v) { return reshape(v, {6, 4}); }), 1e-4);
  EXPECT_LE(check(x, [](Graph&, const Var& v) { return slice_last(v, 1, 3); }), 1e-4);
  EXPECT_LE(check(x, [&](Graph& g, const Var& v) { return concat_last({g.input(y), v, v}); }),
            1e-4);
  EXPECT_LE(check(x, [](Graph&, const Var& v) { return sum(v); }), 1e-4);
  EXPECT_LE(check(x, [](Graph&, const Var& v) { return mean(v); }), 1e-4);
  Tensor a = random_tensor({3, 5}, rng);
  Tensor m = random_tensor({5, 2}, rng);
  EXPECT_LE(check(a, [&](Graph& g, const Var& v) { return matmul(v, g.input(m)); }), 1e-4);
  EXPECT_LE(check(m, [&](Graph& g, const Var& v) { return matmul(g.input(a), v); }), 1e-4);
}

TEST_F(OpGradTest, SoftmaxFamily) {
  Tensor x = random_tensor({4, 6}, rng, -3, 3);
  EXPECT_LE(check(x, [](Graph&, const Var& v) { return log_sum_exp(v); }), 1e-4);
  EXPECT_LE(check(x, [](Graph&, const Var& v) { return softmax(v); }), 1e-4);
  const std::vector<std::int32_t> t{0, 5, 2, 2};
  Tensor other = random_tensor({4, 6}, rng, -3, 3);
  EXPECT_LE(check(x, [&](Graph&, const Var& v) { return cross_entropy(v, t); }), 1e-4);
  EXPECT_LE(check(x, [&](Graph& g, const Var& v) {
              return dual_cross_entropy(v, g.input(other), t);
            }),
            1e-4);
  EXPECT_LE(check(x, [&](Graph& g, const Var& v) {
              return dual_cross_entropy(g.input(other), v, t);
            }),
            1e-4);
  EXPECT_LE(check(x, [&](Graph& g, const Var& v) { return mse(v, g.input(other)); }), 1e-4);
}

TEST(CrossEntropyTest, RejectsOutOfRangeTargets) {
  Graph g(false);
  const Var z = g.constant(Tensor(Shape{2, 3}));
  const std::vector<std::int32_t> bad{0, 3};
  EXPECT_THROW(cross_entropy(z, bad), DataError);
  const std::vector<std::int32_t> short_t{0};
  EXPECT_THROW(cross_entropy(z, short_t), DimensionError);
}

TEST(GraphTest, BackwardRunsInReverseRecordingOrder) {
  Graph g;
  std::vector<int> order;
  g.on_backward([&] { order.push_back(1); });
  g.on_backward([&] { order.push_back(2); });
  g.on_backward([&] { order.push_back(3); });
  Tensor x(Shape{1}, 2.0);
  x.enable_grad();
  g.backward(sum(g.param(x)));
  // sum's own closure is recorded last and therefore runs first.
  EXPECT_EQ(order, (std::vector<int>{3, 2, 1}));
  EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
}

TEST(GraphTest, DisabledGraphRecordsNothing) {
  Graph g(false);
  Tensor x(Shape{3}, 1.0);
  x.enable_grad();
  const Var y = tanh(mul(g.param(x), g.param(x)));
  EXPECT_FALSE(y.requires_grad());
  EXPECT_EQ(g.tape_size(), 0u);
}
