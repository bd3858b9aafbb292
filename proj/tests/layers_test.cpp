#include <gtest/gtest.h>

#include <cmath>

#include "pixrec/errors.hpp"
#include "pixrec/grad_check.hpp"
#include "pixrec/layers.hpp"
#include "test_util.hpp"

using namespace pixrec;
using pixrec::testing::random_tensor;

TEST(BuildMaskTest, KindA3x3SingleGroup) {
  const Tensor m = build_mask({.kind = MaskKind::A, .kernel_h = 3, .kernel_w = 3});
  const double expected[9] = {1, 1, 1, 1, 0, 0, 0, 0, 0};
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(m[i], expected[i]) << "tap " << i;
}

TEST(BuildMaskTest, KindA1x1IsEmpty) {
  const Tensor m = build_mask({.kind = MaskKind::A, .cin = 4, .cout = 4});
  for (double v : m.data()) EXPECT_EQ(v, 0.0);
}

TEST(BuildMaskTest, KindB1x1ThreeGroupsIsLowerTriangularInclusive) {
  const Tensor m = build_mask({.kind = MaskKind::B, .cin = 3, .cout = 3, .groups = 3});
  // m[ci * 3 + co]: output R sees {R}, G sees {R,G}, B sees {R,G,B}.
  const double expected[9] = {1, 1, 1, 0, 1, 1, 0, 0, 1};
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(m[i], expected[i]) << "entry " << i;
}

TEST(BuildMaskTest, SpatialRuleAndMonotonicity) {
  for (std::size_t groups : {1u, 3u}) {
    const MaskSpec a{.kind = MaskKind::A, .kernel_h = 5, .kernel_w = 5, .cin = 6, .cout = 12,
                     .groups = groups};
    MaskSpec b = a;
    b.kind = MaskKind::B;
    const Tensor ma = build_mask(a), mb = build_mask(b);
    std::size_t a_count = 0, b_count = 0;
    for (std::size_t dy = 0; dy < 5; ++dy) {
      for (std::size_t dx = 0; dx < 5; ++dx) {
        for (std::size_t c = 0; c < 6 * 12; ++c) {
          const std::size_t i = (dy * 5 + dx) * 72 + c;
          EXPECT_LE(ma[i], mb[i]);
          a_count += ma[i] != 0.0;
          b_count += mb[i] != 0.0;
          if (dy < 2 || (dy == 2 && dx < 2)) {
            EXPECT_EQ(ma[i], 1.0);
          }
          if (dy > 2 || (dy == 2 && dx > 2)) {
            EXPECT_EQ(mb[i], 0.0);
          }
        }
      }
    }
    EXPECT_LT(a_count, b_count);
  }
}

TEST(BuildMaskTest, RejectsIndivisibleChannelsAndEvenKernels) {
  EXPECT_THROW(build_mask({.cin = 4, .cout = 3, .groups = 3}), ConfigError);
  EXPECT_THROW(build_mask({.cin = 3, .cout = 5, .groups = 3}), ConfigError);
  EXPECT_THROW(build_mask({.kernel_h = 2, .kernel_w = 3}), ConfigError);
}

namespace {

struct GatedFixture {
  std::size_t width = 6, groups = 3, cond_width = 4, k = 3;
  Tensor w_t, b_t, w_s, b_s, w_p, b_p, i_t, i_s;
  GatedBlockMasks masks;

  explicit GatedFixture(std::mt19937_64& rng, double scale = 0.5) {
    w_t = random_tensor({k, k, width, width}, rng, -scale, scale);
    w_s = random_tensor({k, k, width, width}, rng, -scale, scale);
    w_p = random_tensor({1, 1, width, width}, rng, -scale, scale);
    b_t = random_tensor({width}, rng, -scale, scale);
    b_s = random_tensor({width}, rng, -scale, scale);
    b_p = random_tensor({width}, rng, -scale, scale);
    i_t = random_tensor({1, 1, cond_width, width}, rng, -scale, scale);
    i_s = random_tensor({1, 1, cond_width, width}, rng, -scale, scale);
    masks.conv = build_mask({.kind = MaskKind::B, .kernel_h = k, .kernel_w = k, .cin = width,
                             .cout = width, .groups = groups});
    masks.proj = build_mask({.kind = MaskKind::B, .cin = width, .cout = width, .groups = groups});
  }

  GatedBlockVars vars(Graph& g, bool inject) {
    GatedBlockVars v{g.param(w_t), g.param(b_t), g.param(w_s), g.param(b_s), g.param(w_p),
                     g.param(b_p), std::nullopt, std::nullopt};
    if (inject) {
      v.inj_tanh = g.param(i_t);
      v.inj_sigmoid = g.param(i_s);
    }
    return v;
  }
};

}  // namespace

TEST(GatedBlockTest, ZeroWeightsGiveResidualIdentity) {
  std::mt19937_64 rng(1);
  GatedFixture f(rng);
  for (Tensor* t : {&f.w_t, &f.w_s, &f.w_p, &f.b_p}) t->fill(0.0);
  Graph g(false);
  const Tensor x = random_tensor({2, 4, 4, 6}, rng);
  const Var y = gated_block(g.input(x), f.vars(g, false), f.masks, nullptr);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y.value()[i], x[i]);
}

TEST(GatedBlockTest, ZeroInputWithBiases) {
  std::mt19937_64 rng(2);
  GatedFixture f(rng);
  f.b_p.fill(0.0);
  Graph g(false);
  const Tensor x(Shape{1, 3, 3, 6});
  const Var y = gated_block(g.input(x), f.vars(g, false), f.masks, nullptr);
  for (std::size_t co = 0; co < 6; ++co) {
    double expect = 0.0;
    for (std::size_t ci = 0; ci < 6; ++ci) {
      const double gate = std::tanh(f.b_t[ci]) * (1.0 / (1.0 + std::exp(-f.b_s[ci])));
      expect += f.masks.proj[ci * 6 + co] * f.w_p[ci * 6 + co] * gate;
    }
    for (std::size_t pos = 0; pos < 9; ++pos) EXPECT_NEAR(y.value()[pos * 6 + co], expect, 1e-14);
  }
}

TEST(GatedBlockTest, LaterPixelsDoNotAffectEarlierOutputs) {
  std::mt19937_64 rng(3);
  GatedFixture f(rng);
  const std::size_t h = 5, w = 5, c = 6;
  const Tensor x = random_tensor({1, h, w, c}, rng);
  const Tensor cond = random_tensor({1, h, w, 4}, rng);
  Graph g(false);
  const Var c_var = g.input(cond);
  const Tensor base = gated_block(g.input(x), f.vars(g, true), f.masks, &c_var).value();
  for (std::size_t j = 0; j < h * w; ++j) {
    Tensor x2 = x;
    for (std::size_t ch = 0; ch < c; ++ch) x2[j * c + ch] += 1.0 + ch;
    const Tensor out = gated_block(g.input(x2), f.vars(g, true), f.masks, &c_var).value();
    for (std::size_t i = 0; i < j; ++i) {
      for (std::size_t ch = 0; ch < c; ++ch) ASSERT_EQ(out[i * c + ch], base[i * c + ch]);
    }
    // Within pixel j, colour group 0 of the output must ignore input groups 1 and 2.
    Tensor x3 = x;
    for (std::size_t ch = 2; ch < c; ++ch) x3[j * c + ch] -= 0.7;
    const Tensor out3 = gated_block(g.input(x3), f.vars(g, true), f.masks, &c_var).value();
    for (std::size_t ch = 0; ch < 2; ++ch) EXPECT_EQ(out3[j * c + ch], base[j * c + ch]);
  }
}

TEST(GatedBlockTest, Gradients) {
  std::mt19937_64 rng(4);
  GatedFixture f(rng);
  Tensor x = random_tensor({1, 4, 4, 6}, rng);
  Tensor cond = random_tensor({1, 4, 4, 4}, rng);
  const Tensor readout = random_tensor({1, 4, 4, 6}, rng, 0.5, 1.5);
  Tensor* params[] = {&x, &cond, &f.w_t, &f.b_t, &f.w_s, &f.b_s, &f.w_p, &f.b_p, &f.i_t, &f.i_s};
  const double err = grad_check(
      [&](Graph& g) {
        const Var c = g.param(cond);
        return sum(mul(gated_block(g.param(x), f.vars(g, true), f.masks, &c), g.input(readout)));
      },
      params);
  EXPECT_LE(err, 1e-4);
}

TEST(GatedBlockTest, ConditioningShapeMustMatch) {
  std::mt19937_64 rng(5);
  GatedFixture f(rng);
  Graph g(false);
  const Var cond = g.constant(Tensor(Shape{1, 3, 4, 4}));
  EXPECT_THROW(gated_block(g.constant(Tensor(Shape{1, 4, 4, 6})), f.vars(g, true), f.masks, &cond),
               DimensionError);
}

TEST(ResNetBlockTest, ZeroKernelsAndZeroInput) {
  std::mt19937_64 rng(6);
  Tensor w1(Shape{3, 3, 4, 4}), w2(Shape{3, 3, 4, 4});
  Tensor b1 = random_tensor({4}, rng), b2(Shape{4});
  Graph g(false);
  const Tensor x = random_tensor({1, 5, 5, 4}, rng);
  const Var y = resnet_block(g.input(x), {g.param(w1), g.param(b1), g.param(w2), g.param(b2)});
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y.value()[i], x[i]);

  w1 = random_tensor({3, 3, 4, 4}, rng);
  w2 = random_tensor({3, 3, 4, 4}, rng);
  b1.fill(0.0);
  const Var z = resnet_block(g.constant(Tensor(Shape{1, 5, 5, 4})),
                             {g.param(w1), g.param(b1), g.param(w2), g.param(b2)});
  for (double v : z.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(ResNetBlockTest, HandComputedOneByOne) {
  Tensor w1 = Tensor::from({1, 1, 1, 1}, {0.5}), b1 = Tensor::from({1}, {-0.25});
  Tensor w2 = Tensor::from({1, 1, 1, 1}, {3.0}), b2 = Tensor::from({1}, {0.1});
  Graph g(false);
  const Var y = resnet_block(g.constant(Tensor::from({1, 1, 2, 1}, {2.0, -1.0})),
                             {g.param(w1), g.param(b1), g.param(w2), g.param(b2)});
  // x=2: relu 2 -> 0.75 -> relu 0.75 -> 2.35 -> 4.35.  x=-1: 0 -> -0.25 -> 0 -> 0.1 -> -0.9.
  EXPECT_NEAR(y.value()[0], 4.35, 1e-15);
  EXPECT_NEAR(y.value()[1], -0.9, 1e-15);
}

TEST(ResNetBlockTest, Gradients) {
  std::mt19937_64 rng(7);
  Tensor x = random_tensor({2, 4, 4, 3}, rng);
  Tensor w1 = random_tensor({3, 3, 3, 3}, rng), w2 = random_tensor({3, 3, 3, 3}, rng);
  Tensor b1 = random_tensor({3}, rng), b2 = random_tensor({3}, rng);
  const Tensor readout = random_tensor({2, 4, 4, 3}, rng, 0.5, 1.5);
  Tensor* params[] = {&x, &w1, &b1, &w2, &b2};
  const double err = grad_check(
      [&](Graph& g) {
        return sum(mul(resnet_block(g.param(x), {g.param(w1), g.param(b1), g.param(w2),
                                                 g.param(b2)}),
                       g.input(readout)));
      },
      params);
  EXPECT_LE(err, 1e-4);
}
