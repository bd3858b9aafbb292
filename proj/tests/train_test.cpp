#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <set>

#include "pixrec/errors.hpp"
#include "pixrec/train.hpp"

namespace pixrec {
namespace {

ModelConfig toy_model(int levels = 4) {
  ModelConfig c;
  c.in_h = c.in_w = 4;
  c.channels = 1;
  c.levels = levels;
  c.upsample_stages = 2;
  c.cond_width = 8;
  c.cond_blocks = 1;
  c.prior_width = 8;
  c.gated_blocks = 2;
  c.first_kernel = 5;
  c.gated_kernel = 3;
  c.head_width = 8;
  return c;
}

PairedDataset toy_corners(std::size_t n, std::uint64_t seed) {
  CornersConfig cc;
  cc.canvas = 16;
  cc.levels = 4;
  const auto digits = synthetic_digits(n, seed);
  PairedDataset ds = gen_mnist_corners(digits, cc, n, seed + 1);
  // The model sees a 4x4 version of the centred digit.
  for (auto& x : ds.inputs) x = quantize(bicubic_resize(dequantize(x), 4, 4), 4);
  return ds;
}

bool same_params(const ParamMap& a, const ParamMap& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, t] : a) {
    const Tensor& u = b.at(name);
    if (u.shape() != t.shape() || std::memcmp(u.data().data(), t.data().data(), t.size() * 8) != 0) return false;
  }
  return true;
}

TEST(LearningRateTest, Schedule) {
  EXPECT_DOUBLE_EQ(lr_at(0), 0.0004);
  EXPECT_DOUBLE_EQ(lr_at(499999), 0.0004);
  EXPECT_DOUBLE_EQ(lr_at(500000), 0.0002);
  EXPECT_DOUBLE_EQ(lr_at(1200000), 0.0001);
  double prev = lr_at(0);
  for (std::uint64_t s = 0; s < 3000000; s += 25000) {
    const double v = lr_at(s);
    EXPECT_LE(v, prev);
    if (s % 500000 != 0) {
      EXPECT_EQ(v, lr_at(s - 25000));
    }
    prev = v;
  }
}

TEST(RmspropTest, ZeroGradientKeepsParameters) {
  ParamMap p{{"w", Tensor(Shape{3}, std::vector<double>{1.0, -2.0, 0.5})}};
  const ParamMap before = p;
  OptimizerState s = OptimizerState::for_params(p);
  rmsprop_step(p, zeros_like(p), s, 0.01);
  EXPECT_TRUE(same_params(p, before));
  EXPECT_EQ(s.step, 1u);
}

TEST(RmspropTest, QuadraticDescendsLikeTheRecurrence) {
  ParamMap p{{"p", Tensor(Shape{1}, std::vector<double>{1.0})}};
  OptimizerState s = OptimizerState::for_params(p);
  double ref_p = 1.0, ref_s = 0.0, ref_m = 0.0;
  double prev_loss = 1.0;
  for (int t = 0; t < 10; ++t) {
    const double g = 2.0 * p.at("p")[0];
    ParamMap grads{{"p", Tensor(Shape{1}, std::vector<double>{g})}};
    rmsprop_step(p, grads, s, 0.01);
    const double rg = 2.0 * ref_p;
    ref_s = 0.95 * ref_s + 0.05 * rg * rg;
    ref_m = 0.9 * ref_m + 0.01 * rg / std::sqrt(ref_s + 1e-8);
    ref_p -= ref_m;
    EXPECT_NEAR(p.at("p")[0], ref_p, 1e-15);
    const double loss = p.at("p")[0] * p.at("p")[0];
    EXPECT_LT(loss, prev_loss) << t;
    prev_loss = loss;
  }
}

TEST(RmspropTest, NonFiniteGradientNamesParameter) {
  ParamMap p{{"a", Tensor(Shape{2})}, {"bad", Tensor(Shape{2})}};
  ParamMap g = zeros_like(p);
  g.at("bad")[1] = std::nan("");
  OptimizerState s = OptimizerState::for_params(p);
  try {
    rmsprop_step(p, g, s, 0.1);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("'bad'"), std::string::npos);
  }
  EXPECT_EQ(s.step, 0u);
}

TEST(InitTest, TruncatedNormal) {
  ModelConfig c = toy_model(256);
  c.head_width = 400;
  const ModelBundle b = init_params(c, 5);
  for (const auto& [name, t] : b.params) {
    for (const double v : t.data()) {
      if (t.rank() == 1) {
        ASSERT_EQ(v, 0.0) << name;
      } else {
        ASSERT_LE(std::abs(v), 0.2) << name;
      }
    }
  }
  const Tensor& big = b.param("prior/head2/w");
  ASSERT_GE(big.size(), 100000u);
  double mean = 0.0, sq = 0.0;
  for (const double v : big.data()) mean += v / static_cast<double>(big.size());
  for (const double v : big.data()) sq += (v - mean) * (v - mean) / static_cast<double>(big.size());
  EXPECT_NEAR(std::sqrt(sq), 0.088, 0.01);
  EXPECT_NEAR(mean, 0.0, 0.002);
  EXPECT_TRUE(same_params(init_params(c, 5).params, b.params));
  EXPECT_FALSE(same_params(init_params(c, 6).params, b.params));
}

TEST(BatchTest, EpochsArePermutations) {
  std::multiset<std::size_t> seen;
  for (std::uint64_t step = 1; step <= 5; ++step)
    for (const auto i : batch_indices(step, 4, 20, 9)) seen.insert(i);
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(seen.count(i), 1u);
  EXPECT_NE(batch_indices(6, 4, 20, 9), batch_indices(1, 4, 20, 9));
  EXPECT_EQ(batch_indices(3, 7, 20, 9), batch_indices(3, 7, 20, 9));
}

TEST(TrainLoopTest, LossHalvesOnToyCorners) {
  const PairedDataset ds = toy_corners(64, 3);
  TrainConfig cfg;
  cfg.objective = Objective::O2;
  cfg.batch_size = 8;
  cfg.steps = 200;
  cfg.base_lr = 0.002;
  cfg.log_every = 1;
  const TrainResult r = train_loop(cfg, ds, {init_params(toy_model(), 1), {}});
  ASSERT_EQ(r.log.size(), 200u);
  EXPECT_LT(r.log.back().loss, 0.5 * r.log.front().loss)
      << r.log.front().loss << " -> " << r.log.back().loss;
  EXPECT_NEAR(r.log.front().loss_bits, r.log.front().loss / std::log(2.0), 1e-12);
}

TEST(TrainLoopTest, ResumeIsBitExact) {
  const PairedDataset ds = toy_corners(16, 4);
  const auto path = std::filesystem::temp_directory_path() / "pixrec_resume.ckpt";
  TrainConfig cfg;
  cfg.batch_size = 5;
  cfg.steps = 6;
  cfg.base_lr = 0.001;
  const TrainResult straight = train_loop(cfg, ds, {init_params(toy_model(), 2), {}});

  TrainConfig first = cfg;
  first.steps = 3;
  first.checkpoint_path = path;
  train_loop(first, ds, {init_params(toy_model(), 2), {}});
  TrainState resumed = load_training_checkpoint(path);
  EXPECT_EQ(resumed.optimizer.step, 3u);
  const TrainResult rest = train_loop(cfg, ds, std::move(resumed));
  EXPECT_TRUE(same_params(rest.state.bundle.params, straight.state.bundle.params));
  EXPECT_TRUE(same_params(rest.state.optimizer.mom, straight.state.optimizer.mom));
  std::filesystem::remove(path);
}

TEST(TrainLoopTest, NonFiniteLossAbortsWithStep) {
  const PairedDataset ds = toy_corners(8, 5);
  const auto path = std::filesystem::temp_directory_path() / "pixrec_nan.ckpt";
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.steps = 5;
  cfg.checkpoint_path = path;
  TrainState st{init_params(toy_model(), 3), {}};
  st.bundle.param("prior/head2/b")[0] = std::nan("");
  try {
    train_loop(cfg, ds, std::move(st));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos) << e.what();
  }
  EXPECT_TRUE(std::filesystem::exists(path));
  EXPECT_EQ(load_training_checkpoint(path).optimizer.step, 0u);
  std::filesystem::remove(path);
}

TEST(TrainLoopTest, RejectsIncompatibleObjective) {
  TrainConfig cfg;
  cfg.objective = Objective::mse;
  EXPECT_THROW(train_loop(cfg, toy_corners(4, 1), {init_params(toy_model(), 1), {}}), ConfigError);
}

TEST(GradientFlowTest, ConditioningGetsGradientUnderO2) {
  const PairedDataset ds = toy_corners(4, 6);
  ModelBundle b = init_params(toy_model(), 4);
  // Prior logits dominate the fused softmax.
  for (double& v : b.param("prior/head2/w").data()) v *= 50.0;
  const std::vector<std::size_t> idx{0, 1, 2, 3};
  const Batch batch = make_batch(ds, idx, b.config);
  ParamMap grads = zeros_like(b.params);
  auto cond_norm = [&] {
    double n = 0.0;
    for (const auto& [name, g] : grads)
      if (name.rfind("cond/", 0) == 0)
        for (const double v : g.data()) n += v * v;
    return std::sqrt(n);
  };
  loss_and_grads(b, batch, Objective::O2, grads);
  const double o2 = cond_norm();
  loss_and_grads(b, batch, Objective::O1, grads);
  const double o1 = cond_norm();
  EXPECT_GT(o2, 0.0);
  EXPECT_GT(o2, o1);
}

TEST(TrainConfigTest, KeyValueRoundtrip) {
  TrainConfig c;
  c.objective = Objective::pixel_ce;
  c.base_lr = 0.00123;
  c.steps = 77;
  c.checkpoint_path = "/tmp/x.ckpt";
  const TrainConfig back = TrainConfig::from_kv(KeyValues::parse(c.to_kv().to_text()));
  EXPECT_EQ(back.to_kv().to_text(), c.to_kv().to_text());
  EXPECT_EQ(back.base_lr, c.base_lr);
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

}  // namespace
}  // namespace pixrec
