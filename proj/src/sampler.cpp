#include "pixrec/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <thread>

#include "pixrec/conv.hpp"
#include "pixrec/errors.hpp"
#include "pixrec/ops.hpp"

namespace pixrec {

void SamplePlan::validate() const {
  if (mode == Mode::tempered && !(tau > 0.0)) {
    throw ParameterError("sampling temperature must be positive, got " + std::to_string(tau));
  }
  if (num_samples == 0) throw ConfigError("num_samples must be at least 1");
}

std::vector<double> temper(std::span<const double> p, double tau) {
  if (!(tau > 0.0)) throw ParameterError("temper: tau must be positive, got " + std::to_string(tau));
  if (p.empty()) throw DimensionError("temper: empty distribution");
  std::vector<double> logits(p.size());
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] < 0.0) throw DataError("temper: negative probability");
    logits[k] = p[k] > 0.0 ? std::log(p[k]) : -std::numeric_limits<double>::infinity();
  }
  std::vector<double> out(p.size());
  tempered_softmax(logits, tau, out);
  return out;
}

void tempered_softmax(std::span<const double> logits, double tau, std::span<double> out) {
  if (!(tau > 0.0)) throw ParameterError("tau must be positive, got " + std::to_string(tau));
  std::vector<double> scaled(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) scaled[k] = logits[k] / tau;
  softmax_row(scaled, out);
}

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < v.size(); ++k)
    if (v[k] > v[best]) best = k;
  return best;
}

std::size_t draw_categorical(std::span<const double> p, double u) {
  double total = 0.0;
  for (const double v : p) total += v;
  const double target = u * total;
  double cum = 0.0;
  std::size_t last = 0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] <= 0.0) continue;
    cum += p[k];
    last = k;
    if (target < cum) return k;
  }
  return last;
}

std::uint64_t CounterRng::mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::uint64_t CounterRng::bits(std::uint64_t stream, std::uint64_t counter) const {
  constexpr std::uint64_t golden = 0x9e3779b97f4a7c15ull;
  const std::uint64_t key = mix(seed_ ^ mix(stream + 1));
  return mix(key + golden * (counter + 1));
}

double CounterRng::uniform(std::uint64_t stream, std::uint64_t counter) const {
  return static_cast<double>(bits(stream, counter) >> 11) * 0x1.0p-53;
}

namespace {

std::size_t levels_of(const ModelBundle& b) { return static_cast<std::size_t>(b.config.levels); }

class BruteForceDecoder : public StepDecoder {
 public:
  BruteForceDecoder(const ModelBundle& bundle, const QuantizedImage& x)
      : bundle_(bundle), x_(x), a_(condition_logits(bundle, x)) {}

  void logits(const QuantizedImage& y, std::size_t i, std::span<double> out) override {
    const std::size_t k = levels_of(bundle_);
    if (bundle_.config.kind == ModelKind::pixel_ce) {
      std::copy_n(a_.data().begin() + static_cast<long>(i * k), k, out.begin());
      return;
    }
    const Tensor b = prior_logits(bundle_, y, &x_);
    for (std::size_t j = 0; j < k; ++j) out[j] = a_[i * k + j] + b[i * k + j];
  }

 private:
  const ModelBundle& bundle_;
  const QuantizedImage& x_;
  Tensor a_;
};

// Keeps one [H, W, ch] buffer per prior layer and refreshes the current
// pixel of each, in the same expression order as the taped network.
class IncrementalDecoder : public StepDecoder {
 public:
  IncrementalDecoder(const ModelBundle& bundle, const QuantizedImage& x)
      : bundle_(bundle), cfg_(bundle.config) {
    Graph g(false);
    ParamBinder p(g, bundle);
    Tensor xt;
    {
      const QuantizedImage* ptr = &x;
      xt = embed_images(std::span<const QuantizedImage* const>(&ptr, 1));
    }
    const Var features = conditioning_features(p, g.input(xt));
    a_ = conditioning_head(p, features).value();
    if (cfg_.kind != ModelKind::pixel_recursive) return;

    h_ = cfg_.out_h();
    w_ = cfg_.out_w();
    const std::size_t wd = cfg_.prior_width, hd = cfg_.head_width;
    const std::size_t ck = cfg_.channels * levels_of(bundle);
    const PriorMasks& m = bundle.masks;

    y_ = Tensor(Shape{h_, w_, cfg_.channels});
    first_ = std::make_unique<PreparedKernel>(bundle.param("prior/in/w"), &m.first);
    first_geom_ = ConvGeometry::make(h_, w_, cfg_.first_kernel, cfg_.first_kernel, 1, Padding::same);
    gated_geom_ = ConvGeometry::make(h_, w_, cfg_.gated_kernel, cfg_.gated_kernel, 1, Padding::same);
    point_geom_ = ConvGeometry::make(1, 1, 1, 1, 1, Padding::same);
    for (std::size_t j = 0; j < cfg_.gated_blocks; ++j) {
      const std::string n = "prior/gated" + std::to_string(j);
      Block blk;
      blk.w_tanh = std::make_unique<PreparedKernel>(bundle.param(n + "/w_tanh"), &m.block.conv);
      blk.w_sigmoid = std::make_unique<PreparedKernel>(bundle.param(n + "/w_sigmoid"), &m.block.conv);
      blk.w_proj = std::make_unique<PreparedKernel>(bundle.param(n + "/w_proj"), &m.block.proj);
      blk.b_tanh = &bundle.param(n + "/b_tanh");
      blk.b_sigmoid = &bundle.param(n + "/b_sigmoid");
      blk.b_proj = &bundle.param(n + "/b_proj");
      if (cfg_.cond_injection) {
        blk.inj_tanh = conv2d(features, p(n + "/inj_tanh")).value();
        blk.inj_sigmoid = conv2d(features, p(n + "/inj_sigmoid")).value();
      }
      blk.input = Tensor(Shape{h_, w_, wd});
      blk.gate = Tensor(Shape{h_, w_, wd});
      blocks_.push_back(std::move(blk));
    }
    b_first_ = &bundle.param("prior/in/b");
    head1_ = std::make_unique<PreparedKernel>(bundle.param("prior/head1/w"), &m.head1);
    head2_ = std::make_unique<PreparedKernel>(bundle.param("prior/head2/w"), &m.head2);
    b_head1_ = &bundle.param("prior/head1/b");
    b_head2_ = &bundle.param("prior/head2/b");
    top_ = Tensor(Shape{h_, w_, wd});
    t_.resize(wd);
    s_.resize(wd);
    proj_.resize(wd);
    r1_.resize(wd);
    q_.resize(hd);
    logits_.resize(ck);
    // Unwritten sub-pixels read as level 0, as in a freshly allocated target.
    const double zero = embed_level(0, cfg_.levels);
    for (double& v : y_.data()) v = zero;
  }

  void logits(const QuantizedImage& y, std::size_t i, std::span<double> out) override {
    const std::size_t k = levels_of(bundle_);
    if (cfg_.kind == ModelKind::pixel_ce) {
      std::copy_n(a_.data().begin() + static_cast<long>(i * k), k, out.begin());
      return;
    }
    const std::size_t c = cfg_.channels;
    const std::size_t pixel = i / c, ch = i % c;
    // Sync the embedded target for everything written since the last call.
    for (std::size_t j = synced_; j < i; ++j) y_[j] = embed_level(y.data[j], cfg_.levels);
    synced_ = i;
    refresh(pixel / w_, pixel % w_);
    for (std::size_t j = 0; j < k; ++j) out[j] = a_[i * k + j] + logits_[ch * k + j];
  }

 private:
  struct Block {
    std::unique_ptr<PreparedKernel> w_tanh, w_sigmoid, w_proj;
    const Tensor *b_tanh = nullptr, *b_sigmoid = nullptr, *b_proj = nullptr;
    Tensor inj_tanh, inj_sigmoid;
    Tensor input;  // block input x
    Tensor gate;   // tanh(t) * sigmoid(s)
  };

  void refresh(std::size_t oy, std::size_t ox) {
    const std::size_t wd = cfg_.prior_width;
    const std::size_t at = (oy * w_ + ox) * wd;
    {
      double* x0 = blocks_.empty() ? &top_[at] : &blocks_[0].input[at];
      conv_at(y_.data().data(), first_geom_, *first_, oy, ox, x0);
      for (std::size_t co = 0; co < wd; ++co) x0[co] = x0[co] + (*b_first_)[co];
    }
    for (std::size_t j = 0; j < blocks_.size(); ++j) {
      Block& b = blocks_[j];
      conv_at(b.input.data().data(), gated_geom_, *b.w_tanh, oy, ox, t_.data());
      conv_at(b.input.data().data(), gated_geom_, *b.w_sigmoid, oy, ox, s_.data());
      for (std::size_t co = 0; co < wd; ++co) {
        double t = t_[co] + (*b.b_tanh)[co];
        double s = s_[co] + (*b.b_sigmoid)[co];
        if (cfg_.cond_injection) {
          t = t + b.inj_tanh[at + co];
          s = s + b.inj_sigmoid[at + co];
        }
        b.gate[at + co] = tanh_scalar(t) * sigmoid_scalar(s);
      }
      conv_at(&b.gate[at], point_geom_, *b.w_proj, 0, 0, proj_.data());
      double* next = j + 1 < blocks_.size() ? &blocks_[j + 1].input[at] : &top_[at];
      for (std::size_t co = 0; co < wd; ++co) {
        next[co] = b.input[at + co] + (proj_[co] + (*b.b_proj)[co]);
      }
    }
    for (std::size_t co = 0; co < wd; ++co) r1_[co] = relu_scalar(top_[at + co]);
    conv_at(r1_.data(), point_geom_, *head1_, 0, 0, q_.data());
    for (std::size_t co = 0; co < q_.size(); ++co) q_[co] = relu_scalar(q_[co] + (*b_head1_)[co]);
    conv_at(q_.data(), point_geom_, *head2_, 0, 0, logits_.data());
    for (std::size_t co = 0; co < logits_.size(); ++co) logits_[co] = logits_[co] + (*b_head2_)[co];
  }

  const ModelBundle& bundle_;
  const ModelConfig& cfg_;
  Tensor a_;
  std::size_t h_ = 0, w_ = 0, synced_ = 0;
  Tensor y_;
  std::unique_ptr<PreparedKernel> first_, head1_, head2_;
  const Tensor *b_first_ = nullptr, *b_head1_ = nullptr, *b_head2_ = nullptr;
  ConvGeometry first_geom_, gated_geom_, point_geom_;
  std::vector<Block> blocks_;
  Tensor top_;  // output of the last gated block
  std::vector<double> t_, s_, proj_, r1_, q_, logits_;
};

}  // namespace

std::unique_ptr<StepDecoder> brute_force_decoder(const ModelBundle& bundle, const QuantizedImage& x) {
  if (bundle.config.kind == ModelKind::mse) throw ConfigError("mse models have no step decoder");
  return std::make_unique<BruteForceDecoder>(bundle, x);
}

std::unique_ptr<StepDecoder> incremental_decoder(const ModelBundle& bundle, const QuantizedImage& x) {
  if (bundle.config.kind == ModelKind::mse) throw ConfigError("mse models have no step decoder");
  return std::make_unique<IncrementalDecoder>(bundle, x);
}

QuantizedImage decode_image(const ModelBundle& bundle, const QuantizedImage& x,
                            const SamplePlan& plan, std::uint64_t stream, DecoderKind decoder) {
  plan.validate();
  const ModelConfig& c = bundle.config;
  if (c.kind == ModelKind::mse) {
    RealImage r = regress(bundle, x);
    for (double& v : r.values) v = (v + 1.0) / 2.0;
    return quantize(r, c.levels);
  }
  auto step = decoder == DecoderKind::incremental ? incremental_decoder(bundle, x)
                                                  : brute_force_decoder(bundle, x);
  QuantizedImage y(c.out_h(), c.out_w(), c.channels, c.levels);
  const std::size_t k = static_cast<std::size_t>(c.levels);
  std::vector<double> logits(k), p(k);
  const CounterRng rng(plan.seed);
  for (std::size_t i = 0; i < y.subpixels(); ++i) {
    step->logits(y, i, logits);
    std::size_t level = 0;
    if (plan.mode == SamplePlan::Mode::greedy) {
      level = argmax(logits);
    } else {
      tempered_softmax(logits, plan.tau, p);
      level = draw_categorical(p, rng.uniform(stream, i));
    }
    y.data[i] = static_cast<std::int32_t>(level);
  }
  return y;
}

std::vector<QuantizedImage> sample_image(const ModelBundle& bundle, const QuantizedImage& x,
                                         const SamplePlan& plan, std::size_t workers) {
  plan.validate();
  std::vector<QuantizedImage> out(plan.num_samples);
  workers = std::clamp<std::size_t>(workers, 1, plan.num_samples);
  if (workers == 1) {
    for (std::size_t s = 0; s < out.size(); ++s) out[s] = decode_image(bundle, x, plan, s);
    return out;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t s = t; s < out.size(); s += workers) out[s] = decode_image(bundle, x, plan, s);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

QuantizedImage greedy_decode(const ModelBundle& bundle, const QuantizedImage& x, DecoderKind decoder) {
  return decode_image(bundle, x, SamplePlan::greedy(), 0, decoder);
}

}  // namespace pixrec
