#include "pixrec/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <span>
#include <vector>

#include "pixrec/errors.hpp"
#include "pixrec/ops.hpp"

namespace pixrec {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::pixel_recursive: return "pixel_recursive";
    case ModelKind::pixel_ce: return "pixel_ce";
    case ModelKind::mse: return "mse";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "pixel_recursive") return ModelKind::pixel_recursive;
  if (name == "pixel_ce") return ModelKind::pixel_ce;
  if (name == "mse") return ModelKind::mse;
  throw ConfigError("unknown model kind '" + name + "' (pixel_recursive, pixel_ce, mse)");
}

std::string to_string(Objective o) {
  switch (o) {
    case Objective::O1: return "O1";
    case Objective::O2: return "O2";
    case Objective::pixel_ce: return "pixel_ce";
    case Objective::mse: return "mse";
  }
  return "?";
}

Objective parse_objective(const std::string& name) {
  if (name == "O1" || name == "o1") return Objective::O1;
  if (name == "O2" || name == "o2") return Objective::O2;
  if (name == "pixel_ce") return Objective::pixel_ce;
  if (name == "mse") return Objective::mse;
  throw ConfigError("unknown objective '" + name + "' (O1, O2, pixel_ce, mse)");
}

ModelKind objective_model(Objective o) {
  switch (o) {
    case Objective::O1:
    case Objective::O2: return ModelKind::pixel_recursive;
    case Objective::pixel_ce: return ModelKind::pixel_ce;
    case Objective::mse: return ModelKind::mse;
  }
  return ModelKind::pixel_recursive;
}

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("model config: " + msg);
  };
  need(in_h > 0 && in_w > 0, "input dims must be positive");
  need(channels == 1 || channels == 3, "channels must be 1 or 3");
  need(levels >= 2, "K must be >= 2");
  need(upsample_stages <= 6, "at most 6 upsample stages");
  need(cond_width > 0, "cond_width must be positive");
  if (kind != ModelKind::pixel_recursive) return;
  need(prior_width > 0 && prior_width % channels == 0,
       "prior_width must be a positive multiple of the channel count");
  need(head_width > 0 && head_width % channels == 0,
       "head_width must be a positive multiple of the channel count");
  need(first_kernel % 2 == 1 && gated_kernel % 2 == 1, "prior kernels must be odd");
}

KeyValues ModelConfig::to_kv() const {
  KeyValues kv;
  kv.set("model.kind", to_string(kind));
  kv.set("model.in_h", std::to_string(in_h));
  kv.set("model.in_w", std::to_string(in_w));
  kv.set("model.channels", std::to_string(channels));
  kv.set("model.levels", std::to_string(levels));
  kv.set("model.upsample_stages", std::to_string(upsample_stages));
  kv.set("model.cond_width", std::to_string(cond_width));
  kv.set("model.cond_blocks", std::to_string(cond_blocks));
  kv.set("model.prior_width", std::to_string(prior_width));
  kv.set("model.gated_blocks", std::to_string(gated_blocks));
  kv.set("model.first_kernel", std::to_string(first_kernel));
  kv.set("model.gated_kernel", std::to_string(gated_kernel));
  kv.set("model.head_width", std::to_string(head_width));
  kv.set("model.cond_injection", cond_injection ? "true" : "false");
  kv.set("model.mse_residual", mse_residual ? "true" : "false");
  return kv;
}

ModelConfig ModelConfig::from_kv(const KeyValues& kv) {
  ModelConfig c;
  auto size = [&](const char* key, std::size_t fallback) {
    const std::int64_t v = kv.get_int(key, static_cast<std::int64_t>(fallback));
    if (v < 0) throw ConfigError(std::string(key) + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  c.kind = parse_model_kind(kv.get("model.kind", to_string(c.kind)));
  c.in_h = size("model.in_h", c.in_h);
  c.in_w = size("model.in_w", c.in_w);
  c.channels = size("model.channels", c.channels);
  c.levels = static_cast<int>(kv.get_int("model.levels", c.levels));
  c.upsample_stages = size("model.upsample_stages", c.upsample_stages);
  c.cond_width = size("model.cond_width", c.cond_width);
  c.cond_blocks = size("model.cond_blocks", c.cond_blocks);
  c.prior_width = size("model.prior_width", c.prior_width);
  c.gated_blocks = size("model.gated_blocks", c.gated_blocks);
  c.first_kernel = size("model.first_kernel", c.first_kernel);
  c.gated_kernel = size("model.gated_kernel", c.gated_kernel);
  c.head_width = size("model.head_width", c.head_width);
  c.cond_injection = kv.get_bool("model.cond_injection", c.cond_injection);
  c.mse_residual = kv.get_bool("model.mse_residual", c.mse_residual);
  c.validate();
  return c;
}

PriorMasks PriorMasks::build(const ModelConfig& c) {
  PriorMasks m;
  if (c.kind != ModelKind::pixel_recursive) return m;
  const std::size_t g = c.channels;
  const std::size_t ck = c.channels * static_cast<std::size_t>(c.levels);
  m.first = build_mask({MaskKind::A, c.first_kernel, c.first_kernel, c.channels, c.prior_width, g});
  m.block.conv = build_mask({MaskKind::B, c.gated_kernel, c.gated_kernel, c.prior_width, c.prior_width, g});
  m.block.proj = build_mask({MaskKind::B, 1, 1, c.prior_width, c.prior_width, g});
  m.head1 = build_mask({MaskKind::B, 1, 1, c.prior_width, c.head_width, g});
  m.head2 = build_mask({MaskKind::B, 1, 1, c.head_width, ck, g});
  return m;
}

std::vector<std::pair<std::string, Shape>> parameter_shapes(const ModelConfig& c) {
  c.validate();
  std::vector<std::pair<std::string, Shape>> out;
  const std::size_t f = c.cond_width, ch = c.channels;
  const std::size_t ck = ch * static_cast<std::size_t>(c.levels);
  auto conv = [&](const std::string& name, std::size_t k, std::size_t cin, std::size_t cout) {
    out.emplace_back(name + "/w", Shape{k, k, cin, cout});
    out.emplace_back(name + "/b", Shape{cout});
  };
  auto blocks = [&](const std::string& prefix) {
    for (std::size_t j = 0; j < c.cond_blocks; ++j) {
      const std::string n = prefix + "/res" + std::to_string(j);
      out.emplace_back(n + "/w1", Shape{3, 3, f, f});
      out.emplace_back(n + "/b1", Shape{f});
      out.emplace_back(n + "/w2", Shape{3, 3, f, f});
      out.emplace_back(n + "/b2", Shape{f});
    }
  };
  conv("cond/in", 3, ch, f);
  blocks("cond/s0");
  for (std::size_t s = 1; s <= c.upsample_stages; ++s) {
    // Transposed-conv kernels are [kh, kw, Cout, Cin].
    out.emplace_back("cond/up" + std::to_string(s) + "/w", Shape{3, 3, f, f});
    out.emplace_back("cond/up" + std::to_string(s) + "/b", Shape{f});
    blocks("cond/s" + std::to_string(s));
  }
  conv("cond/out", 1, f, c.kind == ModelKind::mse ? ch : ck);
  if (c.kind != ModelKind::pixel_recursive) return out;

  const std::size_t w = c.prior_width;
  conv("prior/in", c.first_kernel, ch, w);
  for (std::size_t j = 0; j < c.gated_blocks; ++j) {
    const std::string n = "prior/gated" + std::to_string(j);
    out.emplace_back(n + "/w_tanh", Shape{c.gated_kernel, c.gated_kernel, w, w});
    out.emplace_back(n + "/b_tanh", Shape{w});
    out.emplace_back(n + "/w_sigmoid", Shape{c.gated_kernel, c.gated_kernel, w, w});
    out.emplace_back(n + "/b_sigmoid", Shape{w});
    out.emplace_back(n + "/w_proj", Shape{1, 1, w, w});
    out.emplace_back(n + "/b_proj", Shape{w});
    if (c.cond_injection) {
      out.emplace_back(n + "/inj_tanh", Shape{1, 1, f, w});
      out.emplace_back(n + "/inj_sigmoid", Shape{1, 1, f, w});
    }
  }
  conv("prior/head1", 1, w, c.head_width);
  conv("prior/head2", 1, c.head_width, ck);
  return out;
}

ModelBundle::ModelBundle(ModelConfig cfg) : config(std::move(cfg)) {
  for (auto& [name, shape] : parameter_shapes(config)) params.emplace(name, Tensor(shape));
  masks = PriorMasks::build(config);
}

Tensor& ModelBundle::param(const std::string& name) {
  const auto it = params.find(name);
  if (it == params.end()) throw ConfigError("model has no parameter '" + name + "'");
  return it->second;
}

const Tensor& ModelBundle::param(const std::string& name) const {
  const auto it = params.find(name);
  if (it == params.end()) throw ConfigError("model has no parameter '" + name + "'");
  return it->second;
}

std::size_t ModelBundle::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params) n += t.size();
  return n;
}

ParamMap zeros_like(const ParamMap& params) {
  ParamMap out;
  for (const auto& [name, t] : params) out.emplace(name, Tensor(t.shape()));
  return out;
}

ParamBinder::ParamBinder(Graph& g, const ModelBundle& bundle, ParamMap* grads)
    : g_(g), bundle_(bundle), grads_(grads) {}

Var ParamBinder::operator()(const std::string& name) {
  if (const auto it = cache_.find(name); it != cache_.end()) return it->second;
  const Tensor& value = bundle_.param(name);
  Var v;
  if (grads_) {
    const auto it = grads_->find(name);
    if (it == grads_->end()) throw ConfigError("no gradient buffer for parameter '" + name + "'");
    v = g_.param(value, it->second.data());
  } else {
    v = g_.input(value);
  }
  cache_.emplace(name, v);
  return v;
}

Tensor embed_images(std::span<const QuantizedImage* const> images) {
  if (images.empty()) throw DataError("embed_images: empty batch");
  const QuantizedImage& first = *images[0];
  Tensor t(Shape{images.size(), first.height, first.width, first.channels});
  const std::size_t m = first.subpixels();
  for (std::size_t b = 0; b < images.size(); ++b) {
    const QuantizedImage& img = *images[b];
    if (img.height != first.height || img.width != first.width ||
        img.channels != first.channels || img.levels != first.levels) {
      throw DimensionError("embed_images: batch images differ in shape or K");
    }
    for (std::size_t i = 0; i < m; ++i) t[b * m + i] = embed_level(img.data[i], img.levels);
  }
  return t;
}

Var conditioning_features(ParamBinder& p, const Var& x) {
  const ModelConfig& c = p.bundle().config;
  auto blocks = [&](Var h, const std::string& prefix) {
    for (std::size_t j = 0; j < c.cond_blocks; ++j) {
      const std::string n = prefix + "/res" + std::to_string(j);
      h = resnet_block(h, {p(n + "/w1"), p(n + "/b1"), p(n + "/w2"), p(n + "/b2")});
    }
    return h;
  };
  Var h = add_bias(conv2d(x, p("cond/in/w")), p("cond/in/b"));
  h = blocks(h, "cond/s0");
  for (std::size_t s = 1; s <= c.upsample_stages; ++s) {
    const std::string n = "cond/up" + std::to_string(s);
    h = add_bias(transposed_conv2d(h, p(n + "/w"), 2), p(n + "/b"));
    h = blocks(h, "cond/s" + std::to_string(s));
  }
  return relu(h);
}

Var conditioning_head(ParamBinder& p, const Var& features) {
  Var out = add_bias(conv2d(features, p("cond/out/w")), p("cond/out/b"));
  if (p.bundle().config.kind == ModelKind::mse) out = tanh(out);
  return out;
}

Var prior_network(ParamBinder& p, const Var& y, const Var* features) {
  const ModelConfig& c = p.bundle().config;
  const PriorMasks& m = p.bundle().masks;
  if (c.kind != ModelKind::pixel_recursive) throw ConfigError("model has no prior network");
  if (c.cond_injection && !features) {
    throw ConfigError("prior network with conditioning injection needs conditioning features");
  }
  ConvOptions first;
  first.mask = &m.first;
  Var h = add_bias(conv2d(y, p("prior/in/w"), first), p("prior/in/b"));
  for (std::size_t j = 0; j < c.gated_blocks; ++j) {
    const std::string n = "prior/gated" + std::to_string(j);
    GatedBlockVars v{p(n + "/w_tanh"), p(n + "/b_tanh"), p(n + "/w_sigmoid"), p(n + "/b_sigmoid"),
                     p(n + "/w_proj"), p(n + "/b_proj"), std::nullopt, std::nullopt};
    if (c.cond_injection) {
      v.inj_tanh = p(n + "/inj_tanh");
      v.inj_sigmoid = p(n + "/inj_sigmoid");
    }
    h = gated_block(h, v, m.block, c.cond_injection ? features : nullptr);
  }
  ConvOptions head1;
  head1.mask = &m.head1;
  ConvOptions head2;
  head2.mask = &m.head2;
  h = add_bias(conv2d(relu(h), p("prior/head1/w"), head1), p("prior/head1/b"));
  return add_bias(conv2d(relu(h), p("prior/head2/w"), head2), p("prior/head2/b"));
}

namespace {

void check_input(const ModelConfig& c, const QuantizedImage& x) {
  if (x.height != c.in_h || x.width != c.in_w || x.channels != c.channels) {
    throw ConfigError("input " + std::to_string(x.height) + "x" + std::to_string(x.width) + "x" +
                      std::to_string(x.channels) + " does not match model input " +
                      std::to_string(c.in_h) + "x" + std::to_string(c.in_w) + "x" +
                      std::to_string(c.channels));
  }
  if (x.levels != c.levels) {
    throw ConfigError("input has K=" + std::to_string(x.levels) + ", model expects K=" +
                      std::to_string(c.levels));
  }
}

void check_output(const ModelConfig& c, const QuantizedImage& y) {
  if (y.height != c.out_h() || y.width != c.out_w() || y.channels != c.channels) {
    throw ConfigError("target " + std::to_string(y.height) + "x" + std::to_string(y.width) + "x" +
                      std::to_string(y.channels) + " does not match model output " +
                      std::to_string(c.out_h()) + "x" + std::to_string(c.out_w()) + "x" +
                      std::to_string(c.channels));
  }
  if (y.levels != c.levels) {
    throw ConfigError("target has K=" + std::to_string(y.levels) + ", model expects K=" +
                      std::to_string(c.levels));
  }
}

Var as_rows(const Var& logits, int levels) {
  const std::size_t k = static_cast<std::size_t>(levels);
  return reshape(logits, Shape{logits.value().size() / k, k});
}

Tensor embed_one(const QuantizedImage& img) {
  const QuantizedImage* p = &img;
  return embed_images(std::span<const QuantizedImage* const>(&p, 1));
}

Tensor upsample_embedded(const QuantizedImage& x, const ModelConfig& c) {
  const RealImage up = bicubic_resize(dequantize(x), c.out_h(), c.out_w());
  Tensor t(Shape{1, c.out_h(), c.out_w(), c.channels});
  for (std::size_t i = 0; i < up.values.size(); ++i) t[i] = 2.0 * up.values[i] - 1.0;
  return t;
}

void check_grid(const Tensor& t, int levels, const char* what) {
  if (t.rank() != 2 || t.dim(1) != static_cast<std::size_t>(levels)) {
    throw DimensionError(std::string(what) + ": logits " + shape_to_string(t.shape()) +
                         " are not [M, " + std::to_string(levels) + "]");
  }
}

}  // namespace

Batch make_batch(const PairedDataset& ds, std::span<const std::size_t> indices,
                 const ModelConfig& c) {
  if (indices.empty()) throw DataError("make_batch: empty batch");
  std::vector<const QuantizedImage*> xs, ys;
  Batch b;
  b.size = indices.size();
  for (const std::size_t i : indices) {
    if (i >= ds.size()) throw DataError("make_batch: index " + std::to_string(i) + " out of range");
    check_input(c, ds.inputs[i]);
    check_output(c, ds.targets[i]);
    ds.targets[i].validate();
    xs.push_back(&ds.inputs[i]);
    ys.push_back(&ds.targets[i]);
    b.targets.insert(b.targets.end(), ds.targets[i].data.begin(), ds.targets[i].data.end());
  }
  b.x = embed_images(xs);
  b.y = embed_images(ys);
  if (c.kind == ModelKind::mse && c.mse_residual) {
    Tensor up(Shape{b.size, c.out_h(), c.out_w(), c.channels});
    const std::size_t m = c.subpixels();
    for (std::size_t j = 0; j < xs.size(); ++j) {
      const Tensor one = upsample_embedded(*xs[j], c);
      std::copy(one.data().begin(), one.data().end(), up.data().begin() + static_cast<long>(j * m));
    }
    b.x_up = std::move(up);
  }
  return b;
}

Var objective_loss(ParamBinder& p, const Batch& batch, Objective objective) {
  const ModelConfig& c = p.bundle().config;
  if (objective_model(objective) != c.kind) {
    throw ConfigError("objective " + to_string(objective) + " cannot train a " + to_string(c.kind) +
                      " model");
  }
  Graph& g = p.graph();
  const Var x = g.input(batch.x);
  const Var features = conditioning_features(p, x);
  const Var head = conditioning_head(p, features);
  if (objective == Objective::mse) {
    Var pred = head;
    if (batch.x_up) pred = add(pred, g.input(*batch.x_up));
    return mse(pred, g.input(batch.y));
  }
  const Var a = as_rows(head, c.levels);
  if (objective == Objective::pixel_ce) return cross_entropy(a, batch.targets);
  const Var b = as_rows(prior_network(p, g.input(batch.y), &features), c.levels);
  if (objective == Objective::O1) return cross_entropy(add(a, b), batch.targets);
  return dual_cross_entropy(a, b, batch.targets);
}

Tensor condition_logits(const ModelBundle& bundle, const QuantizedImage& x) {
  const ModelConfig& c = bundle.config;
  if (c.kind == ModelKind::mse) throw ConfigError("mse model produces no logits");
  check_input(c, x);
  Graph g(false);
  ParamBinder p(g, bundle);
  const Tensor xt = embed_one(x);
  const Var head = conditioning_head(p, conditioning_features(p, g.input(xt)));
  return head.value().reshaped(Shape{c.subpixels(), static_cast<std::size_t>(c.levels)});
}

Tensor prior_logits(const ModelBundle& bundle, const QuantizedImage& y, const QuantizedImage* x) {
  const ModelConfig& c = bundle.config;
  check_output(c, y);
  Graph g(false);
  ParamBinder p(g, bundle);
  std::optional<Var> features;
  Tensor xt;
  if (c.cond_injection) {
    if (!x) throw ConfigError("prior_logits: conditioning injection needs the input image");
    check_input(c, *x);
    xt = embed_one(*x);
    features = conditioning_features(p, g.input(xt));
  }
  const Tensor yt = embed_one(y);
  const Var b = prior_network(p, g.input(yt), features ? &*features : nullptr);
  return b.value().reshaped(Shape{c.subpixels(), static_cast<std::size_t>(c.levels)});
}

RealImage regress(const ModelBundle& bundle, const QuantizedImage& x) {
  const ModelConfig& c = bundle.config;
  if (c.kind != ModelKind::mse) throw ConfigError("regress needs an mse model");
  check_input(c, x);
  Graph g(false);
  ParamBinder p(g, bundle);
  const Tensor xt = embed_one(x);
  const Var head = conditioning_head(p, conditioning_features(p, g.input(xt)));
  RealImage out(c.out_h(), c.out_w(), c.channels);
  std::copy(head.value().data().begin(), head.value().data().end(), out.values.begin());
  if (c.mse_residual) {
    const Tensor up = upsample_embedded(x, c);
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += up[i];
  }
  return out;
}

std::vector<double> fused_distribution(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) {
    throw DimensionError("fused_distribution: logit vectors of length " + std::to_string(a.size()) +
                         " and " + std::to_string(b.size()));
  }
  std::vector<double> s(a.size()), p(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) s[k] = a[k] + b[k];
  softmax_row(s, p);
  return p;
}

double loss_O1(const Tensor& a, const Tensor& b, const QuantizedImage& target, bool sum) {
  check_grid(a, target.levels, "loss_O1");
  require_same_shape(a.shape(), b.shape(), "loss_O1");
  Graph g(false);
  const double v = cross_entropy(add(g.input(a), g.input(b)), target.data).value().item();
  return sum ? v * static_cast<double>(a.dim(0)) : v;
}

double loss_O2(const Tensor& a, const Tensor& b, const QuantizedImage& target, bool sum) {
  check_grid(a, target.levels, "loss_O2");
  require_same_shape(a.shape(), b.shape(), "loss_O2");
  Graph g(false);
  const double v = dual_cross_entropy(g.input(a), g.input(b), target.data).value().item();
  return sum ? v * static_cast<double>(a.dim(0)) : v;
}

double loss_pixel_ce(const Tensor& logits, const QuantizedImage& target, bool sum) {
  check_grid(logits, target.levels, "loss_pixel_ce");
  Graph g(false);
  const double v = cross_entropy(g.input(logits), target.data).value().item();
  return sum ? v * static_cast<double>(logits.dim(0)) : v;
}

double loss_mse(const RealImage& prediction, const RealImage& target) {
  if (prediction.height != target.height || prediction.width != target.width ||
      prediction.channels != target.channels) {
    throw DimensionError("loss_mse: image shapes differ");
  }
  if (prediction.values.empty()) throw DimensionError("loss_mse: empty images");
  double s = 0.0;
  for (std::size_t i = 0; i < prediction.values.size(); ++i) {
    const double d = prediction.values[i] - target.values[i];
    s += d * d;
  }
  return s / static_cast<double>(prediction.values.size());
}

namespace {

// Pairwise sum: exact for a power-of-two count of equal terms.
double pairwise_sum(std::span<const double> v) {
  if (v.size() <= 2) return v.empty() ? 0.0 : v.size() == 1 ? v[0] : v[0] + v[1];
  const std::size_t half = std::bit_floor(v.size() - 1);
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

}  // namespace

double nll_report(const ModelBundle& bundle, const QuantizedImage& x, const QuantizedImage& y) {
  const ModelConfig& c = bundle.config;
  if (c.kind == ModelKind::mse) throw ConfigError("nll_report needs a categorical model");
  check_output(c, y);
  Tensor logits = condition_logits(bundle, x);
  if (c.kind == ModelKind::pixel_recursive) {
    const Tensor b = prior_logits(bundle, y, &x);
    for (std::size_t i = 0; i < logits.size(); ++i) logits[i] += b[i];
  }
  const std::size_t m = logits.dim(0), k = logits.dim(1);
  std::vector<double> bits(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = logits.data().data() + i * k;
    const double top = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(row[j] - top);
    // log2 z stays exact when all logits tie, so a zero model gives log2 K.
    bits[i] = std::log2(z) + (top - row[y.data[i]]) / std::numbers::ln2;
  }
  return pairwise_sum(bits) / static_cast<double>(m);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'P', 'I', 'X', 'R', 'E', 'C', '0', '1'};

void put_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

void put_string(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<long>(s.size()));
}

class Reader {
 public:
  Reader(std::istream& in, std::string origin) : in_(in), origin_(std::move(origin)) {}

  void bytes(char* dst, std::size_t n, const char* what) {
    in_.read(dst, static_cast<long>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw ParseError(origin_ + ": truncated " + what + " at byte offset " + std::to_string(pos_) +
                       " (wanted " + std::to_string(n) + " bytes, got " +
                       std::to_string(in_.gcount()) + ")");
    }
    pos_ += n;
  }
  std::uint64_t u64(const char* what) {
    unsigned char b[8];
    bytes(reinterpret_cast<char*>(b), 8, what);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  std::string string(const char* what, std::uint64_t limit) {
    const std::uint64_t n = u64(what);
    if (n > limit) {
      throw ParseError(origin_ + ": " + what + " length " + std::to_string(n) +
                       " exceeds limit at byte offset " + std::to_string(pos_ - 8));
    }
    std::string s(n, '\0');
    bytes(s.data(), n, what);
    return s;
  }
  std::size_t pos() const { return pos_; }
  const std::string& origin() const { return origin_; }

 private:
  std::istream& in_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw ParseError("cannot write checkpoint " + path.string());
    out.write(kMagic, 8);
    put_string(out, ckpt.meta.to_text());
    put_u64(out, ckpt.tensors.size());
    for (const auto& [name, t] : ckpt.tensors) {
      put_string(out, name);
      put_u64(out, t.rank());
      for (const std::size_t d : t.shape()) put_u64(out, d);
      for (const double v : t.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
    if (!out) throw ParseError("error writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint " + path.string());
  Reader r(in, path.string());
  char magic[8];
  r.bytes(magic, 8, "magic");
  if (std::memcmp(magic, kMagic, 8) != 0) {
    throw ParseError(path.string() + ": not a PIXREC01 checkpoint (bad magic at byte offset 0)");
  }
  Checkpoint ck;
  ck.meta = KeyValues::parse(r.string("config text", 1u << 24), path.string() + " (config)");
  const std::uint64_t count = r.u64("tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.string("tensor name", 4096);
    const std::uint64_t rank = r.u64("tensor rank");
    if (rank > 8) {
      throw ParseError(path.string() + ": tensor '" + name + "' has rank " + std::to_string(rank) +
                       " at byte offset " + std::to_string(r.pos() - 8));
    }
    Shape shape(rank);
    std::uint64_t numel = 1;
    for (auto& d : shape) {
      d = r.u64("tensor dim");
      numel *= d;
      if (numel > (1ull << 32)) throw ParseError(path.string() + ": tensor '" + name + "' too large");
    }
    Tensor t(shape);
    for (double& v : t.data()) v = std::bit_cast<double>(r.u64("tensor data"));
    ck.tensors.emplace(std::move(name), std::move(t));
  }
  return ck;
}

void save_bundle(const std::filesystem::path& path, const ModelBundle& bundle) {
  Checkpoint ck;
  ck.meta = bundle.config.to_kv();
  ck.tensors = bundle.params;
  write_checkpoint(path, ck);
}

ModelBundle bundle_from_checkpoint(const Checkpoint& ckpt) {
  ModelBundle b(ModelConfig::from_kv(ckpt.meta));
  for (auto& [name, t] : b.params) {
    const auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) throw ParseError("checkpoint lacks parameter '" + name + "'");
    if (it->second.shape() != t.shape()) {
      throw ParseError("checkpoint parameter '" + name + "' has shape " +
                       shape_to_string(it->second.shape()) + ", config implies " +
                       shape_to_string(t.shape()));
    }
    t = it->second;
  }
  return b;
}

ModelBundle load_bundle(const std::filesystem::path& path) {
  return bundle_from_checkpoint(read_checkpoint(path));
}

}  // namespace pixrec
