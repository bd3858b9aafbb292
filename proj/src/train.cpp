#include "pixrec/train.hpp"

#include <cmath>
#include <numbers>

#include "pixrec/errors.hpp"
#include "pixrec/sampler.hpp"

namespace pixrec {

double lr_at(std::uint64_t step, double base, std::uint64_t halve_every) {
  if (halve_every == 0) throw ConfigError("lr halving period must be positive");
  return std::ldexp(base, -static_cast<int>(std::min<std::uint64_t>(step / halve_every, 2000)));
}

OptimizerState OptimizerState::for_params(const ParamMap& params) {
  OptimizerState s;
  s.sq = zeros_like(params);
  s.mom = zeros_like(params);
  return s;
}

void rmsprop_step(ParamMap& params, const ParamMap& grads, OptimizerState& state, double lr) {
  for (const auto& [name, p] : params) {
    const auto g = grads.find(name);
    const auto s = state.sq.find(name);
    const auto m = state.mom.find(name);
    if (g == grads.end() || s == state.sq.end() || m == state.mom.end()) {
      throw ConfigError("rmsprop_step: no gradient or optimizer buffer for '" + name + "'");
    }
    if (g->second.shape() != p.shape() || s->second.shape() != p.shape() || m->second.shape() != p.shape()) {
      throw DimensionError("rmsprop_step: buffer shapes differ for '" + name + "'");
    }
    for (const double v : g->second.data())
      if (!std::isfinite(v)) throw NumericError("non-finite gradient for parameter '" + name + "'");
  }
  const double keep = state.decay, fresh = 1.0 - state.decay;
  for (auto& [name, p] : params) {
    const auto g = grads.at(name).data();
    auto s = state.sq.at(name).data();
    auto m = state.mom.at(name).data();
    auto pv = p.data();
    for (std::size_t i = 0; i < pv.size(); ++i) {
      s[i] = keep * s[i] + fresh * g[i] * g[i];
      m[i] = state.momentum * m[i] + lr * g[i] / std::sqrt(s[i] + state.epsilon);
      pv[i] -= m[i];
    }
  }
  ++state.step;
}

ModelBundle init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelBundle b(cfg);
  const CounterRng rng(seed);
  const double sd = 0.1;
  std::uint64_t stream = 0;
  for (auto& [name, t] : b.params) {
    ++stream;
    if (t.rank() == 1) continue;  // biases stay zero
    std::uint64_t counter = 0;
    for (double& v : t.data()) {
      double z = 0.0;
      do {
        const double u1 = 1.0 - rng.uniform(stream, counter++);
        const double u2 = rng.uniform(stream, counter++);
        z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
      } while (std::abs(z) > 2.0);
      v = sd * z;
    }
  }
  return b;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  if (steps == 0) throw ConfigError("steps must be at least 1");
  if (!(base_lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (halve_every == 0) throw ConfigError("lr halving period must be positive");
}

KeyValues TrainConfig::to_kv() const {
  KeyValues kv;
  kv.set("train.objective", to_string(objective));
  kv.set("train.batch_size", std::to_string(batch_size));
  kv.set("train.steps", std::to_string(steps));
  char lr[64];
  std::snprintf(lr, sizeof lr, "%.17g", base_lr);
  kv.set("train.lr", lr);
  kv.set("train.halve_every", std::to_string(halve_every));
  kv.set("train.seed", std::to_string(seed));
  kv.set("train.log_every", std::to_string(log_every));
  kv.set("train.eval_every", std::to_string(eval_every));
  kv.set("train.eval_pairs", std::to_string(eval_pairs));
  kv.set("train.checkpoint_every", std::to_string(checkpoint_every));
  kv.set("train.checkpoint", checkpoint_path.string());
  return kv;
}

TrainConfig TrainConfig::from_kv(const KeyValues& kv) {
  TrainConfig c;
  c.objective = parse_objective(kv.get("train.objective", to_string(c.objective)));
  c.batch_size = kv.get_u64("train.batch_size", c.batch_size);
  c.steps = kv.get_u64("train.steps", c.steps);
  c.base_lr = kv.get_double("train.lr", c.base_lr);
  c.halve_every = kv.get_u64("train.halve_every", c.halve_every);
  c.seed = kv.get_u64("train.seed", c.seed);
  c.log_every = kv.get_u64("train.log_every", c.log_every);
  c.eval_every = kv.get_u64("train.eval_every", c.eval_every);
  c.eval_pairs = kv.get_u64("train.eval_pairs", c.eval_pairs);
  c.checkpoint_every = kv.get_u64("train.checkpoint_every", c.checkpoint_every);
  c.checkpoint_path = kv.get("train.checkpoint", "");
  c.validate();
  return c;
}

std::vector<std::size_t> batch_indices(std::uint64_t step, std::size_t batch_size,
                                       std::size_t dataset_size, std::uint64_t seed) {
  if (dataset_size == 0) throw DataError("training set is empty");
  if (step == 0) throw ConfigError("steps are numbered from 1");
  const CounterRng rng(seed);
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  std::uint64_t cached_epoch = ~0ull;
  std::vector<std::size_t> perm;
  const std::uint64_t first = (step - 1) * batch_size;
  for (std::uint64_t pos = first; pos < first + batch_size; ++pos) {
    const std::uint64_t epoch = pos / dataset_size;
    if (epoch != cached_epoch) {
      perm.resize(dataset_size);
      for (std::size_t i = 0; i < dataset_size; ++i) perm[i] = i;
      for (std::size_t i = dataset_size - 1; i > 0; --i) {
        const std::size_t j = rng.bits(epoch, i) % (i + 1);
        std::swap(perm[i], perm[j]);
      }
      cached_epoch = epoch;
    }
    out.push_back(perm[pos % dataset_size]);
  }
  return out;
}

void save_training_checkpoint(const std::filesystem::path& path, const TrainState& state,
                              const TrainConfig& cfg) {
  Checkpoint ck;
  ck.meta = state.bundle.config.to_kv();
  ck.meta.merge(cfg.to_kv());
  ck.meta.set("train.completed_steps", std::to_string(state.optimizer.step));
  ck.tensors = state.bundle.params;
  for (const auto& [name, t] : state.optimizer.sq) ck.tensors.emplace("opt/sq/" + name, t);
  for (const auto& [name, t] : state.optimizer.mom) ck.tensors.emplace("opt/mom/" + name, t);
  write_checkpoint(path, ck);
}

TrainState load_training_checkpoint(const std::filesystem::path& path) {
  const Checkpoint ck = read_checkpoint(path);
  TrainState st{bundle_from_checkpoint(ck), {}};
  st.optimizer = OptimizerState::for_params(st.bundle.params);
  st.optimizer.step = ck.meta.get_u64("train.completed_steps", 0);
  for (auto* buffers : {&st.optimizer.sq, &st.optimizer.mom}) {
    const std::string prefix = buffers == &st.optimizer.sq ? "opt/sq/" : "opt/mom/";
    for (auto& [name, t] : *buffers) {
      const auto it = ck.tensors.find(prefix + name);
      if (it == ck.tensors.end()) {
        throw ParseError(path.string() + ": no optimizer buffer '" + prefix + name + "'");
      }
      if (it->second.shape() != t.shape()) throw ParseError(path.string() + ": bad shape for " + prefix + name);
      t = it->second;
    }
  }
  return st;
}

double mean_nll_bits(const ModelBundle& bundle, const PairedDataset& ds, std::size_t limit,
                     std::optional<std::uint64_t> shuffle_seed) {
  const std::size_t n = std::min(limit, ds.size());
  if (n == 0) throw DataError("mean_nll_bits: no pairs to score");
  std::vector<std::size_t> inputs(n);
  for (std::size_t i = 0; i < n; ++i) inputs[i] = i;
  if (shuffle_seed && n > 1) {
    // A derangement: rotate a random permutation by one.
    std::vector<std::size_t> perm = batch_indices(1, n, n, *shuffle_seed);
    for (std::size_t i = 0; i < n; ++i) inputs[perm[i]] = perm[(i + 1) % n];
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const QuantizedImage& x = ds.inputs[inputs[i]];
    if (bundle.config.kind == ModelKind::mse) {
      RealImage target = dequantize(ds.targets[i]);
      for (double& v : target.values) v = 2.0 * v - 1.0;
      total += loss_mse(regress(bundle, x), target);
    } else {
      total += nll_report(bundle, x, ds.targets[i]);
    }
  }
  return total / static_cast<double>(n);
}

double loss_and_grads(const ModelBundle& bundle, const Batch& batch, Objective objective,
                      ParamMap& grads) {
  for (auto& [_, g] : grads) g.fill(0.0);
  Graph g;
  ParamBinder p(g, bundle, &grads);
  const Var loss = objective_loss(p, batch, objective);
  const double value = loss.value().item();
  if (std::isfinite(value)) g.backward(loss);
  return value;
}

TrainResult train_loop(const TrainConfig& cfg, const PairedDataset& train, TrainState state,
                       const PairedDataset* validation, const TrainCallback& on_log) {
  cfg.validate();
  if (train.size() == 0) throw DataError("training set is empty");
  if (objective_model(cfg.objective) != state.bundle.config.kind) {
    throw ConfigError("objective " + to_string(cfg.objective) + " cannot train a " +
                      to_string(state.bundle.config.kind) + " model");
  }
  if (state.optimizer.sq.empty()) state.optimizer = OptimizerState::for_params(state.bundle.params);
  TrainResult result;
  ParamMap grads = zeros_like(state.bundle.params);
  const bool categorical = state.bundle.config.kind != ModelKind::mse;
  const bool checkpoints = !cfg.checkpoint_path.empty();

  for (std::uint64_t step = state.optimizer.step + 1; step <= cfg.steps; ++step) {
    const auto idx = batch_indices(step, cfg.batch_size, train.size(), cfg.seed);
    const Batch batch = make_batch(train, idx, state.bundle.config);
    const double loss = loss_and_grads(state.bundle, batch, cfg.objective, grads);
    if (!std::isfinite(loss)) {
      std::string where;
      if (checkpoints) {
        save_training_checkpoint(cfg.checkpoint_path, state, cfg);
        where = "; state before the step saved to " + cfg.checkpoint_path.string();
      }
      throw NumericError("non-finite loss at step " + std::to_string(step) + where);
    }
    const double lr = lr_at(step - 1, cfg.base_lr, cfg.halve_every);
    rmsprop_step(state.bundle.params, grads, state.optimizer, lr);

    const bool log_now = cfg.log_every && (step % cfg.log_every == 0 || step == 1);
    const bool eval_now = validation && cfg.eval_every && step % cfg.eval_every == 0;
    if (log_now || eval_now || step == cfg.steps) {
      TrainLogEntry e;
      e.step = step;
      e.loss = loss;
      e.loss_bits = categorical ? loss / std::numbers::ln2 : loss;
      e.lr = lr;
      if (eval_now) e.val_nll_bits = mean_nll_bits(state.bundle, *validation, cfg.eval_pairs);
      result.log.push_back(e);
      if (on_log) on_log(e);
    }
    if (checkpoints && cfg.checkpoint_every && step % cfg.checkpoint_every == 0) {
      save_training_checkpoint(cfg.checkpoint_path, state, cfg);
    }
  }
  if (checkpoints) save_training_checkpoint(cfg.checkpoint_path, state, cfg);
  result.state = std::move(state);
  return result;
}

}  // namespace pixrec
