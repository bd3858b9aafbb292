#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pixrec/config.hpp"
#include "pixrec/data.hpp"
#include "pixrec/model.hpp"

namespace pixrec {

/// base * 2^-floor(step / halve_every)
double lr_at(std::uint64_t step, double base = 0.0004, std::uint64_t halve_every = 500000);

struct OptimizerState {
  double decay = 0.95, momentum = 0.9, epsilon = 1e-8;
  std::uint64_t step = 0;  // completed updates
  ParamMap sq;             // squared-gradient moving average
  ParamMap mom;            // momentum buffer

  static OptimizerState for_params(const ParamMap& params);
};

/// s <- decay s + (1 - decay) g^2; m <- momentum m + lr g / sqrt(s + eps); p <- p - m.
/// Throws NumericError naming the first parameter with a non-finite gradient
/// before anything is modified.
void rmsprop_step(ParamMap& params, const ParamMap& grads, OptimizerState& state, double lr);

/// Weights drawn from a normal with sd 0.1, redrawn outside +-2 sd; biases 0.
/// Uses a counter-based generator, so the result depends only on the seed.
ModelBundle init_params(const ModelConfig& cfg, std::uint64_t seed);

struct TrainConfig {
  Objective objective = Objective::O2;
  std::size_t batch_size = 32;
  std::uint64_t steps = 2000;
  double base_lr = 0.0004;
  std::uint64_t halve_every = 500000;
  std::uint64_t seed = 1;
  std::uint64_t log_every = 10;
  /// Validation NLL every this many steps (0 disables).
  std::uint64_t eval_every = 0;
  std::size_t eval_pairs = 64;
  /// Checkpoint every this many steps (0 disables), plus once at the end.
  std::uint64_t checkpoint_every = 0;
  std::filesystem::path checkpoint_path;

  void validate() const;
  KeyValues to_kv() const;
  static TrainConfig from_kv(const KeyValues& kv);
};

struct TrainLogEntry {
  std::uint64_t step = 0;
  double loss = 0.0;  // nats per sub-pixel (squared error for mse)
  double loss_bits = 0.0;
  double lr = 0.0;
  std::optional<double> val_nll_bits;  // squared error for mse
};

/// Dataset positions of the batch for a 1-based step. Every epoch is a
/// Fisher-Yates permutation keyed by (seed, epoch); batches run across
/// epoch boundaries.
std::vector<std::size_t> batch_indices(std::uint64_t step, std::size_t batch_size,
                                       std::size_t dataset_size, std::uint64_t seed);

struct TrainState {
  ModelBundle bundle;
  OptimizerState optimizer;
};

/// Parameters, optimizer buffers ("opt/sq/...", "opt/mom/...") and both
/// configs in one checkpoint.
void save_training_checkpoint(const std::filesystem::path& path, const TrainState& state,
                              const TrainConfig& cfg);
TrainState load_training_checkpoint(const std::filesystem::path& path);

/// Mean teacher-forced NLL in bits over the first `limit` pairs (mean squared
/// error for the mse kind). `shuffle_seed` pairs every target with another
/// pair's input instead.
double mean_nll_bits(const ModelBundle& bundle, const PairedDataset& ds, std::size_t limit,
                     std::optional<std::uint64_t> shuffle_seed = std::nullopt);

struct TrainResult {
  TrainState state;
  std::vector<TrainLogEntry> log;
};

using TrainCallback = std::function<void(const TrainLogEntry&)>;

/// Runs from state.optimizer.step + 1 through cfg.steps. A non-finite loss
/// throws NumericError with the step index after checkpointing the state
/// before that step (when a checkpoint path is configured).
TrainResult train_loop(const TrainConfig& cfg, const PairedDataset& train, TrainState state,
                       const PairedDataset* validation = nullptr, const TrainCallback& on_log = {});

/// Loss and gradients for one batch.
double loss_and_grads(const ModelBundle& bundle, const Batch& batch, Objective objective,
                      ParamMap& grads);

}  // namespace pixrec
