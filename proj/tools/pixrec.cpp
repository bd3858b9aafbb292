#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pixrec/data.hpp"
#include "pixrec/errors.hpp"
#include "pixrec/eval.hpp"
#include "pixrec/sampler.hpp"
#include "pixrec/train.hpp"

#ifndef PIXREC_CODE_VERSION
#define PIXREC_CODE_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pixrec;

namespace {

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

// Settings shared by every subcommand: --config file, then --set overrides,
// then dedicated flags (applied by each subcommand).
struct Settings {
  std::string config_path;
  std::vector<std::string> overrides;
  KeyValues kv;

  void add_to(CLI::App* app) {
    app->add_option("--config", config_path, "key=value settings file");
    app->add_option("--set", overrides, "extra key=value setting (repeatable)");
  }
  void load() {
    if (!config_path.empty()) kv = KeyValues::load(config_path);
    for (const auto& o : overrides) kv.merge(KeyValues::parse(o, "--set"));
  }
  template <class T>
  void flag(const std::string& key, const std::optional<T>& v) {
    if (!v) return;
    if constexpr (std::is_same_v<T, std::string>) {
      kv.set(key, *v);
    } else if constexpr (std::is_same_v<T, double>) {
      char b[64];
      std::snprintf(b, sizeof b, "%.17g", *v);
      kv.set(key, b);
    } else if constexpr (std::is_same_v<T, bool>) {
      kv.set(key, *v ? "true" : "false");
    } else {
      kv.set(key, std::to_string(*v));
    }
  }
};

// Written next to every output; records what produced it.
void write_run_manifest(const fs::path& path, const std::string& command, int argc, char** argv,
                        const KeyValues& settings, std::uint64_t seed, const json& extra,
                        const std::string& started) {
  json m;
  m["command"] = command;
  m["argv"] = std::vector<std::string>(argv, argv + argc);
  m["code_version"] = PIXREC_CODE_VERSION;
  m["seed"] = seed;
  m["config"] = settings.entries();
  m["started"] = started;
  m["finished"] = utc_now();
  m["results"] = extra;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write run manifest " + path.string());
  out << m.dump(2) << '\n';
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path fp(p);
  return fp.is_absolute() ? fp : base / fp;
}

int levels_of(const KeyValues& kv) {
  const auto k = kv.get_int("data.levels", kv.get_int("model.levels", 0));
  if (k < 2) throw ConfigError("set data.levels (or --levels) to the number of intensity levels");
  return static_cast<int>(k);
}

SamplePlan plan_from(const KeyValues& kv) {
  const std::uint64_t seed = kv.get_u64("sample.seed", 1);
  const std::size_t n = kv.get_u64("sample.count", 1);
  SamplePlan plan = kv.get_bool("sample.greedy", false)
                        ? SamplePlan::greedy()
                        : SamplePlan::tempered(kv.get_double("sample.tau", 1.0), seed, n);
  plan.num_samples = n;
  plan.validate();
  return plan;
}

std::size_t limit_of(const KeyValues& kv, std::size_t size) {
  const std::size_t lim = kv.get_u64("data.limit", 0);
  return lim == 0 ? size : std::min(lim, size);
}

struct Outputs {
  std::vector<std::size_t> source;  // dataset index of each output
  std::vector<QuantizedImage> images;
};

// Saves outputs as images plus a manifest of (input path, output path).
void save_outputs(const Outputs& o, const fs::path& dir, const fs::path& data_manifest,
                  const std::string& stem) {
  fs::create_directories(dir);
  const auto entries = read_manifest(data_manifest);
  const fs::path base = fs::absolute(data_manifest).parent_path();
  std::vector<std::pair<std::string, std::string>> rows;
  std::map<std::size_t, int> seen;
  for (std::size_t j = 0; j < o.images.size(); ++j) {
    const std::size_t i = o.source[j];
    const std::string ext = o.images[j].channels == 1 ? ".pgm" : ".ppm";
    const std::string name = stem + "_" + std::to_string(i) + "_" + std::to_string(seen[i]++) + ext;
    save_image(dir / name, to_image8(o.images[j]));
    rows.emplace_back(resolve(base, entries.at(i).first).string(), name);
  }
  write_manifest(dir / "outputs.tsv", rows);
}

MetricsReport score(const PairedDataset& ds, const Outputs& o, const std::string& label) {
  std::vector<QuantizedImage> in, truth;
  for (const std::size_t i : o.source) {
    in.push_back(ds.inputs[i]);
    truth.push_back(ds.targets[i]);
  }
  MetricsReport r = evaluate_outputs(in, o.images, truth);
  r.label = label;
  return r;
}

json corner_summary(const std::vector<QuantizedImage>& images) {
  std::map<std::string, int> counts;
  for (const auto& y : images) counts[to_string(corner_exclusivity(y))]++;
  return counts;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path.string());
  out << text;
}

// ---------------------------------------------------------------------------

int cmd_gen_corners(Settings& s, const std::string& out, int argc, char** argv) {
  const std::string started = utc_now();
  CornersConfig cc;
  cc.canvas = s.kv.get_u64("corners.canvas", 32);
  cc.digit = s.kv.get_u64("corners.digit", 0);
  cc.levels = static_cast<int>(s.kv.get_int("corners.levels", 16));
  const std::size_t count = s.kv.get_u64("corners.count", 1000);
  const std::uint64_t seed = s.kv.get_u64("corners.seed", 1);
  const std::size_t input = s.kv.get_u64("corners.input_size", 16);
  const std::string mnist = s.kv.get("corners.mnist", "");

  std::vector<RealImage> digits;
  if (!mnist.empty()) {
    for (const auto& img : read_idx_images(mnist)) digits.push_back(image8_to_real(img));
  } else {
    digits = synthetic_digits(s.kv.get_u64("corners.source_digits", count), seed);
  }
  PairedDataset ds = gen_mnist_corners(digits, cc, count, seed + 1);
  if (input != 0 && input != cc.canvas) resize_inputs(ds, input, input);
  ds.split = s.kv.get("corners.split", "train");
  save_dataset(ds, out);
  int tl = 0;
  for (const int t : ds.tags) tl += t == static_cast<int>(Corner::top_left);
  std::cout << "wrote " << ds.size() << " pairs to " << out << " (" << tl << " top-left)\n";
  write_run_manifest(fs::path(out) / "run_manifest.json", "gen-corners", argc, argv, s.kv, seed,
                     {{"pairs", ds.size()}, {"top_left", tl}, {"source", mnist.empty() ? "synthetic" : mnist}},
                     started);
  return 0;
}

int cmd_train(Settings& s, const std::string& data, const std::string& validation,
              const std::string& resume, int argc, char** argv) {
  const std::string started = utc_now();
  TrainConfig tc = TrainConfig::from_kv(s.kv);
  if (tc.checkpoint_path.empty()) throw ConfigError("set --out (train.checkpoint)");
  if (tc.checkpoint_path.has_parent_path()) fs::create_directories(tc.checkpoint_path.parent_path());
  const int levels = levels_of(s.kv);
  const PairedDataset train = load_dataset(data, levels);
  if (train.size() == 0) throw DataError(data + ": no pairs");
  std::optional<PairedDataset> val;
  if (!validation.empty()) val = load_dataset(validation, levels);

  TrainState state;
  if (!resume.empty()) {
    state = load_training_checkpoint(resume);
  } else {
    KeyValues mk = s.kv;
    const QuantizedImage& x = train.inputs[0];
    const QuantizedImage& y = train.targets[0];
    if (!mk.has("model.in_h")) mk.set("model.in_h", std::to_string(x.height));
    if (!mk.has("model.in_w")) mk.set("model.in_w", std::to_string(x.width));
    if (!mk.has("model.channels")) mk.set("model.channels", std::to_string(y.channels));
    mk.set("model.levels", std::to_string(levels));
    if (!mk.has("model.upsample_stages")) {
      std::size_t st = 0;
      while ((x.height << st) < y.height) ++st;
      mk.set("model.upsample_stages", std::to_string(st));
    }
    mk.set("model.kind", to_string(objective_model(tc.objective)));
    const ModelConfig mc = ModelConfig::from_kv(mk);
    if (mc.out_h() != y.height || mc.out_w() != y.width) {
      throw DimensionError("model output " + std::to_string(mc.out_h()) + "x" + std::to_string(mc.out_w()) +
                           " does not match targets " + std::to_string(y.height) + "x" +
                           std::to_string(y.width));
    }
    state.bundle = init_params(mc, s.kv.get_u64("model.init_seed", tc.seed));
  }
  s.kv.merge(state.bundle.config.to_kv());
  std::cout << "training " << to_string(state.bundle.config.kind) << " model, "
            << state.bundle.parameter_count() << " parameters, " << train.size() << " pairs\n";
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = train_loop(tc, train, std::move(state), val ? &*val : nullptr, [&](const TrainLogEntry& e) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("step %llu  loss %.5f (%.4f bits)  lr %.3g  %.0fs", static_cast<unsigned long long>(e.step),
                e.loss, e.loss_bits, e.lr, secs);
    if (e.val_nll_bits) std::printf("  val %.4f", *e.val_nll_bits);
    std::printf("\n");
    std::fflush(stdout);
  });
  json log = json::array();
  for (const auto& e : r.log) {
    json j{{"step", e.step}, {"loss", e.loss}, {"loss_bits", e.loss_bits}, {"lr", e.lr}};
    if (e.val_nll_bits) j["val"] = *e.val_nll_bits;
    log.push_back(j);
  }
  write_run_manifest(tc.checkpoint_path.string() + ".manifest.json", "train", argc, argv, s.kv, tc.seed,
                     {{"checkpoint", tc.checkpoint_path.string()}, {"log", log}}, started);
  std::cout << "saved " << tc.checkpoint_path.string() << "\n";
  return 0;
}

Outputs generate(const ModelBundle& b, const PairedDataset& ds, const SamplePlan& plan,
                 std::size_t limit, std::size_t workers) {
  Outputs o;
  for (std::size_t i = 0; i < limit; ++i) {
    // Stream offsets keep every (input, sample) pair on its own RNG stream.
    SamplePlan p = plan;
    p.seed = plan.seed + i * 1000003ull;
    for (auto& y : sample_image(b, ds.inputs[i], p, workers)) {
      o.source.push_back(i);
      o.images.push_back(std::move(y));
    }
  }
  return o;
}

int cmd_sample(Settings& s, const std::string& model, const std::string& data, const std::string& out,
               std::size_t workers, int argc, char** argv) {
  const std::string started = utc_now();
  const ModelBundle b = load_bundle(model);
  const PairedDataset ds = load_dataset(data, b.config.levels);
  const SamplePlan plan = plan_from(s.kv);
  const Outputs o = generate(b, ds, plan, limit_of(s.kv, ds.size()), workers);
  save_outputs(o, out, data, "sample");
  std::cout << "wrote " << o.images.size() << " samples to " << out << "\n";
  write_run_manifest(fs::path(out) / "run_manifest.json", "sample", argc, argv, s.kv, plan.seed,
                     {{"model", model}, {"samples", o.images.size()}}, started);
  return 0;
}

int cmd_evaluate(Settings& s, const std::string& model, const std::string& data, const std::string& out,
                 bool corners, std::size_t workers, int argc, char** argv) {
  const std::string started = utc_now();
  const ModelBundle b = load_bundle(model);
  const PairedDataset ds = load_dataset(data, b.config.levels);
  const SamplePlan plan = plan_from(s.kv);
  const Outputs o = generate(b, ds, plan, limit_of(s.kv, ds.size()), workers);
  MetricsReport r = score(ds, o, to_string(b.config.kind));
  if (b.config.kind != ModelKind::mse) {
    for (std::size_t j = 0; j < o.images.size(); ++j) {
      const std::size_t i = o.source[j];
      r.images[j].nll_bits = nll_report(b, ds.inputs[i], ds.targets[i]);
    }
  }
  r.finalize();
  std::cout << r.to_text();
  json extra = json::parse(r.to_json());
  if (corners) {
    extra["corners"] = corner_summary(o.images);
    std::cout << "corners: " << extra["corners"].dump() << "\n";
  }
  if (!out.empty()) write_text(out, extra.dump(2) + "\n");
  write_run_manifest(out.empty() ? fs::path("evaluate.manifest.json") : fs::path(out + ".manifest.json"),
                     "evaluate", argc, argv, s.kv, plan.seed, extra, started);
  return 0;
}

int cmd_baseline_nn(Settings& s, const std::string& train_path, const std::string& data,
                    const std::string& out, int argc, char** argv) {
  const std::string started = utc_now();
  const int levels = levels_of(s.kv);
  const PairedDataset train = load_dataset(train_path, levels);
  const PairedDataset ds = load_dataset(data, levels);
  Outputs o;
  for (std::size_t i = 0; i < limit_of(s.kv, ds.size()); ++i) {
    o.source.push_back(i);
    o.images.push_back(nearest_neighbor_baseline(ds.inputs[i], train));
  }
  save_outputs(o, out, data, "nn");
  MetricsReport r = score(ds, o, "nearest_neighbor");
  std::cout << r.to_text();
  write_run_manifest(fs::path(out) / "run_manifest.json", "baseline-nn", argc, argv, s.kv, 0,
                     json::parse(r.to_json()), started);
  return 0;
}

int cmd_metrics(Settings& s, const std::string& data, const std::string& outputs, const std::string& out,
                bool corners, int argc, char** argv) {
  const std::string started = utc_now();
  const int levels = levels_of(s.kv);
  const PairedDataset ds = load_dataset(data, levels);
  const fs::path data_base = fs::absolute(data).parent_path();
  std::map<std::string, std::size_t> index;
  const auto entries = read_manifest(data);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    index[fs::weakly_canonical(resolve(data_base, entries[i].first)).string()] = i;
  }
  const fs::path out_base = fs::absolute(outputs).parent_path();
  Outputs o;
  for (const auto& [in, y] : read_manifest(outputs)) {
    const auto key = fs::weakly_canonical(resolve(out_base, in)).string();
    const auto it = index.find(key);
    if (it == index.end()) throw DataError(outputs + ": input " + in + " is not listed in " + data);
    o.source.push_back(it->second);
    o.images.push_back(from_image8(load_image(resolve(out_base, y)), levels));
  }
  if (o.images.empty()) throw DataError(outputs + ": no outputs");
  MetricsReport r = score(ds, o, s.kv.get("metrics.label", "outputs"));
  std::cout << r.to_text();
  json extra = json::parse(r.to_json());
  if (corners) {
    extra["corners"] = corner_summary(o.images);
    std::cout << "corners: " << extra["corners"].dump() << "\n";
  }
  if (!out.empty()) write_text(out, extra.dump(2) + "\n");
  write_run_manifest(out.empty() ? fs::path("metrics.manifest.json") : fs::path(out + ".manifest.json"),
                     "metrics", argc, argv, s.kv, 0, extra, started);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pixel-recursive super resolution toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", PIXREC_CODE_VERSION);

  Settings s;
  std::string out, data, model, train_data, validation, resume, outputs;
  std::optional<std::string> objective;
  std::optional<std::size_t> batch, count, canvas, input_size, samples, limit;
  std::optional<std::uint64_t> steps, seed, halve, log_every, eval_every, eval_pairs, ckpt_every;
  std::optional<double> lr, tau;
  std::optional<int> levels;
  std::optional<std::string> mnist;
  bool greedy = false, corners = false;
  std::size_t workers = 1;

  auto* gen = app.add_subcommand("gen-corners", "generate an MNIST-corners dataset");
  s.add_to(gen);
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--count", count, "number of pairs");
  gen->add_option("--canvas", canvas, "target side");
  gen->add_option("--input-size", input_size, "side of the conditioning input (0 keeps the canvas)");
  gen->add_option("--levels", levels, "intensity levels K");
  gen->add_option("--seed", seed, "generator seed");
  gen->add_option("--mnist", mnist, "IDX image file with source digits (default: synthetic)");

  auto* tr = app.add_subcommand("train", "train a model");
  s.add_to(tr);
  tr->add_option("--data", data, "training manifest")->required();
  tr->add_option("--out", out, "checkpoint path");
  tr->add_option("--validation", validation, "validation manifest");
  tr->add_option("--resume", resume, "continue from a training checkpoint");
  tr->add_option("--levels", levels, "intensity levels K");
  tr->add_option("--objective", objective, "O1, O2, pixel_ce or mse");
  tr->add_option("--batch-size", batch);
  tr->add_option("--steps", steps);
  tr->add_option("--lr", lr, "base learning rate");
  tr->add_option("--halve-every", halve, "steps per learning-rate halving");
  tr->add_option("--seed", seed);
  tr->add_option("--log-every", log_every);
  tr->add_option("--eval-every", eval_every);
  tr->add_option("--eval-pairs", eval_pairs);
  tr->add_option("--checkpoint-every", ckpt_every);

  auto add_sampling = [&](CLI::App* c) {
    c->add_option("--tau", tau, "sampling temperature");
    c->add_flag("--greedy", greedy, "argmax decoding");
    c->add_option("--seed", seed, "sampling seed");
    c->add_option("--samples", samples, "samples per input");
    c->add_option("--limit", limit, "use the first N pairs only");
    c->add_option("--workers", workers, "sampling threads");
  };
  auto* sm = app.add_subcommand("sample", "draw super-resolution samples");
  s.add_to(sm);
  sm->add_option("--model", model, "checkpoint")->required();
  sm->add_option("--data", data, "manifest of inputs")->required();
  sm->add_option("--out", out, "output directory")->required();
  add_sampling(sm);

  auto* ev = app.add_subcommand("evaluate", "sample, then score against ground truth");
  s.add_to(ev);
  ev->add_option("--model", model, "checkpoint")->required();
  ev->add_option("--data", data, "evaluation manifest")->required();
  ev->add_option("--out", out, "JSON report path");
  ev->add_flag("--corners", corners, "also classify corner exclusivity");
  add_sampling(ev);

  auto* nn = app.add_subcommand("baseline-nn", "nearest-neighbour baseline outputs");
  s.add_to(nn);
  nn->add_option("--train", train_data, "training manifest")->required();
  nn->add_option("--data", data, "query manifest")->required();
  nn->add_option("--out", out, "output directory")->required();
  nn->add_option("--levels", levels, "intensity levels K");
  nn->add_option("--limit", limit);

  auto* mt = app.add_subcommand("metrics", "score existing outputs");
  s.add_to(mt);
  mt->add_option("--data", data, "manifest of (input, ground truth)")->required();
  mt->add_option("--outputs", outputs, "manifest of (input, output)")->required();
  mt->add_option("--out", out, "JSON report path");
  mt->add_option("--levels", levels, "intensity levels K");
  mt->add_flag("--corners", corners, "also classify corner exclusivity");

  CLI11_PARSE(app, argc, argv);

  try {
    s.load();
    s.flag("data.levels", levels);
    s.flag("data.limit", limit);
    if (gen->parsed()) {
      s.flag("corners.count", count);
      s.flag("corners.canvas", canvas);
      s.flag("corners.input_size", input_size);
      s.flag("corners.levels", levels);
      s.flag("corners.seed", seed);
      s.flag("corners.mnist", mnist);
      return cmd_gen_corners(s, out, argc, argv);
    }
    if (tr->parsed()) {
      s.flag("train.objective", objective);
      s.flag("train.batch_size", batch);
      s.flag("train.steps", steps);
      s.flag("train.lr", lr);
      s.flag("train.halve_every", halve);
      s.flag("train.seed", seed);
      s.flag("train.log_every", log_every);
      s.flag("train.eval_every", eval_every);
      s.flag("train.eval_pairs", eval_pairs);
      s.flag("train.checkpoint_every", ckpt_every);
      if (!out.empty()) s.kv.set("train.checkpoint", out);
      return cmd_train(s, data, validation, resume, argc, argv);
    }
    s.flag("sample.tau", tau);
    s.flag("sample.seed", seed);
    s.flag("sample.count", samples);
    if (greedy) s.kv.set("sample.greedy", "true");
    if (sm->parsed()) return cmd_sample(s, model, data, out, workers, argc, argv);
    if (ev->parsed()) return cmd_evaluate(s, model, data, out, corners, workers, argc, argv);
    if (nn->parsed()) return cmd_baseline_nn(s, train_data, data, out, argc, argv);
    if (mt->parsed()) return cmd_metrics(s, data, outputs, out, corners, argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
