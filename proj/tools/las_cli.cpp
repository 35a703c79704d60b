// las: command-line front end for data generation, training, inference,
// evaluation and profiling.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <regex>

#include "CLI11.hpp"
#include "las/io.hpp"
#include "las/macs.hpp"
#include "las/metrics.hpp"
#include "las/network.hpp"
#include "las/training.hpp"

namespace fs = std::filesystem;
using namespace las;

namespace {

// Exit codes. CLI11 reports usage errors itself (unknown flag, missing
// option) with its own nonzero codes.
enum Exit : int {
  kOk = 0,
  kFailure = 1,
  kIo = 3,
  kCorrupt = 4,
  kConfig = 5,
  kShape = 6,
  kGradCheckFailed = 7,
};

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

int64_t round_up(int64_t v, int64_t m) { return (v + m - 1) / m * m; }

// Pads [3,H,W] on the bottom and right by edge replication.
Tensor pad_edge(const Tensor& img, int64_t h, int64_t w) {
  const int64_t c = img.dim(0), ih = img.dim(1), iw = img.dim(2);
  Tensor out({c, h, w});
  for (int64_t k = 0; k < c; ++k)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) out.at({k, y, x}) = img.at({k, std::min(y, ih - 1), std::min(x, iw - 1)});
  return out;
}

Tensor crop(const Tensor& map, int64_t h, int64_t w) {
  Tensor out({h, w});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) out.at({y, x}) = map.at({y, x});
  return out;
}

// ------------------------------------------------------------- gen-data

struct GenDataArgs {
  std::string config, out;
};

int gen_data(const GenDataArgs& a) {
  const io::ConfigFile cfg = io::ConfigFile::load(a.config);
  io::require_sections(cfg, {"scene"});
  const SceneSpec spec = io::scene_spec(cfg);
  io::write_dataset(a.out, gen_synthetic_dataset(spec));
  std::cout << "wrote " << spec.count << " samples to " << a.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  int stage = 1;
  std::string config, init, out;
};

int train(const TrainArgs& a) {
  const io::ConfigFile cfg = io::ConfigFile::load(a.config);
  io::require_sections(cfg, {"network", "train"});
  uint64_t init_seed = 0;
  const NetworkConfig net = io::network_config(cfg, &init_seed);
  io::TrainJob job = io::train_job(cfg);
  job.stage.stage = static_cast<Stage>(a.stage);
  if (job.data.empty()) throw ConfigError("[train] data: dataset directory is required");
  job.stage.validate();

  const WeightStore init = a.init.empty() ? WeightStore::initialize(net, init_seed) : io::load_weights(a.init, net);
  const Dataset data = io::read_dataset(job.data);
  Dataset eval_set;
  TrainHooks hooks;
  if (!job.eval_data.empty()) {
    eval_set = io::read_dataset(job.eval_data);
    hooks.eval_set = &eval_set;
  }
  const int64_t every = std::max<int64_t>(1, job.stage.steps / 20);
  hooks.on_step = [&](const StepRecord& r) {
    if (r.step % every == 0 || r.step + 1 == job.stage.steps)
      std::fprintf(stderr, "step %lld loss %.4f lr %.2e\n", static_cast<long long>(r.step), r.loss, r.lr);
  };
  hooks.on_eval = [](const EvalRecord& r) {
    std::fprintf(stderr, "eval %lld EPE %.3f D1 %.2f\n", static_cast<long long>(r.step), r.metrics.epe, r.metrics.d1);
  };

  TrainResult result;
  switch (job.stage.stage) {
    case Stage::One:
      result = run_stage1(data, init, net, job.stage, hooks);
      break;
    case Stage::Two:
      result = run_stage2(data, init, net, job.stage, hooks);
      break;
    case Stage::Three:
      result = run_stage3(data, SyntheticOracle(job.oracle_noise, job.oracle_seed), init, net, job.stage, hooks);
      break;
  }
  ensure_parent(a.out);
  io::save_weights(a.out, result.weights);
  if (!job.log.empty()) {
    ensure_parent(job.log);
    result.log.write(job.log);
  }
  std::cout << "saved " << a.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------- infer

struct InferArgs {
  std::string weights, left, right, out, config = "micro";
};

int infer(const InferArgs& a) {
  const NetworkConfig net = io::network_config_arg(a.config);
  const WeightStore w = io::load_weights(a.weights, net);
  const Tensor left = io::read_png(a.left), right = io::read_png(a.right);
  if (left.shape() != right.shape())
    throw ShapeError("left " + shape_str(left.shape()) + " and right " + shape_str(right.shape()) + " differ");
  const int64_t h = left.dim(1), wd = left.dim(2);
  const int64_t ph = round_up(h, 32), pw = round_up(wd, 32);
  Tensor disp;
  if (ph == h && pw == wd) {
    disp = forward(left, right, w, net).disparity.values;
  } else {
    disp = crop(forward(pad_edge(left, ph, pw), pad_edge(right, ph, pw), w, net).disparity.values, h, wd);
  }
  ensure_parent(a.out);
  io::write_pfm(a.out, disp);
  return kOk;
}

// ----------------------------------------------------------------- eval

struct EvalArgs {
  std::string pred_dir, gt_dir, report;
  bool non_occluded = false;
};

// Predictions are NNNNN_disp.pfm next to the dataset's NNNNN_gt.pfm.
int eval(const EvalArgs& a) {
  std::vector<std::string> stems;
  const std::regex gt_name(R"((\d+)_gt\.pfm)");
  if (!fs::is_directory(a.gt_dir)) throw IoError("eval: no such directory: " + a.gt_dir);
  if (!fs::is_directory(a.pred_dir)) throw IoError("eval: no such directory: " + a.pred_dir);
  for (const auto& e : fs::directory_iterator(a.gt_dir)) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (std::regex_match(name, m, gt_name)) stems.push_back(m[1]);
  }
  if (stems.empty()) throw IoError("eval: no *_gt.pfm files in " + a.gt_dir);
  std::sort(stems.begin(), stems.end());

  MetricAccumulator acc;
  for (const std::string& s : stems) {
    const fs::path gd(a.gt_dir), pd(a.pred_dir);
    const Tensor gt = io::read_pfm((gd / (s + "_gt.pfm")).string());
    const Tensor pred = io::read_pfm((pd / (s + "_disp.pfm")).string());
    Tensor mask(gt.shape(), 1.0f);
    if (fs::exists(gd / (s + "_valid.pfm"))) mask = io::read_pfm((gd / (s + "_valid.pfm")).string());
    if (a.non_occluded && fs::exists(gd / (s + "_occ.pfm"))) {
      const Tensor occ = io::read_pfm((gd / (s + "_occ.pfm")).string());
      for (int64_t i = 0; i < mask.numel(); ++i)
        if (occ[i] > 0.5f) mask[i] = 0.0f;
    }
    acc.add(pred, gt, mask);
  }
  const std::vector<MetricRow> rows{{fs::path(a.gt_dir).filename().string(), acc.result()}};
  ensure_parent(a.report);
  io::write_file(a.report, metrics_csv(rows));
  std::cout << metrics_markdown(rows);
  return kOk;
}

// ----------------------------------------------------------------- macs

struct MacsArgs {
  std::string config;
  int64_t height = 0, width = 0;
};

int macs_cmd(const MacsArgs& a) {
  const NetworkConfig net = io::network_config_arg(a.config);
  const int64_t h = round_up(a.height, 32), w = round_up(a.width, 32);
  const WeightStore weights = WeightStore::initialize(net, 0);
  MacsLedger ledger;
  {
    MacsScope scope(ledger, true);
    forward(Tensor({3, h, w}), Tensor({3, h, w}), weights, net);
  }
  std::printf("config %s, variant %s, input %lldx%lld", to_string(net.preset).c_str(),
              to_string(net.agg_variant).c_str(), static_cast<long long>(a.height),
              static_cast<long long>(a.width));
  if (h != a.height || w != a.width)
    std::printf(" padded to %lldx%lld", static_cast<long long>(h), static_cast<long long>(w));
  std::printf("\n");

  // Sections and their first-level subsections, e.g. aggregation/g3d.
  std::map<std::string, int64_t> detail;
  for (const auto& e : ledger.entries()) {
    const size_t first = e.op.find('/');
    const size_t second = first == std::string::npos ? first : e.op.find('/', first + 1);
    if (second != std::string::npos) detail[e.op.substr(0, second)] += e.macs;
  }
  for (const auto& [section, total] : ledger.by_section()) {
    std::printf("%-28s %16lld  %9.4f G\n", section.c_str(), static_cast<long long>(total), total * 1e-9);
    for (const auto& [sub, t] : detail)
      if (sub.rfind(section + "/", 0) == 0)
        std::printf("  %-26s %16lld  %9.4f G\n", sub.c_str(), static_cast<long long>(t), t * 1e-9);
  }
  std::printf("%-28s %16lld  %9.4f G\n", "total", static_cast<long long>(ledger.total()), ledger.total() * 1e-9);
  return kOk;
}

// ------------------------------------------------------------ gradcheck

struct GradCheckArgs {
  std::string config = "micro";
  int64_t samples = 200, height = 32, width = 64;
  uint64_t seed = 0;
  double tolerance = 1e-2;
};

int gradcheck(const GradCheckArgs& a) {
  uint64_t init_seed = 0;
  NetworkConfig net;
  if (a.config == "micro" || a.config == "paper-like") {
    net = NetworkConfig::preset_named(a.config);
  } else {
    const io::ConfigFile cfg = io::ConfigFile::load(a.config);
    io::require_sections(cfg, {"network", "train"});
    net = io::network_config(cfg, &init_seed);
  }
  const WeightStore w = WeightStore::initialize(net, init_seed);
  const NetworkGradCheck r = network_gradient_check(net, w, a.height, a.width, a.samples, a.seed, 1e-3, a.tolerance);
  std::printf("checked %lld coordinates, max relative error %.3e (tolerance %.1e)\n",
              static_cast<long long>(r.report.checked), r.report.max_rel_error, a.tolerance);
  if (!r.worst_name.empty())
    std::printf("worst: %s[%lld] analytic %.6e numeric %.6e\n", r.worst_name.c_str(),
                static_cast<long long>(r.report.worst_index), r.report.worst_analytic, r.report.worst_numeric);
  if (!r.report.passed) {
    std::fprintf(stderr, "las gradcheck: tolerance exceeded\n");
    return kGradCheckFailed;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lightweight stereo matching: data, training, inference and profiling"};
  app.require_subcommand(1);

  GenDataArgs gd;
  auto* c_gen = app.add_subcommand("gen-data", "Render a synthetic stereo dataset");
  c_gen->add_option("spec", gd.config, "Config with a [scene] section")->required();
  c_gen->add_option("out-dir", gd.out, "Output directory")->required();

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Run one training stage");
  c_train->add_option("--stage", tr.stage, "1 supervised, 2 self-distillation, 3 pseudo-labels")
      ->required()
      ->check(CLI::Range(1, 3));
  c_train->add_option("--config", tr.config, "Config with [network] and [train]")->required();
  c_train->add_option("--init", tr.init, "Initial weights (default: fresh initialization)");
  c_train->add_option("--out", tr.out, "Output weight file")->required();

  InferArgs in;
  auto* c_infer = app.add_subcommand("infer", "Predict a disparity map for one pair");
  c_infer->add_option("--weights", in.weights)->required();
  c_infer->add_option("--left", in.left)->required();
  c_infer->add_option("--right", in.right)->required();
  c_infer->add_option("--out", in.out, "Output PFM")->required();
  c_infer->add_option("--config", in.config, "Preset name or config file")->capture_default_str();

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Score NNNNN_disp.pfm predictions against a dataset");
  c_eval->add_option("--pred-dir", ev.pred_dir)->required();
  c_eval->add_option("--gt-dir", ev.gt_dir)->required();
  c_eval->add_option("--report", ev.report, "CSV output")->required();
  c_eval->add_flag("--non-occluded", ev.non_occluded, "Skip pixels flagged as occluded");

  MacsArgs mc;
  auto* c_macs = app.add_subcommand("macs", "Profile multiply-accumulates of one forward pass");
  c_macs->add_option("--config", mc.config, "Preset name or config file")->required();
  c_macs->add_option("--height", mc.height)->required()->check(CLI::PositiveNumber);
  c_macs->add_option("--width", mc.width)->required()->check(CLI::PositiveNumber);

  GradCheckArgs gc;
  auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference check of the whole network");
  c_grad->add_option("--config", gc.config, "Preset name or config file")->capture_default_str();
  c_grad->add_option("--samples", gc.samples)->capture_default_str()->check(CLI::PositiveNumber);
  c_grad->add_option("--height", gc.height)->capture_default_str();
  c_grad->add_option("--width", gc.width)->capture_default_str();
  c_grad->add_option("--seed", gc.seed)->capture_default_str();
  c_grad->add_option("--tolerance", gc.tolerance)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*c_gen) return gen_data(gd);
    if (*c_train) return train(tr);
    if (*c_infer) return infer(in);
    if (*c_eval) return eval(ev);
    if (*c_macs) return macs_cmd(mc);
    if (*c_grad) return gradcheck(gc);
  } catch (const CorruptFileError& e) {
    std::cerr << "las: corrupt file: " << e.what() << "\n";
    return kCorrupt;
  } catch (const VersionError& e) {
    std::cerr << "las: unsupported file version: " << e.what() << "\n";
    return kCorrupt;
  } catch (const IoError& e) {
    std::cerr << "las: i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const ConfigError& e) {
    std::cerr << "las: config error: " << e.what() << "\n";
    return kConfig;
  } catch (const ShapeError& e) {
    std::cerr << "las: shape error: " << e.what() << "\n";
    return kShape;
  } catch (const std::exception& e) {
    std::cerr << "las: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
