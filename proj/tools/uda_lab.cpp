// Command-line entry point: data generation, training runs, diagnostics, and
// ablation sweeps. Machine-readable output goes to files; stdout carries
// progress only.

#include "uda/analysis.hpp"
#include "uda/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace uda;

namespace {

constexpr int kExitGradCheckFailed = 1;
constexpr int kExitBadConfig = 2;
constexpr int kExitNonfiniteLoss = 3;
constexpr int kExitIncompatibleDiagnostic = 4;
constexpr int kExitSweepRunFailed = 5;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash8(const RunConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(run_config_to_json(cfg))));
  return std::string(buf).substr(0, 8);
}

std::string timestamp_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::tm tm_buf{};
  gmtime_r(&t, &tm_buf);
  std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", &tm_buf);
  return buf;
}

// Output root: UDA_LAB_OUT overrides the config's output_dir.
fs::path output_root(const RunConfig& cfg) {
  if (const char* env = std::getenv("UDA_LAB_OUT")) return fs::path(env);
  return fs::path(cfg.output_dir);
}

fs::path resolve_run_dir(const RunConfig& cfg, const std::string& explicit_out) {
  if (!explicit_out.empty()) return fs::path(explicit_out);
  return output_root(cfg) / (config_hash8(cfg) + "-" + timestamp_now());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << text;
}

// ---- train -----------------------------------------------------------------

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& explicit_out) {
  RunConfig cfg;
  try {
    cfg = run_config_from_json_file(config_path, overrides);
  } catch (const std::exception& e) {
    std::cerr << "invalid config " << config_path << ": " << e.what() << "\n";
    return kExitBadConfig;
  }
  const fs::path dir = resolve_run_dir(cfg, explicit_out);
  fs::create_directories(dir);
  std::cout << "run dir: " << dir.string() << "\n";
  try {
    const TrainResult res = train(cfg);
    write_metrics_csv(res.history, (dir / "metrics.csv").string());
    save_checkpoint(res.model, (dir / "checkpoint.json").string());
    write_text(dir / "config.json", run_config_to_json(cfg));
    const MetricsRecord& last = res.history.back();
    std::cout << "done: source_acc=" << last.source_acc << " target_acc=" << last.target_acc
              << " (" << res.history.size() << " epochs)\n";
    return 0;
  } catch (const TrainAbort& e) {
    std::cerr << "nonfinite loss at epoch " << e.epoch << " step " << e.step
              << " (ce=" << e.breakdown.ce << " adv=" << e.breakdown.adv
              << " tc=" << e.breakdown.tc << "): " << e.what() << "\n";
    return kExitNonfiniteLoss;
  }
}

// ---- analyze ---------------------------------------------------------------

struct Diagnostics {
  bool jacobian = false;
  bool trajectory = false;
  bool adaptability = false;  // a-distance + lambda + gap (+ rho with baseline)
  bool fourier = false;
  bool embeddings = false;
};

Diagnostics parse_which(const std::vector<std::string>& which, Modality modality) {
  Diagnostics d;
  for (const std::string& w : which) {
    if (w == "jacobian") d.jacobian = true;
    else if (w == "trajectory") d.trajectory = true;
    else if (w == "adaptability") d.adaptability = true;
    else if (w == "fourier") d.fourier = true;
    else if (w == "embeddings") d.embeddings = true;
    else if (w == "all") {
      d.jacobian = d.trajectory = d.adaptability = d.embeddings = true;
      if (modality == Modality::kImage) d.fourier = true;
    } else {
      throw std::invalid_argument("unknown diagnostic: " + w);
    }
  }
  return d;
}

void write_sensitivity_csv(const fs::path& path, const SensitivityReport& source,
                           const SensitivityReport& target) {
  std::ofstream out(path);
  out << "domain,sample,jacobian_norm\n";
  auto dump = [&out](const char* domain, const SensitivityReport& rep) {
    for (std::size_t i = 0; i < rep.per_sample.size(); ++i)
      out << domain << "," << i << "," << fmt(rep.per_sample[i]) << "\n";
    out << domain << ",mean," << fmt(rep.mean_norm) << "\n";
  };
  dump("source", source);
  dump("target", target);
}

// Anchor selection: scan eval-split target samples in order and keep the
// first correctly predicted ones (same class for the first curve, three
// distinct classes for the second when available).
Tensor pick_anchors(const ModelBundle& model, const DomainPair& pair, bool same_class) {
  const Tensor x = rows_subset(pair.x_target(), pair.eval_idx_target());
  const Tensor y = rows_subset(pair.y_target_eval(), pair.eval_idx_target());
  const Tensor probs = forward_h(model, x).y_prob;
  const Index c = y.cols();
  auto argmax = [c](const Tensor& t, Index row) {
    Index best = 0;
    for (Index j = 1; j < c; ++j)
      if (t.at(row, j) > t.at(row, best)) best = j;
    return best;
  };
  std::vector<Index> chosen;
  std::vector<bool> class_used(static_cast<std::size_t>(c), false);
  auto taken = [&chosen](Index i) {
    return std::find(chosen.begin(), chosen.end(), i) != chosen.end();
  };
  for (Index i = 0; i < x.rows() && chosen.size() < 3; ++i) {
    const Index truth = argmax(y, i);
    if (argmax(probs, i) != truth) continue;
    if (same_class) {
      if (!chosen.empty() && truth != argmax(y, chosen.front())) continue;
    } else {
      if (class_used[static_cast<std::size_t>(truth)]) continue;
      class_used[static_cast<std::size_t>(truth)] = true;
    }
    chosen.push_back(i);
  }
  // Second pass for cross-class triples when fewer than 3 classes exist, then
  // a final fill in case the model predicts too poorly.
  for (Index i = 0; !same_class && chosen.size() < 3 && i < x.rows(); ++i) {
    if (!taken(i) && argmax(probs, i) == argmax(y, i)) chosen.push_back(i);
  }
  for (Index i = 0; chosen.size() < 3 && i < x.rows(); ++i)
    if (!taken(i)) chosen.push_back(i);
  Tensor anchors({3, x.cols()});
  for (Index r = 0; r < 3; ++r)
    for (Index col = 0; col < x.cols(); ++col)
      anchors.at(r, col) = x.at(chosen[static_cast<std::size_t>(r)], col);
  return anchors;
}

void write_trajectory_csv(const fs::path& path, const ModelBundle& model, const DomainPair& pair) {
  std::ofstream out(path);
  out << "kind,point_type,theta,jacobian_norm\n";
  for (const bool same : {true, false}) {
    const char* kind = same ? "same_class" : "cross_class";
    TrajectoryCurve curve;
    try {
      curve = trajectory_sensitivity(model, pick_anchors(model, pair, same), 72);
    } catch (const std::invalid_argument&) {
      continue;  // collinear anchors: skip this curve
    }
    for (std::size_t i = 0; i < curve.theta.size(); ++i)
      out << kind << ",grid," << fmt(curve.theta[i]) << "," << fmt(curve.norms[i]) << "\n";
    for (int a = 0; a < 3; ++a) {
      const auto pt = curve.point(curve.anchor_theta[static_cast<std::size_t>(a)]);
      Tensor row({1, static_cast<Index>(pt.size())});
      for (std::size_t j = 0; j < pt.size(); ++j) row[static_cast<Index>(j)] = pt[j];
      const double norm = mean_jacobian_norm(model, row).mean_norm;
      out << kind << ",anchor," << fmt(curve.anchor_theta[static_cast<std::size_t>(a)]) << ","
          << fmt(norm) << "\n";
    }
  }
}

void write_fourier_csv(const fs::path& path, const FourierHeatmap& map) {
  std::ofstream out(path);
  out << "freq_i,freq_j,error\n";
  for (Index i = 0; i < map.height; ++i)
    for (Index j = 0; j < map.width; ++j)
      out << i << "," << j << "," << fmt(map.error[static_cast<std::size_t>(i * map.width + j)])
          << "\n";
}

int cmd_analyze(const std::string& checkpoint_path, const std::string& config_path,
                const std::vector<std::string>& which, const std::string& explicit_out,
                const std::string& baseline_path, std::uint64_t probe_seed) {
  RunConfig cfg;
  try {
    cfg = run_config_from_json_file(config_path);
  } catch (const std::exception& e) {
    std::cerr << "invalid config " << config_path << ": " << e.what() << "\n";
    return kExitBadConfig;
  }
  ModelBundle model;
  try {
    model = load_checkpoint(checkpoint_path);
  } catch (const std::exception& e) {
    std::cerr << "cannot load checkpoint " << checkpoint_path << ": " << e.what() << "\n";
    return kExitBadConfig;
  }
  const DomainPair pair = build_dataset(cfg.dataset, cfg.seeds.data);

  Diagnostics diag;
  try {
    diag = parse_which(which.empty() ? std::vector<std::string>{"all"} : which, pair.modality());
  } catch (const std::invalid_argument& e) {
    std::cerr << e.what() << "\n";
    return kExitBadConfig;
  }
  if (diag.fourier && pair.modality() != Modality::kImage) {
    std::cerr << "fourier diagnostic requires image data\n";
    return kExitIncompatibleDiagnostic;
  }

  const fs::path dir = resolve_run_dir(cfg, explicit_out);
  fs::create_directories(dir);
  std::cout << "analysis dir: " << dir.string() << "\n";

  if (diag.jacobian) {
    const SensitivityReport src =
        mean_jacobian_norm(model, rows_subset(pair.x_source(), pair.eval_idx_source()));
    const SensitivityReport tgt =
        mean_jacobian_norm(model, rows_subset(pair.x_target(), pair.eval_idx_target()));
    write_sensitivity_csv(dir / "sensitivity.csv", src, tgt);
    std::cout << "sensitivity: source_mean=" << src.mean_norm << " target_mean=" << tgt.mean_norm
              << "\n";
  }
  if (diag.trajectory) {
    write_trajectory_csv(dir / "trajectory.csv", model, pair);
    std::cout << "trajectory curves written\n";
  }
  if (diag.adaptability) {
    AdaptabilityReport rep = adaptability_report(model.phi, pair, probe_seed);
    json j{{"d_a", rep.d_a},
           {"lambda_estimate", rep.lambda_estimate},
           {"nonconservative_gap", rep.nonconservative_gap},
           {"probe_seed", rep.probe_seed},
           {"rho", nullptr}};
    if (!baseline_path.empty()) {
      const ModelBundle baseline = load_checkpoint(baseline_path);
      const Tensor xt = rows_subset(pair.x_target(), pair.eval_idx_target());
      const Tensor yt = rows_subset(pair.y_target_eval(), pair.eval_idx_target());
      const double before = 1.0 - evaluate(baseline, xt, yt);
      const double after = 1.0 - evaluate(model, xt, yt);
      try {
        rep.rho = rho_estimate(before, after);
        j["rho"] = rep.rho;
      } catch (const std::invalid_argument& e) {
        std::cout << "rho: " << e.what() << "\n";
      }
    }
    write_text(dir / "adaptability.json", j.dump(2) + "\n");
    std::cout << "adaptability: d_A=" << rep.d_a << " lambda=" << rep.lambda_estimate
              << " gap=" << rep.nonconservative_gap << "\n";
  }
  if (diag.fourier) {
    const FourierHeatmap map = fourier_sensitivity(model, pair, true, 1.0, probe_seed);
    write_fourier_csv(dir / "fourier.csv", map);
    std::cout << "fourier: high_frequency_mean=" << high_frequency_mean(map) << "\n";
  }
  if (diag.embeddings) {
    export_embeddings(model.phi, pair, (dir / "embeddings.csv").string());
    std::cout << "embeddings written\n";
  }
  return 0;
}

// ---- sweep -----------------------------------------------------------------

struct SweepRow {
  std::string preset;
  double source_acc = 0.0, target_acc = 0.0, d_a = 0.0, lambda = 0.0;
  double jac_source = 0.0, jac_target = 0.0;
  std::uint64_t dataset_hash = 0;
  bool failed = false;
  std::string error;
};

SweepRow run_sweep_preset(RunConfig cfg, const std::string& preset, const fs::path& sweep_dir,
                          std::uint64_t probe_seed) {
  SweepRow row;
  row.preset = preset;
  try {
    cfg.preset = preset;
    const DomainPair pair = build_dataset(cfg.dataset, cfg.seeds.data);
    row.dataset_hash = pair.data_hash();
    const TrainResult res = train_on(cfg, pair);
    const fs::path dir = sweep_dir / preset;
    fs::create_directories(dir);
    write_metrics_csv(res.history, (dir / "metrics.csv").string());
    save_checkpoint(res.model, (dir / "checkpoint.json").string());
    write_text(dir / "config.json", run_config_to_json(cfg));
    row.source_acc = res.history.back().source_acc;
    row.target_acc = res.history.back().target_acc;
    row.jac_source =
        mean_jacobian_norm(res.model, rows_subset(pair.x_source(), pair.eval_idx_source())).mean_norm;
    row.jac_target =
        mean_jacobian_norm(res.model, rows_subset(pair.x_target(), pair.eval_idx_target())).mean_norm;
    row.d_a = a_distance(res.model.phi, pair.x_source(), pair.x_target(), probe_seed);
    row.lambda = ideal_joint_risk(res.model.phi, pair, probe_seed);
  } catch (const std::exception& e) {
    row.failed = true;
    row.error = e.what();
  }
  return row;
}

int cmd_sweep(const std::string& config_path, const std::vector<std::string>& overrides,
              std::vector<std::string> presets, const std::string& explicit_out, int parallel,
              std::uint64_t probe_seed) {
  RunConfig cfg;
  try {
    cfg = run_config_from_json_file(config_path, overrides);
    for (const std::string& p : presets) parse_preset(p);
  } catch (const std::exception& e) {
    std::cerr << "invalid config " << config_path << ": " << e.what() << "\n";
    return kExitBadConfig;
  }
  if (presets.empty())
    presets = {"source_only", "dann", "dann+tc", "cliv", "cliv+tc"};
  const fs::path dir = resolve_run_dir(cfg, explicit_out);
  fs::create_directories(dir);
  std::cout << "sweep dir: " << dir.string() << " (" << presets.size() << " presets)\n";

  std::vector<SweepRow> rows(presets.size());
  if (parallel <= 1) {
    for (std::size_t i = 0; i < presets.size(); ++i)
      rows[i] = run_sweep_preset(cfg, presets[i], dir, probe_seed);
  } else {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next.fetch_add(1); i < presets.size(); i = next.fetch_add(1))
        rows[i] = run_sweep_preset(cfg, presets[i], dir, probe_seed);
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < parallel; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  std::ofstream out(dir / "summary.csv");
  out << "preset,source_acc,target_acc,d_a,lambda,jac_source,jac_target,dataset_hash\n";
  bool any_failed = false;
  for (const SweepRow& row : rows) {
    if (row.failed) {
      any_failed = true;
      std::cerr << "preset " << row.preset << " failed: " << row.error << "\n";
      continue;
    }
    char hash[17];
    std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(row.dataset_hash));
    out << row.preset << "," << fmt(row.source_acc) << "," << fmt(row.target_acc) << ","
        << fmt(row.d_a) << "," << fmt(row.lambda) << "," << fmt(row.jac_source) << ","
        << fmt(row.jac_target) << "," << hash << "\n";
    std::cout << row.preset << ": source=" << row.source_acc << " target=" << row.target_acc
              << " d_A=" << row.d_a << " lambda=" << row.lambda << "\n";
  }
  return any_failed ? kExitSweepRunFailed : 0;
}

// ---- gen-data --------------------------------------------------------------

int cmd_gen_data(const DatasetSpec& spec, std::uint64_t seed, const std::string& out_path) {
  const DomainPair pair = build_dataset(spec, seed);
  export_domain_pair_csv(pair, out_path);
  std::cout << "wrote " << out_path << " (" << pair.x_source().rows() << "+"
            << pair.x_target().rows() << " samples, dim " << pair.input_dim() << ")\n";
  return 0;
}

// ---- grad-check ------------------------------------------------------------

int cmd_grad_check(std::uint64_t seed) {
  const auto results = loss_grad_check_battery(seed);
  std::printf("%-8s %14s %14s  %s\n", "loss", "max_abs_err", "max_rel_err", "verdict");
  std::string offender;
  for (const LossGradCheck& r : results) {
    const bool ok = r.report.max_rel_error < 1e-5;
    if (!ok && offender.empty()) offender = r.loss;
    std::printf("%-8s %14.3e %14.3e  %s\n", r.loss.c_str(), r.report.max_abs_error,
                r.report.max_rel_error, ok ? "ok" : "FAIL");
  }
  if (!offender.empty()) {
    std::cerr << "gradient check failed for loss: " << offender << "\n";
    return kExitGradCheckFailed;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale unsupervised domain adaptation laboratory"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model from a JSON config");
  std::string config_path, out_dir;
  std::vector<std::string> overrides;
  train_cmd->add_option("--config", config_path, "Run config JSON")->required();
  train_cmd->add_option("--set", overrides, "Dotted-path override key=value");
  train_cmd->add_option("--out", out_dir, "Output directory (default: <root>/<hash>-<timestamp>)");

  // analyze
  auto* analyze_cmd = app.add_subcommand("analyze", "Run diagnostics on a checkpoint");
  std::string ckpt_path, a_config, a_out, baseline;
  std::vector<std::string> which;
  std::uint64_t probe_seed = 99;
  analyze_cmd->add_option("--checkpoint", ckpt_path, "Checkpoint JSON")->required();
  analyze_cmd->add_option("--config", a_config, "Run config JSON (dataset + seeds)")->required();
  analyze_cmd->add_option("--which", which,
                          "Diagnostics: jacobian, trajectory, adaptability, fourier, embeddings, all")
      ->delimiter(',');
  analyze_cmd->add_option("--out", a_out, "Output directory");
  analyze_cmd->add_option("--baseline", baseline, "Baseline checkpoint for the rho estimate");
  analyze_cmd->add_option("--probe-seed", probe_seed, "Probe classifier seed");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "Train several presets with shared seeds");
  std::string s_config, s_out;
  std::vector<std::string> s_overrides, presets;
  int parallel = 1;
  sweep_cmd->add_option("--config", s_config, "Base run config JSON")->required();
  sweep_cmd->add_option("--set", s_overrides, "Dotted-path override key=value");
  sweep_cmd->add_option("--presets", presets, "Method presets")->delimiter(',');
  sweep_cmd->add_option("--out", s_out, "Sweep output directory");
  sweep_cmd->add_option("--parallel", parallel, "Run up to N presets concurrently");

  // gen-data
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic domain pair as CSV");
  DatasetSpec spec;
  std::uint64_t gen_seed = 2;
  std::string gen_out = "pair.csv";
  gen_cmd->add_option("--dataset", spec.kind, "two_moons | shifted_blobs | glyph_images");
  gen_cmd->add_option("--n", spec.n_per_domain, "Samples per domain");
  gen_cmd->add_option("--noise", spec.noise_sigma, "Two-moons noise sigma");
  gen_cmd->add_option("--rotation", spec.rotation_deg, "Two-moons rotation (degrees)");
  gen_cmd->add_option("--classes", spec.num_classes, "Blob class count");
  gen_cmd->add_option("--dim", spec.dim, "Blob dimensionality");
  gen_cmd->add_option("--shift", spec.shift, "Blob shift vector")->delimiter(',');
  gen_cmd->add_option("--size", spec.image_size, "Glyph image size");
  gen_cmd->add_option("--shift-kind", spec.shift_kind, "Glyph shift kind");
  gen_cmd->add_option("--shift-magnitude", spec.shift_magnitude, "Glyph shift magnitude");
  gen_cmd->add_option("--seed", gen_seed, "Dataset seed");
  gen_cmd->add_option("--out", gen_out, "Output CSV path");

  // grad-check
  auto* grad_cmd = app.add_subcommand("grad-check", "Finite-difference check of every loss");
  std::uint64_t grad_seed = 2024;
  grad_cmd->add_option("--seed", grad_seed, "Battery seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return cmd_train(config_path, overrides, out_dir);
    if (*analyze_cmd) return cmd_analyze(ckpt_path, a_config, which, a_out, baseline, probe_seed);
    if (*sweep_cmd) return cmd_sweep(s_config, s_overrides, presets, s_out, parallel, probe_seed);
    if (*gen_cmd) return cmd_gen_data(spec, gen_seed, gen_out);
    if (*grad_cmd) return cmd_grad_check(grad_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitBadConfig;
  }
  return 0;
}
