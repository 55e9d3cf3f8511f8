// Acceptance suite: one pass/fail line per criterion, nonzero exit if any
// criterion fails. Runs the full toy-scale experiment battery, so expect a
// few minutes of wall time.

#include "uda/analysis.hpp"
#include "uda/losses.hpp"
#include "uda/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

using namespace uda;

namespace {

int failures = 0;

void report(int id, bool ok, const std::string& detail) {
  std::printf("[%s] criterion %d: %s\n", ok ? "PASS" : "FAIL", id, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

std::string fmt(double v, int prec = 3) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
  return buf;
}

RunConfig moons_config(std::uint64_t seed, const std::string& preset) {
  RunConfig cfg;
  cfg.dataset.kind = "two_moons";
  cfg.dataset.n_per_domain = 300;
  cfg.dataset.noise_sigma = 0.1;
  cfg.dataset.rotation_deg = 45.0;
  cfg.epochs = 100;
  cfg.preset = preset;
  cfg.seeds = {seed, seed + 1000, seed + 2000};
  return cfg;
}

struct MoonsRun {
  TrainResult result;
  double train_seconds = 0.0;
};

constexpr std::uint64_t kSeeds[3] = {1, 2, 3};
constexpr std::uint64_t kProbeSeeds[3] = {99, 100, 101};

// ---- criterion 1: gradient correctness --------------------------------------

void criterion_1() {
  const double t0 = now_seconds();
  const auto results = loss_grad_check_battery(2024);
  const double elapsed = now_seconds() - t0;
  bool ok = results.size() == 8 && elapsed < 30.0;
  double worst = 0.0;
  std::string worst_name = "-";
  for (const auto& r : results) {
    if (r.report.max_rel_error > worst) {
      worst = r.report.max_rel_error;
      worst_name = r.loss;
    }
    if (r.report.max_rel_error >= 1e-5) ok = false;
  }
  report(1, ok,
         "gradient correctness for ce/vat/aug/tc/dann/cdan/cliv/total: worst rel err " +
             fmt(worst, 10) + " (" + worst_name + ") < 1e-5, " + fmt(elapsed, 1) + "s < 30s");
}

// ---- criteria 2-5 share the trained two-moons models -------------------------

int main_criteria_2_to_5() {
  std::map<std::string, std::vector<MoonsRun>> runs;
  std::map<std::string, std::vector<DomainPair>> pairs;
  bool runtime_ok = true;
  double slowest = 0.0;
  for (const std::string preset : {"source_only", "dann", "dann+tc", "cliv+tc"}) {
    for (std::uint64_t seed : kSeeds) {
      const RunConfig cfg = moons_config(seed, preset);
      DomainPair pair = build_dataset(cfg.dataset, cfg.seeds.data);
      const double t0 = now_seconds();
      MoonsRun run{train_on(cfg, pair), 0.0};
      run.train_seconds = now_seconds() - t0;
      slowest = std::max(slowest, run.train_seconds);
      if (run.train_seconds >= 60.0) runtime_ok = false;
      runs[preset].push_back(std::move(run));
      pairs[preset].push_back(std::move(pair));
    }
  }

  auto avg_target_acc = [&](const std::string& preset) {
    double s = 0.0;
    for (const MoonsRun& r : runs[preset]) s += r.result.history.back().target_acc;
    return s / 3.0;
  };

  // Criterion 2: adaptation ordering and absolute bar.
  {
    const double so = avg_target_acc("source_only");
    const double dtc = avg_target_acc("dann+tc");
    const double ctc = avg_target_acc("cliv+tc");
    const bool ok = so < dtc && dtc <= ctc && ctc >= 0.95 && runtime_ok;
    report(2, ok,
           "two-moons 45deg target accuracy (3-seed avg): source_only " + fmt(so) + " < dann+tc " +
               fmt(dtc) + " <= cliv+tc " + fmt(ctc) + " and cliv+tc >= 0.95; slowest run " +
               fmt(slowest, 1) + "s < 60s");
  }

  // Criterion 3: sensitivity reduction.
  {
    const double t0 = now_seconds();
    double jac_t_so = 0.0, jac_t_ctc = 0.0, jac_s_so = 0.0, jac_s_ctc = 0.0;
    for (int i = 0; i < 3; ++i) {
      const DomainPair& pair_so = pairs["source_only"][static_cast<std::size_t>(i)];
      const DomainPair& pair_ctc = pairs["cliv+tc"][static_cast<std::size_t>(i)];
      const ModelBundle& so = runs["source_only"][static_cast<std::size_t>(i)].result.model;
      const ModelBundle& ctc = runs["cliv+tc"][static_cast<std::size_t>(i)].result.model;
      jac_t_so +=
          mean_jacobian_norm(so, rows_subset(pair_so.x_target(), pair_so.eval_idx_target())).mean_norm;
      jac_s_so +=
          mean_jacobian_norm(so, rows_subset(pair_so.x_source(), pair_so.eval_idx_source())).mean_norm;
      jac_t_ctc +=
          mean_jacobian_norm(ctc, rows_subset(pair_ctc.x_target(), pair_ctc.eval_idx_target()))
              .mean_norm;
      jac_s_ctc +=
          mean_jacobian_norm(ctc, rows_subset(pair_ctc.x_source(), pair_ctc.eval_idx_source()))
              .mean_norm;
    }
    jac_t_so /= 3.0;
    jac_t_ctc /= 3.0;
    jac_s_so /= 3.0;
    jac_s_ctc /= 3.0;
    const double elapsed = now_seconds() - t0;
    const bool ok = jac_t_ctc <= 0.8 * jac_t_so && jac_s_ctc <= 2.0 * jac_s_so && elapsed < 60.0;
    report(3, ok,
           "jacobian norms (3-seed avg): target " + fmt(jac_t_ctc) + " <= 0.8*" + fmt(jac_t_so) +
               ", source " + fmt(jac_s_ctc) + " <= 2*" + fmt(jac_s_so) + ", " + fmt(elapsed, 1) +
               "s < 60s");
  }

  // Criterion 4: A-distance direction with margin.
  {
    double da_so = 0.0, da_ctc = 0.0;
    for (int i = 0; i < 3; ++i) {
      for (std::uint64_t ps : kProbeSeeds) {
        const DomainPair& pso = pairs["source_only"][static_cast<std::size_t>(i)];
        const DomainPair& pct = pairs["cliv+tc"][static_cast<std::size_t>(i)];
        da_so += a_distance(runs["source_only"][static_cast<std::size_t>(i)].result.model.phi,
                            pso.x_source(), pso.x_target(), ps);
        da_ctc += a_distance(runs["cliv+tc"][static_cast<std::size_t>(i)].result.model.phi,
                             pct.x_source(), pct.x_target(), ps);
      }
    }
    da_so /= 9.0;
    da_ctc /= 9.0;
    const bool ok = da_ctc <= da_so - 0.1;
    report(4, ok,
           "A-distance (3-seed avg): cliv+tc " + fmt(da_ctc) + " <= source_only " + fmt(da_so) +
               " - 0.1");
  }

  // Criterion 5: adaptability direction.
  {
    double lam_dann = 0.0, lam_ctc = 0.0;
    for (int i = 0; i < 3; ++i) {
      for (std::uint64_t ps : kProbeSeeds) {
        lam_dann += ideal_joint_risk(runs["dann"][static_cast<std::size_t>(i)].result.model.phi,
                                     pairs["dann"][static_cast<std::size_t>(i)], ps);
        lam_ctc += ideal_joint_risk(runs["cliv+tc"][static_cast<std::size_t>(i)].result.model.phi,
                                    pairs["cliv+tc"][static_cast<std::size_t>(i)], ps);
      }
    }
    lam_dann /= 9.0;
    lam_ctc /= 9.0;
    const bool ok = lam_ctc <= lam_dann;
    report(5, ok,
           "ideal-joint-hypothesis risk (3-seed avg): cliv+tc " + fmt(lam_ctc, 4) + " <= dann " +
               fmt(lam_dann, 4));
  }
  return 0;
}

// ---- criterion 6: structural identities --------------------------------------

void criterion_6() {
  bool ok = true;
  std::string detail;
  Rng rng(606);

  // TC additivity and the weighted objective combination on a seeded batch.
  {
    BundleConfig bc;
    bc.adv_kind = AdvKind::kCliv;
    bc.num_classes = 2;
    bc.with_teacher = true;
    ModelBundle b = make_bundle(bc, rng);
    Tensor x_s({8, 2}), x_t({8, 2}), y_s({8, 2});
    for (Index i = 0; i < x_s.numel(); ++i) {
      x_s[i] = rng.uniform(-1, 1);
      x_t[i] = rng.uniform(-1, 1);
    }
    for (Index i = 0; i < 8; ++i) y_s[i * 2 + (i % 2)] = 1.0;
    const OpRegistry reg = builtin_registry(Modality::kPoints2d);
    LossWeights w;
    Graph g;
    GraphBinding bind(g, b);
    StepOptions opt;
    opt.grl_lambda = 0.7;
    opt.tc_enabled = true;
    opt.use_teacher = true;
    Rng srng(607);
    const StepObjective obj =
        total_objective(bind, x_s, y_s, x_t, w, &reg, MixSpec{4}, srng, opt);
    const double tc_err = std::abs(obj.breakdown.tc - (obj.breakdown.vat + obj.breakdown.aug));
    const double total_err =
        std::abs(obj.breakdown.total - (obj.breakdown.ce + w.lambda_cliv * obj.breakdown.adv +
                                        w.lambda_tc * obj.breakdown.tc));
    if (tc_err >= 1e-12 || total_err >= 1e-12) ok = false;
    detail += "tc additivity " + fmt(tc_err, 15) + ", objective combination " + fmt(total_err, 15);
  }
  // L_CLIV == L_DANN at C=1.
  {
    BundleConfig bc;
    bc.adv_kind = AdvKind::kCliv;
    bc.num_classes = 1;
    bc.cliv_separate_heads = false;
    ModelBundle cliv = make_bundle(bc, rng);
    ModelBundle dann = cliv;
    dann.adv_kind = AdvKind::kDann;
    Tensor x_s({6, 2}), x_t({6, 2}), ones({6, 1});
    for (Index i = 0; i < x_s.numel(); ++i) {
      x_s[i] = rng.uniform(-1, 1);
      x_t[i] = rng.uniform(-1, 1);
    }
    ones.array().setOnes();
    const double diff = std::abs(cliv_loss(cliv, x_s, ones, x_t) - dann_loss(dann, x_s, x_t));
    if (diff >= 1e-12) ok = false;
    detail += "; cliv/dann C=1 diff " + fmt(diff, 15);
  }
  // EMA endpoints.
  {
    BundleConfig bc;
    bc.with_teacher = true;
    ModelBundle b = make_bundle(bc, rng);
    b.phi.layers[0].weight[0] += 1.25;
    const Tensor teacher_before = b.teacher->phi.layers[0].weight;
    ema_update(b, 1.0);
    const bool frozen = bitwise_equal(b.teacher->phi.layers[0].weight, teacher_before);
    ema_update(b, 0.0);
    const bool copied = bitwise_equal(b.teacher->phi.layers[0].weight, b.phi.layers[0].weight);
    if (!frozen || !copied) ok = false;
    detail += std::string("; ema endpoints ") + (frozen && copied ? "exact" : "BROKEN");
  }
  // Dirichlet simplex sum.
  {
    double worst = 0.0;
    for (int k = 1; k <= 6; ++k) {
      const auto a = sample_dirichlet(k, rng);
      double s = 0.0;
      for (double v : a) s += v;
      worst = std::max(worst, std::abs(s - 1.0));
    }
    if (worst >= 1e-12) ok = false;
    detail += "; dirichlet sum err " + fmt(worst, 15);
  }
  // mix_augment K=1 reduces to a single op application under a cloned RNG.
  {
    const OpRegistry reg = builtin_registry(Modality::kPoints2d);
    Tensor x({2});
    x[0] = 0.3;
    x[1] = -0.6;
    Rng r1(608), r2(608);
    const Tensor mixed = mix_augment(x, reg, MixSpec{1}, r1);
    const AugOp& op = reg.ops[r2.uniform_index(reg.ops.size())];
    const Tensor direct = op.apply(x, r2.uniform(op.lo, op.hi), r2);
    const bool same = bitwise_equal(mixed, direct);
    if (!same) ok = false;
    detail += std::string("; K=1 reduction ") + (same ? "exact" : "BROKEN");
  }
  report(6, ok, "structural identities: " + detail);
}

// ---- criterion 7: VAT fidelity ------------------------------------------------

void criterion_7() {
  BundleConfig bc;
  bc.input_dim = 2;
  bc.num_classes = 2;
  bc.repr_dim = 2;
  bc.phi_hidden = {};
  Rng rng(707);
  ModelBundle b = make_bundle(bc, rng);
  auto linear = [](Matrix w, Vector v) {
    MlpParams m;
    DenseLayer l;
    l.weight = Tensor::from_matrix(w);
    l.bias = Tensor::from_vector(v);
    l.act = Activation::kLinear;
    m.layers.push_back(std::move(l));
    return m;
  };
  b.phi = linear(Matrix::Identity(2, 2), Vector::Zero(2));
  Matrix w(2, 2);
  w << 1.6, -0.8, -0.5, 1.2;
  Vector bias(2);
  bias << 0.1, -0.1;
  b.g = linear(w, bias);

  Tensor x({1, 2});
  x[0] = 0.3;
  x[1] = -0.2;
  LossWeights weights;
  weights.vat_eps = 0.3;
  weights.vat_iters = 7;

  const Tensor p_ref = forward_h(b, x).y_prob;
  double best = 0.0;
  for (int k = 0; k < 720; ++k) {
    const double th = 2.0 * M_PI * k / 720.0;
    Tensor xp = x;
    xp[0] += weights.vat_eps * std::cos(th);
    xp[1] += weights.vat_eps * std::sin(th);
    const Tensor p = forward_h(b, xp).y_prob;
    best = std::max(best, (p.array() - p_ref.array()).square().sum());
  }
  Rng vrng(708);
  const double v = vat_loss(b, x, weights, vrng);
  const bool ok = std::abs(v - best) <= 0.10 * best;
  report(7, ok,
         "VAT power iteration " + fmt(v, 6) + " within 10% of 720-direction sweep max " +
             fmt(best, 6));
}

// ---- criterion 8: Fourier robustness direction --------------------------------

void criterion_8() {
  const double t0 = now_seconds();
  RunConfig cfg;
  cfg.dataset.kind = "glyph_images";
  cfg.dataset.n_per_domain = 300;
  cfg.dataset.image_size = 16;
  cfg.dataset.shift_kind = "brightness_bias";
  cfg.dataset.shift_magnitude = 0.15;
  cfg.weights.vat_eps = 0.2;  // image-scale radius
  cfg.epochs = 100;
  cfg.seeds = {1, 1001, 2001};
  const DomainPair pair = build_dataset(cfg.dataset, cfg.seeds.data);

  double hf_so = 0.0, hf_ctc = 0.0;
  for (const std::string preset : {"source_only", "cliv+tc"}) {
    cfg.preset = preset;
    const TrainResult res = train_on(cfg, pair);
    const FourierHeatmap map = fourier_sensitivity(res.model, pair, true, 1.0, 7);
    (preset == "source_only" ? hf_so : hf_ctc) = high_frequency_mean(map);
  }
  const double elapsed = now_seconds() - t0;
  const bool ok = hf_ctc < hf_so && elapsed < 180.0;
  report(8, ok,
         "glyph high-frequency mean error: cliv+tc " + fmt(hf_ctc) + " < source_only " + fmt(hf_so) +
             ", " + fmt(elapsed, 1) + "s < 180s");
}

// ---- criterion 9: determinism ---------------------------------------------------

void criterion_9() {
  RunConfig cfg = moons_config(5, "cliv+tc");
  cfg.epochs = 12;
  cfg.dataset.n_per_domain = 120;
  const auto dir = std::filesystem::temp_directory_path();
  const std::string p1 = (dir / "uda_accept_a.csv").string();
  const std::string p2 = (dir / "uda_accept_b.csv").string();
  write_metrics_csv(train(cfg).history, p1);
  write_metrics_csv(train(cfg).history, p2);
  auto slurp = [](const std::string& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  const std::string a = slurp(p1), b = slurp(p2);
  const bool ok = !a.empty() && a == b;
  report(9, ok, std::string("identical config trains to byte-identical metrics.csv (") +
                    std::to_string(a.size()) + " bytes)");
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

}  // namespace

int main() {
  const double t0 = now_seconds();
  criterion_1();
  main_criteria_2_to_5();
  criterion_6();
  criterion_7();
  criterion_8();
  criterion_9();
  std::printf("%d/9 criteria passed in %.1fs\n", 9 - failures, now_seconds() - t0);
  return failures == 0 ? 0 : 1;
}
