#include "uda/trainer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace uda {

using nlohmann::json;

DomainPair build_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  if (spec.kind == "two_moons")
    return two_moons(spec.n_per_domain, spec.noise_sigma, spec.rotation_deg, seed);
  if (spec.kind == "shifted_blobs")
    return shifted_blobs(spec.num_classes, spec.n_per_domain, spec.dim, spec.shift, seed);
  if (spec.kind == "glyph_images")
    return glyph_images(spec.n_per_domain, spec.image_size, glyph_shift_from_string(spec.shift_kind),
                        spec.shift_magnitude, seed);
  throw std::invalid_argument("unknown dataset kind: " + spec.kind);
}

Preset parse_preset(const std::string& s) {
  std::string base = s;
  Preset p;
  const auto plus = s.find("+tc");
  if (plus != std::string::npos) {
    if (plus + 3 != s.size()) throw std::invalid_argument("bad preset: " + s);
    p.tc = true;
    base = s.substr(0, plus);
  }
  if (base == "source_only") p.adv = AdvKind::kNone;
  else p.adv = adv_kind_from_string(base);
  return p;
}

double grl_lambda(double progress) {
  if (progress < 0.0) throw std::invalid_argument("grl_lambda: negative progress");
  return 2.0 / (1.0 + std::exp(-10.0 * progress)) - 1.0;
}

double evaluate(const ModelBundle& bundle, const Tensor& x, const Tensor& y_onehot) {
  if (x.rows() == 0) throw std::invalid_argument("evaluate: empty sample set");
  if (x.rows() != y_onehot.rows()) throw std::invalid_argument("evaluate: row mismatch");
  const Tensor probs = forward_h(bundle, x).y_prob;
  const Index b = x.rows(), c = y_onehot.cols();
  Index hits = 0;
  for (Index i = 0; i < b; ++i) {
    Index pred = 0, truth = 0;
    for (Index j = 1; j < c; ++j) {
      if (probs[i * c + j] > probs[i * c + pred]) pred = j;
      if (y_onehot[i * c + j] > y_onehot[i * c + truth]) truth = j;
    }
    if (pred == truth) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(b);
}

TrainAbort::TrainAbort(int epoch_, int step_, LossBreakdown breakdown_, const std::string& what_)
    : std::runtime_error(what_), epoch(epoch_), step(step_), breakdown(breakdown_) {}

namespace {

void shuffle_indices(std::vector<Index>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j = rng.uniform_index(i);
    std::swap(idx[i - 1], idx[j]);
  }
}

}  // namespace

TrainResult train(const RunConfig& cfg) {
  const DomainPair pair = build_dataset(cfg.dataset, cfg.seeds.data);
  return train_on(cfg, pair);
}

TrainResult train_on(const RunConfig& cfg, const DomainPair& pair) {
  const Preset preset = parse_preset(cfg.preset);
  const TrainingView view = pair.training_view();

  BundleConfig bc;
  bc.input_dim = pair.input_dim();
  bc.num_classes = pair.num_classes();
  bc.repr_dim = cfg.repr_dim;
  bc.phi_hidden = cfg.phi_hidden;
  bc.disc_hidden = cfg.disc_hidden;
  bc.adv_kind = preset.adv;
  bc.cliv_separate_heads = cfg.cliv_separate_heads;
  bc.with_teacher = preset.tc && cfg.use_mean_teacher;
  bc.cdan_dim_cap = cfg.cdan_dim_cap;
  Rng model_rng(cfg.seeds.model);
  ModelBundle bundle = make_bundle(bc, model_rng);

  // Student (phi, g) and discriminator parameter groups step at different
  // learning rates, following the adversarial training recipe of the adopted
  // protocol (discriminator layers at disc_lr_mult times the base rate).
  std::vector<Tensor*> student_params = params_of(bundle.phi);
  for (Tensor* p : params_of(bundle.g)) student_params.push_back(p);
  std::vector<Tensor*> disc_params;
  for (MlpParams& d : bundle.disc)
    for (Tensor* p : params_of(d)) disc_params.push_back(p);
  SgdState sgd_student(cfg.opt, student_params);
  SgdState sgd_disc(cfg.opt, disc_params);

  OpRegistry registry = builtin_registry(pair.modality(), cfg.dataset.image_size, cfg.dataset.image_size);

  const Index n_s = static_cast<Index>(view.train_idx_s.size());
  const Index n_t = static_cast<Index>(view.train_idx_t.size());
  const Index n_small = std::min(n_s, n_t);
  const Index batch = std::min(cfg.batch_size, n_small);
  const Index steps_per_epoch = (n_small + batch - 1) / batch;
  const long total_steps = static_cast<long>(cfg.epochs) * steps_per_epoch;

  Rng data_rng = Rng(cfg.seeds.data).split(0xda7a);
  Rng aug_root(cfg.seeds.augment);

  std::vector<Index> order_s = view.train_idx_s;
  std::vector<Index> order_t = view.train_idx_t;

  TrainResult result{std::move(bundle), {}};
  ModelBundle& model = result.model;
  // Re-point parameter groups after the move.
  student_params = params_of(model.phi);
  for (Tensor* p : params_of(model.g)) student_params.push_back(p);
  disc_params.clear();
  for (MlpParams& d : model.disc)
    for (Tensor* p : params_of(d)) disc_params.push_back(p);
  const std::size_t n_student = student_params.size();

  long global = 0;
  Index cursor_t = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng epoch_rng = data_rng.split(static_cast<std::uint64_t>(epoch));
    shuffle_indices(order_s, epoch_rng);
    shuffle_indices(order_t, epoch_rng);

    LossBreakdown epoch_mean;
    double last_lr = 0.0, last_grl = 0.0;
    for (Index step = 0; step < steps_per_epoch; ++step) {
      const Index lo = step * batch;
      const Index n = std::min(batch, n_small - lo);

      std::vector<Index> idx_s(static_cast<std::size_t>(n)), idx_t(static_cast<std::size_t>(n));
      for (Index i = 0; i < n; ++i) {
        idx_s[static_cast<std::size_t>(i)] = order_s[static_cast<std::size_t>((lo + i) % n_s)];
        idx_t[static_cast<std::size_t>(i)] = order_t[static_cast<std::size_t>(cursor_t % n_t)];
        ++cursor_t;
      }
      const Tensor xb_s = rows_subset(view.x_s, idx_s);
      const Tensor yb_s = rows_subset(view.y_s, idx_s);
      const Tensor xb_t = rows_subset(view.x_t, idx_t);

      const double p = total_steps > 1 ? static_cast<double>(global) / static_cast<double>(total_steps - 1) : 1.0;
      const double lr = lr_schedule(cfg.opt, p);
      StepOptions opt;
      opt.grl_lambda = preset.adv == AdvKind::kNone ? 0.0 : grl_lambda(p);
      opt.tc_enabled = preset.tc;
      opt.use_teacher = cfg.use_mean_teacher;

      LossWeights weights = cfg.weights;
      if (preset.adv == AdvKind::kNone) weights.lambda_cliv = 0.0;
      if (!preset.tc) weights.lambda_tc = 0.0;

      Rng step_rng = aug_root.split(static_cast<std::uint64_t>(global));
      try {
        Graph g;
        GraphBinding bind(g, model);
        StepObjective obj =
            total_objective(bind, xb_s, yb_s, xb_t, weights, &registry, cfg.mix, step_rng, opt);
        if (!std::isfinite(obj.breakdown.total))
          throw TrainAbort(epoch, static_cast<int>(step), obj.breakdown, "nonfinite loss");
        g.backward(obj.total);
        std::vector<Tensor> grads = bind.collect_grads();
        // trainable_params order is phi, g, then discriminators.
        std::vector<Tensor> student_grads(grads.begin(), grads.begin() + n_student);
        sgd_student.step(student_params, student_grads, lr);
        if (!disc_params.empty()) {
          std::vector<Tensor> disc_grads(grads.begin() + n_student, grads.end());
          sgd_disc.step(disc_params, disc_grads, lr * cfg.disc_lr_mult);
        }
        if (preset.tc && cfg.use_mean_teacher) ema_update(model, cfg.beta_ema);

        epoch_mean.ce += obj.breakdown.ce;
        epoch_mean.vat += obj.breakdown.vat;
        epoch_mean.aug += obj.breakdown.aug;
        epoch_mean.tc += obj.breakdown.tc;
        epoch_mean.adv += obj.breakdown.adv;
        epoch_mean.total += obj.breakdown.total;
      } catch (const GraphError& e) {
        throw TrainAbort(epoch, static_cast<int>(step), epoch_mean, e.what());
      }
      last_lr = lr;
      last_grl = opt.grl_lambda;
      ++global;
    }
    const double inv = 1.0 / static_cast<double>(steps_per_epoch);
    epoch_mean.ce *= inv;
    epoch_mean.vat *= inv;
    epoch_mean.aug *= inv;
    epoch_mean.tc *= inv;
    epoch_mean.adv *= inv;
    epoch_mean.total *= inv;

    MetricsRecord rec;
    rec.epoch = epoch;
    rec.loss = epoch_mean;
    rec.lr = last_lr;
    rec.grl_lambda = last_grl;
    rec.source_acc =
        evaluate(model, rows_subset(pair.x_source(), pair.eval_idx_source()),
                 rows_subset(pair.y_source(), pair.eval_idx_source()));
    rec.target_acc =
        evaluate(model, rows_subset(pair.x_target(), pair.eval_idx_target()),
                 rows_subset(pair.y_target_eval(), pair.eval_idx_target()));
    result.history.push_back(rec);
  }
  return result;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void write_metrics_csv(const std::vector<MetricsRecord>& history, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_metrics_csv: cannot open " + path);
  out << "epoch,ce,vat,aug,tc,adv,total,source_acc,target_acc,lr,grl_lambda\n";
  for (const MetricsRecord& r : history) {
    out << r.epoch << "," << fmt(r.loss.ce) << "," << fmt(r.loss.vat) << "," << fmt(r.loss.aug) << ","
        << fmt(r.loss.tc) << "," << fmt(r.loss.adv) << "," << fmt(r.loss.total) << ","
        << fmt(r.source_acc) << "," << fmt(r.target_acc) << "," << fmt(r.lr) << ","
        << fmt(r.grl_lambda) << "\n";
  }
}

// ---- config JSON ---------------------------------------------------------------

namespace {

void check_known_keys(const json& j, const std::vector<std::string>& known, const std::string& scope) {
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw std::invalid_argument("config: unknown key '" + scope + key + "'");
  }
}

void apply_override(json& j, const std::string& expr) {
  const auto eq = expr.find('=');
  if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value: " + expr);
  const std::string path = expr.substr(0, eq);
  const std::string value = expr.substr(eq + 1);
  json* cur = &j;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw std::invalid_argument("--set: empty key");
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) cur = &(*cur)[parts[i]];
  json parsed = json::parse(value, nullptr, false);
  if (parsed.is_discarded()) parsed = value;  // bare strings
  (*cur)[parts.back()] = parsed;
}

}  // namespace

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  j["dataset"] = {{"kind", cfg.dataset.kind},
                  {"n_per_domain", cfg.dataset.n_per_domain},
                  {"noise_sigma", cfg.dataset.noise_sigma},
                  {"rotation_deg", cfg.dataset.rotation_deg},
                  {"num_classes", cfg.dataset.num_classes},
                  {"dim", cfg.dataset.dim},
                  {"shift", cfg.dataset.shift},
                  {"image_size", cfg.dataset.image_size},
                  {"shift_kind", cfg.dataset.shift_kind},
                  {"shift_magnitude", cfg.dataset.shift_magnitude}};
  j["preset"] = cfg.preset;
  j["weights"] = {{"lambda_cliv", cfg.weights.lambda_cliv},
                  {"lambda_tc", cfg.weights.lambda_tc},
                  {"vat_eps", cfg.weights.vat_eps},
                  {"vat_xi", cfg.weights.vat_xi},
                  {"vat_iters", cfg.weights.vat_iters}};
  j["mix"] = {{"k", cfg.mix.k}};
  j["use_mean_teacher"] = cfg.use_mean_teacher;
  j["beta_ema"] = cfg.beta_ema;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["opt"] = {{"lr0", cfg.opt.lr0},
              {"momentum", cfg.opt.momentum},
              {"alpha_lr", cfg.opt.alpha_lr},
              {"beta_lr", cfg.opt.beta_lr}};
  j["disc_lr_mult"] = cfg.disc_lr_mult;
  j["seeds"] = {{"model", cfg.seeds.model}, {"data", cfg.seeds.data}, {"augment", cfg.seeds.augment}};
  j["output_dir"] = cfg.output_dir;
  j["phi_hidden"] = cfg.phi_hidden;
  j["repr_dim"] = cfg.repr_dim;
  j["disc_hidden"] = cfg.disc_hidden;
  j["cliv_separate_heads"] = cfg.cliv_separate_heads;
  j["cdan_dim_cap"] = cfg.cdan_dim_cap;
  return j.dump(2) + "\n";
}

namespace {

RunConfig run_config_from_json(json j) {
  RunConfig cfg;
  check_known_keys(j, {"dataset", "preset", "weights", "mix", "use_mean_teacher", "beta_ema",
                       "epochs", "batch_size", "opt", "disc_lr_mult", "seeds", "output_dir",
                       "phi_hidden", "repr_dim", "disc_hidden", "cliv_separate_heads",
                       "cdan_dim_cap"},
                   "");
  if (j.contains("dataset")) {
    json& d = j["dataset"];
    check_known_keys(d, {"kind", "n_per_domain", "noise_sigma", "rotation_deg", "num_classes",
                         "dim", "shift", "image_size", "shift_kind", "shift_magnitude"},
                     "dataset.");
    if (d.contains("kind")) cfg.dataset.kind = d["kind"].get<std::string>();
    if (d.contains("n_per_domain")) cfg.dataset.n_per_domain = d["n_per_domain"].get<Index>();
    if (d.contains("noise_sigma")) cfg.dataset.noise_sigma = d["noise_sigma"].get<double>();
    if (d.contains("rotation_deg")) cfg.dataset.rotation_deg = d["rotation_deg"].get<double>();
    if (d.contains("num_classes")) cfg.dataset.num_classes = d["num_classes"].get<Index>();
    if (d.contains("dim")) cfg.dataset.dim = d["dim"].get<Index>();
    if (d.contains("shift")) cfg.dataset.shift = d["shift"].get<std::vector<double>>();
    if (d.contains("image_size")) cfg.dataset.image_size = d["image_size"].get<Index>();
    if (d.contains("shift_kind")) cfg.dataset.shift_kind = d["shift_kind"].get<std::string>();
    if (d.contains("shift_magnitude")) cfg.dataset.shift_magnitude = d["shift_magnitude"].get<double>();
  }
  if (j.contains("preset")) cfg.preset = j["preset"].get<std::string>();
  if (j.contains("weights")) {
    json& w = j["weights"];
    check_known_keys(w, {"lambda_cliv", "lambda_tc", "vat_eps", "vat_xi", "vat_iters"}, "weights.");
    if (w.contains("lambda_cliv")) cfg.weights.lambda_cliv = w["lambda_cliv"].get<double>();
    if (w.contains("lambda_tc")) cfg.weights.lambda_tc = w["lambda_tc"].get<double>();
    if (w.contains("vat_eps")) cfg.weights.vat_eps = w["vat_eps"].get<double>();
    if (w.contains("vat_xi")) cfg.weights.vat_xi = w["vat_xi"].get<double>();
    if (w.contains("vat_iters")) cfg.weights.vat_iters = w["vat_iters"].get<int>();
  }
  if (j.contains("mix")) {
    check_known_keys(j["mix"], {"k"}, "mix.");
    if (j["mix"].contains("k")) cfg.mix.k = j["mix"]["k"].get<int>();
  }
  if (j.contains("use_mean_teacher")) cfg.use_mean_teacher = j["use_mean_teacher"].get<bool>();
  if (j.contains("beta_ema")) cfg.beta_ema = j["beta_ema"].get<double>();
  if (j.contains("epochs")) cfg.epochs = j["epochs"].get<int>();
  if (j.contains("batch_size")) cfg.batch_size = j["batch_size"].get<Index>();
  if (j.contains("opt")) {
    json& o = j["opt"];
    check_known_keys(o, {"lr0", "momentum", "alpha_lr", "beta_lr"}, "opt.");
    if (o.contains("lr0")) cfg.opt.lr0 = o["lr0"].get<double>();
    if (o.contains("momentum")) cfg.opt.momentum = o["momentum"].get<double>();
    if (o.contains("alpha_lr")) cfg.opt.alpha_lr = o["alpha_lr"].get<double>();
    if (o.contains("beta_lr")) cfg.opt.beta_lr = o["beta_lr"].get<double>();
  }
  if (j.contains("seeds")) {
    json& s = j["seeds"];
    check_known_keys(s, {"model", "data", "augment"}, "seeds.");
    if (s.contains("model")) cfg.seeds.model = s["model"].get<std::uint64_t>();
    if (s.contains("data")) cfg.seeds.data = s["data"].get<std::uint64_t>();
    if (s.contains("augment")) cfg.seeds.augment = s["augment"].get<std::uint64_t>();
  }
  if (j.contains("disc_lr_mult")) cfg.disc_lr_mult = j["disc_lr_mult"].get<double>();
  if (j.contains("output_dir")) cfg.output_dir = j["output_dir"].get<std::string>();
  if (j.contains("phi_hidden")) cfg.phi_hidden = j["phi_hidden"].get<std::vector<Index>>();
  if (j.contains("repr_dim")) cfg.repr_dim = j["repr_dim"].get<Index>();
  if (j.contains("disc_hidden")) cfg.disc_hidden = j["disc_hidden"].get<std::vector<Index>>();
  if (j.contains("cliv_separate_heads")) cfg.cliv_separate_heads = j["cliv_separate_heads"].get<bool>();
  if (j.contains("cdan_dim_cap")) cfg.cdan_dim_cap = j["cdan_dim_cap"].get<Index>();

  parse_preset(cfg.preset);  // validates
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw std::invalid_argument("config: bad epochs/batch_size");
  if (cfg.mix.k < 1) throw std::invalid_argument("config: mix.k must be >= 1");
  return cfg;
}

}  // namespace

RunConfig run_config_from_json_file(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw std::invalid_argument("config: invalid JSON in " + path);
  for (const std::string& o : overrides) apply_override(j, o);
  return run_config_from_json(j);
}

}  // namespace uda
