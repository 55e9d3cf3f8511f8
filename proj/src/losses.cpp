#include "uda/losses.hpp"

#include <cmath>

namespace uda {

double cross_entropy(const Tensor& y_prob, const Tensor& y_onehot) {
  if (!y_prob.same_shape(y_onehot)) throw std::invalid_argument("cross_entropy: shape mismatch");
  const Index b = y_prob.rows(), c = y_prob.cols();
  double total = 0.0;
  for (Index i = 0; i < b; ++i)
    for (Index j = 0; j < c; ++j) {
      const double w = y_onehot[i * c + j];
      if (w == 0.0) continue;
      const double p = y_prob[i * c + j];
      if (p <= 0.0) throw std::domain_error("cross_entropy: zero probability at a label position");
      total -= w * std::log(p);
    }
  return total / static_cast<double>(b);
}

Value cross_entropy_from_logits(Value logits, const Tensor& y_onehot) {
  Graph& g = *logits.graph;
  const Index b = y_onehot.rows();
  Value y = g.input(y_onehot);
  Value logp = log_softmax(logits);
  return scale(sum(mul(y, logp)), -1.0 / static_cast<double>(b));
}

namespace {

// Positive-class binary CE from logits: -log sigmoid(s) = softplus(-s).
Value bce_toward_one(Value logits) { return softplus(scale(logits, -1.0)); }
// -log(1 - sigmoid(s)) = softplus(s).
Value bce_toward_zero(Value logits) { return softplus(logits); }

Value per_batch_sum(Value v, Index batch) { return scale(sum(v), 1.0 / static_cast<double>(batch)); }

}  // namespace

Value dann_adversarial(const GraphBinding& bind, Value z_s, Value z_t, double grl_lambda) {
  const Index bs = z_s.tensor().rows(), bt = z_t.tensor().rows();
  Value s_logits = disc_logits(bind, grad_reversal(z_s, grl_lambda));
  Value t_logits = disc_logits(bind, grad_reversal(z_t, grl_lambda));
  Value loss_s = per_batch_sum(bce_toward_one(s_logits), bs);
  Value loss_t = per_batch_sum(bce_toward_zero(t_logits), bt);
  return scale(add(loss_s, loss_t), 0.5);
}

Value cliv_adversarial(const GraphBinding& bind, Value z_s, const Tensor& y_s, Value z_t,
                       Value yhat_t, double grl_lambda) {
  const ModelBundle& bundle = bind.bundle();
  if (y_s.cols() != bundle.num_classes)
    throw std::invalid_argument("cliv_adversarial: label width does not match discriminator heads");
  const Index bs = z_s.tensor().rows(), bt = z_t.tensor().rows();
  Graph& g = bind.graph();
  Value s_logits = disc_logits(bind, grad_reversal(z_s, grl_lambda));
  Value t_logits = disc_logits(bind, grad_reversal(z_t, grl_lambda));
  // Pseudo-labels are weights, not targets: no gradient flows through them.
  Value w_t = stop_gradient(yhat_t);
  Value w_s = g.input(y_s);
  Value loss_s = per_batch_sum(mul(w_s, bce_toward_one(s_logits)), bs);
  Value loss_t = per_batch_sum(mul(w_t, bce_toward_zero(t_logits)), bt);
  return scale(add(loss_s, loss_t), 0.5);
}

Value cdan_adversarial(const GraphBinding& bind, Value z_s, Value yhat_s, Value z_t,
                       Value yhat_t, double grl_lambda) {
  const Index bs = z_s.tensor().rows(), bt = z_t.tensor().rows();
  Value feat_s = outer_flatten(grad_reversal(z_s, grl_lambda), stop_gradient(yhat_s));
  Value feat_t = outer_flatten(grad_reversal(z_t, grl_lambda), stop_gradient(yhat_t));
  Value loss_s = per_batch_sum(bce_toward_one(disc_logits(bind, feat_s)), bs);
  Value loss_t = per_batch_sum(bce_toward_zero(disc_logits(bind, feat_t)), bt);
  return scale(add(loss_s, loss_t), 0.5);
}

namespace {

// Student probabilities inside the graph for a constant input batch.
Value student_probs(const GraphBinding& bind, const Tensor& x) {
  const ModelBundle& b = bind.bundle();
  Value xv = bind.graph().input(x);
  return softmax(mlp_apply(bind, b.g, mlp_apply(bind, b.phi, xv)));
}

// Detached consistency reference: the teacher when requested, otherwise the
// student evaluated through a throwaway graph. Using the graph path keeps the
// reference bit-identical to the in-graph student forward, so degenerate
// cases (eps = 0, identity augmentations) cancel to exactly zero.
Tensor consistency_reference(ModelBundle& bundle, const Tensor& x, bool use_teacher) {
  if (use_teacher && bundle.teacher.has_value()) return forward_h(bundle, x, true).y_prob;
  Graph g;
  GraphBinding bind(g, bundle);
  return student_probs(bind, x).tensor();
}

Value consistency_distance(const GraphBinding& bind, const Tensor& p_ref, Value p) {
  Value ref = bind.graph().input(p_ref);
  return per_batch_sum(square(sub(ref, p)), p_ref.rows());
}

void normalize_rows_or_keep(Tensor& v, const Tensor& fallback) {
  const Index r = v.rows(), c = v.cols();
  for (Index i = 0; i < r; ++i) {
    double norm2 = 0.0;
    for (Index j = 0; j < c; ++j) norm2 += v[i * c + j] * v[i * c + j];
    const double norm = std::sqrt(norm2);
    if (norm == 0.0) {
      for (Index j = 0; j < c; ++j) v[i * c + j] = fallback[i * c + j];
    } else {
      for (Index j = 0; j < c; ++j) v[i * c + j] /= norm;
    }
  }
}

}  // namespace

Tensor vat_direction(ModelBundle& bundle, const Tensor& x_t, const Tensor& p_ref,
                     const LossWeights& weights, Rng& rng) {
  const Index b = x_t.rows(), d = x_t.cols();
  Tensor r({b, d});
  if (weights.vat_eps == 0.0) return r;
  if (weights.vat_iters < 1) throw std::invalid_argument("vat_direction: vat_iters must be >= 1");

  // Random start, row-normalized.
  Tensor dir({b, d});
  for (Index i = 0; i < dir.numel(); ++i) dir[i] = rng.gaussian();
  Tensor initial = dir;
  normalize_rows_or_keep(dir, initial);
  initial = dir;

  // Probe scale per input dimension: vat_xi times that dimension's batch std.
  Tensor probe({b, d});
  for (Index j = 0; j < d; ++j) {
    double mean = 0.0, sq = 0.0;
    for (Index i = 0; i < b; ++i) mean += x_t[i * d + j];
    mean /= static_cast<double>(b);
    for (Index i = 0; i < b; ++i) {
      const double dv = x_t[i * d + j] - mean;
      sq += dv * dv;
    }
    const double sd = std::sqrt(sq / static_cast<double>(b));
    const double xi = weights.vat_xi * (sd > 0.0 ? sd : 1.0);
    for (Index i = 0; i < b; ++i) probe[i * d + j] = xi;
  }

  for (int it = 0; it < weights.vat_iters; ++it) {
    Graph g;
    GraphBinding bind(g, bundle);
    Value dv = g.input(dir);
    Value xv = g.input(x_t);
    Value x_pert = add(xv, mul(dv, g.input(probe)));
    Value p = softmax(mlp_apply(bind, bundle.g, mlp_apply(bind, bundle.phi, x_pert)));
    Value dist = consistency_distance(bind, p_ref, p);
    g.backward(dist);
    Tensor grad_dir = g.grad(dv.id);
    normalize_rows_or_keep(grad_dir, initial);  // zero-gradient rows keep the random direction
    dir = std::move(grad_dir);
  }
  r.array() = weights.vat_eps * dir.array();
  return r;
}

Value vat_loss_term(const GraphBinding& bind, const Tensor& x_t, const Tensor& p_ref, const Tensor& r) {
  Tensor x_adv = x_t;
  x_adv.array() += r.array();
  return consistency_distance(bind, p_ref, student_probs(bind, x_adv));
}

Value aug_consistency_term(const GraphBinding& bind, const Tensor& x_t, const Tensor& p_ref,
                           const OpRegistry& registry, const MixSpec& mix, Rng& rng) {
  const Index b = x_t.rows(), d = x_t.cols();
  Tensor x_aug({b, d});
  for (Index i = 0; i < b; ++i) {
    Tensor row({d});
    for (Index j = 0; j < d; ++j) row[j] = x_t[i * d + j];
    Rng row_rng = rng.split(static_cast<std::uint64_t>(i));
    Tensor mixed = mix_augment(row, registry, mix, row_rng);
    for (Index j = 0; j < d; ++j) x_aug[i * d + j] = mixed[j];
  }
  return consistency_distance(bind, p_ref, student_probs(bind, x_aug));
}

StepObjective total_objective(GraphBinding& bind, const Tensor& x_s, const Tensor& y_s,
                              const Tensor& x_t, const LossWeights& weights,
                              const OpRegistry* registry, const MixSpec& mix, Rng& rng,
                              const StepOptions& opt) {
  ModelBundle& bundle = bind.bundle();
  Graph& g = bind.graph();

  Value xs = g.input(x_s);
  Value z_s = mlp_apply(bind, bundle.phi, xs);
  Value logits_s = mlp_apply(bind, bundle.g, z_s);
  Value ce = cross_entropy_from_logits(logits_s, y_s);

  StepObjective out;
  out.breakdown.ce = ce.scalar();
  Value total = ce;

  if (bundle.adv_kind != AdvKind::kNone && weights.lambda_cliv > 0.0) {
    Value xt = g.input(x_t);
    Value z_t = mlp_apply(bind, bundle.phi, xt);
    Value adv{};
    switch (bundle.adv_kind) {
      case AdvKind::kDann:
        adv = dann_adversarial(bind, z_s, z_t, opt.grl_lambda);
        break;
      case AdvKind::kCliv: {
        Value yhat_t = softmax(mlp_apply(bind, bundle.g, z_t));
        adv = cliv_adversarial(bind, z_s, y_s, z_t, yhat_t, opt.grl_lambda);
        break;
      }
      case AdvKind::kCdan: {
        Value yhat_s = softmax(logits_s);
        Value yhat_t = softmax(mlp_apply(bind, bundle.g, z_t));
        adv = cdan_adversarial(bind, z_s, yhat_s, z_t, yhat_t, opt.grl_lambda);
        break;
      }
      case AdvKind::kNone:
        break;
    }
    out.breakdown.adv = adv.scalar();
    total = add(total, scale(adv, weights.lambda_cliv));
  }

  if (opt.tc_enabled && weights.lambda_tc > 0.0) {
    if (registry == nullptr) throw std::invalid_argument("total_objective: TC requires a registry");
    const Tensor p_ref = consistency_reference(bundle, x_t, opt.use_teacher);
    Rng vat_rng = rng.split(0x7a7);
    Tensor r = vat_direction(bundle, x_t, p_ref, weights, vat_rng);
    Value vat = vat_loss_term(bind, x_t, p_ref, r);
    Rng aug_rng = rng.split(0xa06);
    Value aug = aug_consistency_term(bind, x_t, p_ref, *registry, mix, aug_rng);
    Value tc = add(vat, aug);
    out.breakdown.vat = vat.scalar();
    out.breakdown.aug = aug.scalar();
    out.breakdown.tc = tc.scalar();
    total = add(total, scale(tc, weights.lambda_tc));
  }

  out.total = total;
  out.breakdown.total = total.scalar();
  return out;
}

// ---- scalar wrappers -----------------------------------------------------------

double vat_loss(ModelBundle& bundle, const Tensor& x_t, const LossWeights& weights, Rng& rng,
                bool use_teacher) {
  const Tensor p_ref = consistency_reference(bundle, x_t, use_teacher);
  Tensor r = vat_direction(bundle, x_t, p_ref, weights, rng);
  Graph g;
  GraphBinding bind(g, bundle);
  return vat_loss_term(bind, x_t, p_ref, r).scalar();
}

double aug_consistency_loss(ModelBundle& bundle, const Tensor& x_t, const OpRegistry& registry,
                            const MixSpec& mix, Rng& rng, bool use_teacher) {
  const Tensor p_ref = consistency_reference(bundle, x_t, use_teacher);
  Graph g;
  GraphBinding bind(g, bundle);
  return aug_consistency_term(bind, x_t, p_ref, registry, mix, rng).scalar();
}

double tc_loss(ModelBundle& bundle, const Tensor& x_t, const OpRegistry& registry,
               const MixSpec& mix, const LossWeights& weights, Rng& rng, bool use_teacher) {
  Rng vat_rng = rng.split(0x7a7);
  Rng aug_rng = rng.split(0xa06);
  return vat_loss(bundle, x_t, weights, vat_rng, use_teacher) +
         aug_consistency_loss(bundle, x_t, registry, mix, aug_rng, use_teacher);
}

double dann_loss(ModelBundle& bundle, const Tensor& x_s, const Tensor& x_t) {
  Graph g;
  GraphBinding bind(g, bundle);
  Value z_s = mlp_apply(bind, bundle.phi, g.input(x_s));
  Value z_t = mlp_apply(bind, bundle.phi, g.input(x_t));
  return dann_adversarial(bind, z_s, z_t, 1.0).scalar();
}

double cliv_loss(ModelBundle& bundle, const Tensor& x_s, const Tensor& y_s, const Tensor& x_t) {
  Graph g;
  GraphBinding bind(g, bundle);
  Value z_s = mlp_apply(bind, bundle.phi, g.input(x_s));
  Value z_t = mlp_apply(bind, bundle.phi, g.input(x_t));
  Value yhat_t = softmax(mlp_apply(bind, bundle.g, z_t));
  return cliv_adversarial(bind, z_s, y_s, z_t, yhat_t, 1.0).scalar();
}

double cdan_loss(ModelBundle& bundle, const Tensor& x_s, const Tensor& x_t) {
  Graph g;
  GraphBinding bind(g, bundle);
  Value z_s = mlp_apply(bind, bundle.phi, g.input(x_s));
  Value z_t = mlp_apply(bind, bundle.phi, g.input(x_t));
  Value yhat_s = softmax(mlp_apply(bind, bundle.g, z_s));
  Value yhat_t = softmax(mlp_apply(bind, bundle.g, z_t));
  return cdan_adversarial(bind, z_s, yhat_s, z_t, yhat_t, 1.0).scalar();
}

// ---- gradient verification battery ----------------------------------------------

namespace {

constexpr double kIdentityGrl = -1.0;  // grad_reversal(x, -1) is the identity map

Tensor random_batch(Index rows, Index cols, Rng& rng) {
  Tensor t({rows, cols});
  for (Index i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-1.0, 1.0);
  return t;
}

std::vector<Tensor> param_values(ModelBundle& b) {
  std::vector<Tensor> out;
  for (const Tensor* p : trainable_params(b)) out.push_back(*p);
  return out;
}

std::vector<std::string> param_names(ModelBundle& b) {
  std::vector<std::string> out;
  const std::size_t n = trainable_params(b).size();
  for (std::size_t i = 0; i < n; ++i) out.push_back("p" + std::to_string(i));
  return out;
}

ModelBundle battery_bundle(AdvKind kind, bool with_teacher, Rng& rng) {
  BundleConfig cfg;
  cfg.input_dim = 3;
  cfg.num_classes = 3;
  cfg.repr_dim = 4;
  cfg.phi_hidden = {6};
  cfg.disc_hidden = {5};
  cfg.hidden_act = Activation::kTanh;
  cfg.adv_kind = kind;
  cfg.with_teacher = with_teacher;
  ModelBundle b = make_bundle(cfg, rng);
  if (with_teacher) {
    // Nudge the teacher so detached references differ from the student.
    for (DenseLayer& l : b.teacher->phi.layers)
      for (Index i = 0; i < l.weight.numel(); ++i) l.weight[i] += 0.05 * rng.uniform(-1.0, 1.0);
  }
  return b;
}

}  // namespace

std::vector<LossGradCheck> loss_grad_check_battery(std::uint64_t seed) {
  Rng root(seed);
  const Index batch = 5, in_dim = 3, classes = 3;
  Rng data_rng = root.split(1);
  const Tensor x_s = random_batch(batch, in_dim, data_rng);
  const Tensor x_t = random_batch(batch, in_dim, data_rng);
  Tensor y_s({batch, classes});
  for (Index i = 0; i < batch; ++i) y_s[i * classes + (i % classes)] = 1.0;

  std::vector<LossGradCheck> results;
  auto run = [&results](const std::string& name, ModelBundle& bundle, const LossBuilder& build) {
    results.push_back({name, grad_check(build, param_values(bundle), param_names(bundle))});
  };

  // ce
  {
    Rng rng = root.split(2);
    ModelBundle b = battery_bundle(AdvKind::kNone, false, rng);
    run("ce", b, [&b, &x_s, &y_s](Graph& g, const std::vector<Value>& nodes) {
      GraphBinding bind(g, b, nodes);
      Value logits = mlp_apply(bind, b.g, mlp_apply(bind, b.phi, g.input(x_s)));
      return cross_entropy_from_logits(logits, y_s);
    });
  }
  // vat (teacher reference and direction are constants)
  {
    Rng rng = root.split(3);
    ModelBundle b = battery_bundle(AdvKind::kNone, true, rng);
    const Tensor p_ref = forward_h(b, x_t, true).y_prob;
    LossWeights w;
    Rng vat_rng = root.split(4);
    const Tensor r = vat_direction(b, x_t, p_ref, w, vat_rng);
    run("vat", b, [&b, &x_t, &p_ref, &r](Graph& g, const std::vector<Value>& nodes) {
      GraphBinding bind(g, b, nodes);
      return vat_loss_term(bind, x_t, p_ref, r);
    });
  }
  // aug (fresh rng with a fixed seed per evaluation keeps the mixture frozen)
  {
    Rng rng = root.split(5);
    ModelBundle b = battery_bundle(AdvKind::kNone, true, rng);
    const Tensor p_ref = forward_h(b, x_t, true).y_prob;
    const OpRegistry registry = builtin_registry(Modality::kPoints2d);
    run("aug", b, [&b, &x_t, &p_ref, &registry, seed](Graph& g, const std::vector<Value>& nodes) {
      GraphBinding bind(g, b, nodes);
      Rng aug_rng(seed ^ 0xa06);
      return aug_consistency_term(bind, x_t, p_ref, registry, MixSpec{3}, aug_rng);
    });
  }
  // tc = vat + aug
  {
    Rng rng = root.split(6);
    ModelBundle b = battery_bundle(AdvKind::kNone, true, rng);
    const Tensor p_ref = forward_h(b, x_t, true).y_prob;
    LossWeights w;
    Rng vat_rng = root.split(7);
    const Tensor r = vat_direction(b, x_t, p_ref, w, vat_rng);
    const OpRegistry registry = builtin_registry(Modality::kPoints2d);
    run("tc", b, [&b, &x_t, &p_ref, &r, &registry, seed](Graph& g, const std::vector<Value>& nodes) {
      GraphBinding bind(g, b, nodes);
      Rng aug_rng(seed ^ 0xa06);
      return add(vat_loss_term(bind, x_t, p_ref, r),
                 aug_consistency_term(bind, x_t, p_ref, registry, MixSpec{3}, aug_rng));
    });
  }
  // dann
  {
    Rng rng = root.split(8);
    ModelBundle b = battery_bundle(AdvKind::kDann, false, rng);
    run("dann", b, [&b, &x_s, &x_t](Graph& g, const std::vector<Value>& nodes) {
      GraphBinding bind(g, b, nodes);
      Value z_s = mlp_apply(bind, b.phi, g.input(x_s));
      Value z_t = mlp_apply(bind, b.phi, g.input(x_t));
      return dann_adversarial(bind, z_s, z_t, kIdentityGrl);
    });
  }
  // cdan (pseudo-labels frozen as constants)
  {
    Rng rng = root.split(9);
    ModelBundle b = battery_bundle(AdvKind::kCdan, false, rng);
    const Tensor yhat_s = forward_h(b, x_s).y_prob;
    const Tensor yhat_t = forward_h(b, x_t).y_prob;
    run("cdan", b, [&b, &x_s, &x_t, &yhat_s, &yhat_t](Graph& g, const std::vector<Value>& nodes) {
      GraphBinding bind(g, b, nodes);
      Value z_s = mlp_apply(bind, b.phi, g.input(x_s));
      Value z_t = mlp_apply(bind, b.phi, g.input(x_t));
      return cdan_adversarial(bind, z_s, g.input(yhat_s), z_t, g.input(yhat_t), kIdentityGrl);
    });
  }
  // cliv (pseudo-labels frozen as constants)
  {
    Rng rng = root.split(10);
    ModelBundle b = battery_bundle(AdvKind::kCliv, false, rng);
    const Tensor yhat_t = forward_h(b, x_t).y_prob;
    run("cliv", b, [&b, &x_s, &y_s, &x_t, &yhat_t](Graph& g, const std::vector<Value>& nodes) {
      GraphBinding bind(g, b, nodes);
      Value z_s = mlp_apply(bind, b.phi, g.input(x_s));
      Value z_t = mlp_apply(bind, b.phi, g.input(x_t));
      return cliv_adversarial(bind, z_s, y_s, z_t, g.input(yhat_t), kIdentityGrl);
    });
  }
  // total: ce + dann + tc through the production path
  {
    Rng rng = root.split(11);
    ModelBundle b = battery_bundle(AdvKind::kDann, true, rng);
    const OpRegistry registry = builtin_registry(Modality::kPoints2d);
    run("total", b, [&b, &x_s, &y_s, &x_t, &registry, seed](Graph& g, const std::vector<Value>& nodes) {
      GraphBinding bind(g, b, nodes);
      LossWeights w;
      StepOptions opt;
      opt.grl_lambda = kIdentityGrl;
      opt.tc_enabled = true;
      opt.use_teacher = true;
      Rng step_rng(seed ^ 0x707a1);
      return total_objective(bind, x_s, y_s, x_t, w, &registry, MixSpec{3}, step_rng, opt).total;
    });
  }
  return results;
}

}  // namespace uda
