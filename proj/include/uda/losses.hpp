#pragma once

#include "uda/augment.hpp"
#include "uda/grad_check.hpp"
#include "uda/nn.hpp"

namespace uda {

struct LossWeights {
  double lambda_cliv = 1.0;
  double lambda_tc = 10.0;
  double vat_eps = 0.35;  // perturbation radius
  double vat_xi = 1e-2;   // power-iteration probe scale, times per-dim input std
  int vat_iters = 3;
};

struct LossBreakdown {
  double ce = 0.0;
  double vat = 0.0;
  double aug = 0.0;
  double tc = 0.0;   // vat + aug
  double adv = 0.0;  // discriminator loss (GRL carries the reversed sign to phi)
  double total = 0.0;
};

/// Mean over the batch of -sum_c y_c log(yhat_c). Throws if a label position
/// holds an exact zero probability; the training path avoids this by fusing
/// log-softmax upstream.
double cross_entropy(const Tensor& y_prob, const Tensor& y_onehot);

// ---- graph-level builders ----------------------------------------------------

Value cross_entropy_from_logits(Value logits, const Tensor& y_onehot);

/// Binary domain loss on raw features: D is pushed toward 1 on source and 0 on
/// target; phi sees the reversed gradient. Both domain means weight equally.
Value dann_adversarial(const GraphBinding& bind, Value z_s, Value z_t, double grl_lambda);

/// Class-level domain loss: each sample's per-class binary CE is weighted by
/// its label (source) or detached prediction (target) mass.
Value cliv_adversarial(const GraphBinding& bind, Value z_s, const Tensor& y_s, Value z_t,
                       Value yhat_t, double grl_lambda);

/// DANN on the flattened per-sample outer product z (x) yhat, with detached
/// predictions.
Value cdan_adversarial(const GraphBinding& bind, Value z_s, Value yhat_s, Value z_t,
                       Value yhat_t, double grl_lambda);

/// Power-iteration search for the adversarial direction; returns r with
/// per-sample L2 norm vat_eps (or zeros when vat_eps == 0). p_ref is the
/// detached reference prediction on x_t.
Tensor vat_direction(ModelBundle& bundle, const Tensor& x_t, const Tensor& p_ref,
                     const LossWeights& weights, Rng& rng);

/// mean_b ||p_ref_b - h(x_b + r_b)||^2 with gradient through the student only.
Value vat_loss_term(const GraphBinding& bind, const Tensor& x_t, const Tensor& p_ref, const Tensor& r);

/// mean_b ||p_ref_b - h(mix_augment(x_b))||^2; augmentation happens outside
/// the graph, per-sample RNG streams split from `rng`.
Value aug_consistency_term(const GraphBinding& bind, const Tensor& x_t, const Tensor& p_ref,
                           const OpRegistry& registry, const MixSpec& mix, Rng& rng);

struct StepOptions {
  double grl_lambda = 0.0;
  bool tc_enabled = false;
  bool use_teacher = false;
};

struct StepObjective {
  LossBreakdown breakdown;
  Value total;
};

/// Full training objective ce + lambda_cliv*adv + lambda_tc*tc on one paired
/// batch. Terms with zero weight are not added to the graph, so e.g.
/// lambda_cliv = lambda_tc = 0 gives total == ce exactly.
StepObjective total_objective(GraphBinding& bind, const Tensor& x_s, const Tensor& y_s,
                              const Tensor& x_t, const LossWeights& weights,
                              const OpRegistry* registry, const MixSpec& mix, Rng& rng,
                              const StepOptions& opt);

// ---- convenience scalar wrappers (fresh throwaway graph per call) ------------

double vat_loss(ModelBundle& bundle, const Tensor& x_t, const LossWeights& weights, Rng& rng,
                bool use_teacher = false);
double aug_consistency_loss(ModelBundle& bundle, const Tensor& x_t, const OpRegistry& registry,
                            const MixSpec& mix, Rng& rng, bool use_teacher = false);
double tc_loss(ModelBundle& bundle, const Tensor& x_t, const OpRegistry& registry,
               const MixSpec& mix, const LossWeights& weights, Rng& rng, bool use_teacher = false);
double dann_loss(ModelBundle& bundle, const Tensor& x_s, const Tensor& x_t);
double cliv_loss(ModelBundle& bundle, const Tensor& x_s, const Tensor& y_s, const Tensor& x_t);
double cdan_loss(ModelBundle& bundle, const Tensor& x_s, const Tensor& x_t);

// ---- gradient verification battery --------------------------------------------

struct LossGradCheck {
  std::string loss;
  GradReport report;
};

/// Finite-difference verification of every loss path (ce, vat, aug, tc, dann,
/// cdan, cliv, total) on small seeded tanh models and batches. Gradient
/// reversal runs at lambda = -1 (identity in both directions) and detached
/// quantities (pseudo-labels, VAT direction, teacher references) are frozen as
/// constants, so analytic and numeric gradients describe the same function.
std::vector<LossGradCheck> loss_grad_check_battery(std::uint64_t seed);

}  // namespace uda
