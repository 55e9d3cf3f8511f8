#pragma once

#include "uda/datasets.hpp"
#include "uda/nn.hpp"

#include <array>
#include <limits>
#include <string>
#include <vector>

namespace uda {

struct SensitivityReport {
  double mean_norm = 0.0;
  std::vector<double> per_sample;
};

/// Full C x d Jacobian of class probabilities w.r.t. one input row, computed
/// by C backward passes.
Tensor jacobian(const ModelBundle& bundle, const Tensor& x_row);

/// Mean Frobenius norm of the per-sample Jacobian over X (one domain).
SensitivityReport mean_jacobian_norm(const ModelBundle& bundle, const Tensor& X);

struct TrajectoryCurve {
  std::vector<double> theta;  // arc parameter, [0, 2pi)
  std::vector<double> norms;  // Jacobian norm at each grid point
  std::array<double, 3> anchor_theta{};
  std::array<std::size_t, 3> anchor_index{};  // nearest grid index per anchor
  double radius = 0.0;
  // Circle frame: point(t) = center + radius*(cos(t)*e1 + sin(t)*e2).
  std::vector<double> center, e1, e2;

  std::vector<double> point(double t) const;
};

/// Jacobian norm along the circle through three anchors, traced inside the
/// 2-plane they span. Collinear anchors have no circle and raise an error.
TrajectoryCurve trajectory_sensitivity(const ModelBundle& bundle, const Tensor& anchors, int n_points);

/// 2(1 - 2 min(eps, 0.5)): worse-than-chance probes clamp to 0.
double a_distance_from_error(double eps);

/// Proxy A-distance from a fresh 2-layer domain probe trained on an 80/20
/// split of frozen representations; eps is the balanced held-out error.
double a_distance(const MlpParams& phi, const Tensor& x_s, const Tensor& x_t, std::uint64_t probe_seed);

/// Held-out eps_s + eps_t of a fresh classifier trained on pooled labeled
/// source+target representations (needs eval labels; synthetic data only).
double ideal_joint_risk(const MlpParams& phi, const DomainPair& pair, std::uint64_t probe_seed);

/// eps_t(joint-optimal g) - eps_t(target-optimal g) on frozen phi; reported
/// raw, may be slightly negative from optimization noise.
double nonconservative_gap(const MlpParams& phi, const DomainPair& pair, std::uint64_t probe_seed);

/// rho = (1 - eps_after/eps_before)^-1; requires strict improvement.
double rho_estimate(double eps_t_before, double eps_t_after);

struct FourierHeatmap {
  Index height = 0;
  Index width = 0;
  std::vector<double> error;  // row-major [height x width], entries in [0,1]
  double perturbation_norm = 0.0;
};

/// Error rate per Fourier basis perturbation: for each frequency (i,j) the
/// real cosine basis image is scaled to the given L2 norm and added to every
/// evaluation image with a random per-image sign, clamped to [0,1].
FourierHeatmap fourier_sensitivity(const ModelBundle& bundle, const DomainPair& pair,
                                   bool target_domain, double perturbation_norm,
                                   std::uint64_t seed);

/// Mean heatmap error over the outer (high-frequency) half of the grid, using
/// wrapped frequency radius >= half the maximum radius.
double high_frequency_mean(const FourierHeatmap& map);

/// CSV with columns z_0..z_{k-1},label,domain; one row per sample of both
/// domains.
void export_embeddings(const MlpParams& phi, const DomainPair& pair, const std::string& path);

struct AdaptabilityReport {
  double d_a = 0.0;
  double lambda_estimate = 0.0;
  double nonconservative_gap = 0.0;
  double rho = std::numeric_limits<double>::quiet_NaN();  // set when a baseline is provided
  std::uint64_t probe_seed = 0;
};

AdaptabilityReport adaptability_report(const MlpParams& phi, const DomainPair& pair,
                                       std::uint64_t probe_seed);

/// Domain probe used by a_distance: [in -> 32 -> out] relu MLP, 200 epochs of
/// momentum SGD on an 80/20 split.
MlpParams train_probe_classifier(const Tensor& X, const Tensor& y_onehot, std::uint64_t seed);

/// Probe matched to the classifier class G (a single linear layer here);
/// used by ideal_joint_risk and nonconservative_gap.
MlpParams train_classifier_class_probe(const Tensor& X, const Tensor& y_onehot, std::uint64_t seed);

}  // namespace uda
