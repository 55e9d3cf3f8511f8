#include "uda/analysis.hpp"

#include "uda/losses.hpp"
#include "uda/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace uda {

std::vector<double> TrajectoryCurve::point(double t) const {
  std::vector<double> out(center.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = center[i] + radius * (std::cos(t) * e1[i] + std::sin(t) * e2[i]);
  return out;
}

Tensor jacobian(const ModelBundle& bundle, const Tensor& x_row) {
  if (x_row.numel() != bundle.input_dim) throw std::invalid_argument("jacobian: input width mismatch");
  Tensor x({1, bundle.input_dim});
  x.array() = x_row.array();
  Graph g;
  GraphBinding bind(g, const_cast<ModelBundle&>(bundle));
  Value xv = g.input(x);
  Value probs = softmax(mlp_apply(bind, bundle.g, mlp_apply(bind, bundle.phi, xv)));
  Tensor jac({bundle.num_classes, bundle.input_dim});
  for (Index c = 0; c < bundle.num_classes; ++c) {
    Value root = sum(slice_cols(probs, c, 1));
    g.backward(root);
    const Tensor& gx = g.grad(xv.id);
    for (Index d = 0; d < bundle.input_dim; ++d) jac[c * bundle.input_dim + d] = gx[d];
  }
  return jac;
}

namespace {

double jacobian_frobenius(const ModelBundle& bundle, const Tensor& x_row) {
  const Tensor jac = jacobian(bundle, x_row);
  return std::sqrt(jac.array().square().sum());
}

Tensor row_of(const Tensor& x, Index i) {
  Tensor row({x.cols()});
  for (Index c = 0; c < x.cols(); ++c) row[c] = x.at(i, c);
  return row;
}

}  // namespace

SensitivityReport mean_jacobian_norm(const ModelBundle& bundle, const Tensor& X) {
  if (X.rows() == 0) throw std::invalid_argument("mean_jacobian_norm: empty sample set");
  SensitivityReport report;
  report.per_sample.reserve(static_cast<std::size_t>(X.rows()));
  for (Index i = 0; i < X.rows(); ++i) report.per_sample.push_back(jacobian_frobenius(bundle, row_of(X, i)));
  report.mean_norm =
      std::accumulate(report.per_sample.begin(), report.per_sample.end(), 0.0) /
      static_cast<double>(report.per_sample.size());
  return report;
}

TrajectoryCurve trajectory_sensitivity(const ModelBundle& bundle, const Tensor& anchors, int n_points) {
  if (anchors.rows() != 3) throw std::invalid_argument("trajectory_sensitivity: need exactly 3 anchors");
  if (n_points < 3) throw std::invalid_argument("trajectory_sensitivity: need at least 3 grid points");
  const Index d = anchors.cols();

  // Orthonormal basis of the anchor plane.
  Vector p0(d), p1(d), p2(d);
  for (Index c = 0; c < d; ++c) {
    p0[c] = anchors.at(0, c);
    p1[c] = anchors.at(1, c);
    p2[c] = anchors.at(2, c);
  }
  Vector u = p1 - p0, v = p2 - p0;
  const double un = u.norm();
  if (un == 0.0) throw std::invalid_argument("trajectory_sensitivity: coincident anchors");
  Vector e1 = u / un;
  Vector v_perp = v - v.dot(e1) * e1;
  const double vn = v_perp.norm();
  if (vn < 1e-9 * std::max(1.0, v.norm()))
    throw std::invalid_argument("trajectory_sensitivity: collinear anchors have no circle");
  Vector e2 = v_perp / vn;

  // Plane coordinates: a=(0,0), b=(|u|,0), c=(v.e1, v.e2). Circumcenter from
  // the standard determinant formula.
  const double bx = un;
  const double cx = v.dot(e1), cy = v.dot(e2);
  const double dd = 2.0 * bx * cy;
  const double ux = (cy * bx * bx) / dd;
  const double uy = (bx * (cx * cx + cy * cy) - cx * bx * bx) / dd;
  const double radius = std::sqrt(ux * ux + uy * uy);
  Vector center = p0 + ux * e1 + uy * e2;

  TrajectoryCurve curve;
  curve.radius = radius;
  curve.center.assign(center.data(), center.data() + d);
  curve.e1.assign(e1.data(), e1.data() + d);
  curve.e2.assign(e2.data(), e2.data() + d);
  curve.theta.resize(static_cast<std::size_t>(n_points));
  curve.norms.resize(static_cast<std::size_t>(n_points));
  for (int k = 0; k < n_points; ++k) {
    const double th = 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(n_points);
    const std::vector<double> pt = curve.point(th);
    Tensor x({d});
    for (Index c = 0; c < d; ++c) x[c] = pt[static_cast<std::size_t>(c)];
    curve.theta[static_cast<std::size_t>(k)] = th;
    curve.norms[static_cast<std::size_t>(k)] = jacobian_frobenius(bundle, x);
  }
  const Vector ps[3] = {p0, p1, p2};
  for (int a = 0; a < 3; ++a) {
    const double ax = (ps[a] - center).dot(e1);
    const double ay = (ps[a] - center).dot(e2);
    double th = std::atan2(ay, ax);
    if (th < 0.0) th += 2.0 * M_PI;
    curve.anchor_theta[static_cast<std::size_t>(a)] = th;
    const double step = 2.0 * M_PI / static_cast<double>(n_points);
    curve.anchor_index[static_cast<std::size_t>(a)] =
        static_cast<std::size_t>(std::llround(th / step)) % static_cast<std::size_t>(n_points);
  }
  return curve;
}

// ---- probe classifiers ----------------------------------------------------------

namespace {

struct ProbeSplit {
  Tensor x_train, y_train, x_test, y_test;
};

ProbeSplit split_80_20(const Tensor& X, const Tensor& Y, Rng& rng) {
  std::vector<Index> idx(static_cast<std::size_t>(X.rows()));
  std::iota(idx.begin(), idx.end(), Index{0});
  for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
  const Index n_train = (X.rows() * 8) / 10;
  std::vector<Index> tr(idx.begin(), idx.begin() + n_train), te(idx.begin() + n_train, idx.end());
  return ProbeSplit{rows_subset(X, tr), rows_subset(Y, tr), rows_subset(X, te), rows_subset(Y, te)};
}

double probe_error(const MlpParams& probe, const Tensor& X, const Tensor& Y) {
  const Tensor logits = mlp_eval(probe, X);
  const Index b = X.rows(), c = Y.cols();
  Index hits = 0;
  for (Index i = 0; i < b; ++i) {
    Index pred = 0, truth = 0;
    for (Index j = 1; j < c; ++j) {
      if (logits[i * c + j] > logits[i * c + pred]) pred = j;
      if (Y[i * c + j] > Y[i * c + truth]) truth = j;
    }
    if (pred == truth) ++hits;
  }
  return 1.0 - static_cast<double>(hits) / static_cast<double>(b);
}

constexpr int kProbeEpochs = 200;
constexpr Index kProbeBatch = 32;
constexpr double kProbeLr = 0.02;

}  // namespace

namespace {

MlpParams train_probe_with_dims(const std::vector<Index>& dims, const Tensor& X,
                                const Tensor& y_onehot, std::uint64_t seed) {
  Rng rng(seed);
  MlpParams probe = make_mlp(dims, Activation::kRelu, rng);
  std::vector<Tensor*> params = params_of(probe);
  SgdConfig cfg;
  cfg.lr0 = kProbeLr;
  SgdState sgd(cfg, params);

  std::vector<Index> order(static_cast<std::size_t>(X.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  for (int epoch = 0; epoch < kProbeEpochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
    for (Index lo = 0; lo < X.rows(); lo += kProbeBatch) {
      const Index n = std::min(kProbeBatch, X.rows() - lo);
      std::vector<Index> idx(order.begin() + lo, order.begin() + lo + n);
      Graph g;
      Value x = g.input(rows_subset(X, idx));
      std::vector<Value> nodes;
      Value h = x;
      for (DenseLayer& l : probe.layers) {
        Value w = g.input(l.weight);
        Value b = g.input(l.bias);
        nodes.push_back(w);
        nodes.push_back(b);
        h = add_rowvec(matmul(h, w), b);
        if (l.act == Activation::kRelu) h = relu(h);
      }
      Value loss = cross_entropy_from_logits(h, rows_subset(y_onehot, idx));
      g.backward(loss);
      std::vector<Tensor> grads;
      grads.reserve(nodes.size());
      for (const Value& nvl : nodes) grads.push_back(g.grad(nvl.id));
      sgd.step(params, grads, kProbeLr);
    }
  }
  return probe;
}

}  // namespace

MlpParams train_probe_classifier(const Tensor& X, const Tensor& y_onehot, std::uint64_t seed) {
  return train_probe_with_dims({X.cols(), 32, y_onehot.cols()}, X, y_onehot, seed);
}

// Classifier-class-matched probe: the classifier class G in this artifact is
// a single linear layer, so the ideal-joint-hypothesis and optimality-gap
// estimates search over linear heads.
MlpParams train_classifier_class_probe(const Tensor& X, const Tensor& y_onehot, std::uint64_t seed) {
  return train_probe_with_dims({X.cols(), y_onehot.cols()}, X, y_onehot, seed);
}

double a_distance_from_error(double eps) { return 2.0 * (1.0 - 2.0 * std::min(eps, 0.5)); }

double a_distance(const MlpParams& phi, const Tensor& x_s, const Tensor& x_t, std::uint64_t probe_seed) {
  if (x_s.rows() == 0 || x_t.rows() == 0) throw std::invalid_argument("a_distance: empty domain");
  const Tensor z_s = mlp_eval(phi, x_s);
  const Tensor z_t = mlp_eval(phi, x_t);

  Rng rng = Rng(probe_seed).split(0xad);
  Rng s_rng = rng.split(1), t_rng = rng.split(2);
  Tensor dom_s({z_s.rows(), 2}), dom_t({z_t.rows(), 2});
  for (Index i = 0; i < z_s.rows(); ++i) dom_s[i * 2 + 0] = 1.0;  // class 0 = source
  for (Index i = 0; i < z_t.rows(); ++i) dom_t[i * 2 + 1] = 1.0;  // class 1 = target
  ProbeSplit split_s = split_80_20(z_s, dom_s, s_rng);
  ProbeSplit split_t = split_80_20(z_t, dom_t, t_rng);

  Tensor x_train = Tensor({split_s.x_train.rows() + split_t.x_train.rows(), z_s.cols()});
  x_train.array().head(split_s.x_train.numel()) = split_s.x_train.array();
  x_train.array().tail(split_t.x_train.numel()) = split_t.x_train.array();
  Tensor y_train({split_s.y_train.rows() + split_t.y_train.rows(), 2});
  y_train.array().head(split_s.y_train.numel()) = split_s.y_train.array();
  y_train.array().tail(split_t.y_train.numel()) = split_t.y_train.array();

  MlpParams probe = train_probe_classifier(x_train, y_train, rng.split(3).next());
  // Balanced held-out error: average the per-domain test errors.
  const double err_s = probe_error(probe, split_s.x_test, split_s.y_test);
  const double err_t = probe_error(probe, split_t.x_test, split_t.y_test);
  const double eps = 0.5 * (err_s + err_t);
  return a_distance_from_error(eps);
}

namespace {

struct LabeledReprs {
  Tensor z_s, y_s, z_t, y_t;
};

LabeledReprs frozen_reprs(const MlpParams& phi, const DomainPair& pair) {
  return LabeledReprs{mlp_eval(phi, pair.x_source()), pair.y_source(),
                      mlp_eval(phi, pair.x_target()), pair.y_target_eval()};
}

Tensor vstack(const Tensor& a, const Tensor& b) {
  Tensor out({a.rows() + b.rows(), a.cols()});
  out.array().head(a.numel()) = a.array();
  out.array().tail(b.numel()) = b.array();
  return out;
}

}  // namespace

double ideal_joint_risk(const MlpParams& phi, const DomainPair& pair, std::uint64_t probe_seed) {
  LabeledReprs r = frozen_reprs(phi, pair);
  Rng rng = Rng(probe_seed).split(0x1d);
  Rng s_rng = rng.split(1), t_rng = rng.split(2);
  ProbeSplit split_s = split_80_20(r.z_s, r.y_s, s_rng);
  ProbeSplit split_t = split_80_20(r.z_t, r.y_t, t_rng);
  MlpParams probe = train_classifier_class_probe(vstack(split_s.x_train, split_t.x_train),
                                                 vstack(split_s.y_train, split_t.y_train),
                                                 rng.split(3).next());
  return probe_error(probe, split_s.x_test, split_s.y_test) +
         probe_error(probe, split_t.x_test, split_t.y_test);
}

double nonconservative_gap(const MlpParams& phi, const DomainPair& pair, std::uint64_t probe_seed) {
  LabeledReprs r = frozen_reprs(phi, pair);
  Rng rng = Rng(probe_seed).split(0x9a);
  Rng s_rng = rng.split(1), t_rng = rng.split(2);
  ProbeSplit split_s = split_80_20(r.z_s, r.y_s, s_rng);
  ProbeSplit split_t = split_80_20(r.z_t, r.y_t, t_rng);
  MlpParams joint = train_classifier_class_probe(vstack(split_s.x_train, split_t.x_train),
                                                 vstack(split_s.y_train, split_t.y_train),
                                                 rng.split(3).next());
  MlpParams target_only =
      train_classifier_class_probe(split_t.x_train, split_t.y_train, rng.split(4).next());
  return probe_error(joint, split_t.x_test, split_t.y_test) -
         probe_error(target_only, split_t.x_test, split_t.y_test);
}

double rho_estimate(double eps_t_before, double eps_t_after) {
  if (eps_t_before <= 0.0) throw std::invalid_argument("rho_estimate: eps_t_before must be > 0");
  if (eps_t_after >= eps_t_before)
    throw std::invalid_argument("rho_estimate: no improvement; rho undefined on this side");
  return 1.0 / (1.0 - eps_t_after / eps_t_before);
}

FourierHeatmap fourier_sensitivity(const ModelBundle& bundle, const DomainPair& pair,
                                   bool target_domain, double perturbation_norm,
                                   std::uint64_t seed) {
  if (pair.modality() != Modality::kImage)
    throw std::invalid_argument("fourier_sensitivity: image data required");
  const Index dim = pair.input_dim();
  const Index size = static_cast<Index>(std::llround(std::sqrt(static_cast<double>(dim))));
  if (size * size != dim) throw std::invalid_argument("fourier_sensitivity: non-square images");
  const Tensor& X = target_domain ? pair.x_target() : pair.x_source();
  const Tensor& Y = target_domain ? pair.y_target_eval() : pair.y_source();

  FourierHeatmap map;
  map.height = size;
  map.width = size;
  map.perturbation_norm = perturbation_norm;
  map.error.resize(static_cast<std::size_t>(dim));

  Rng root(seed);
  Tensor basis({dim});
  Tensor perturbed({X.rows(), dim});
  for (Index fi = 0; fi < size; ++fi) {
    for (Index fj = 0; fj < size; ++fj) {
      // Real cosine basis image for frequency (fi, fj); (0,0) is the uniform
      // brightness shift.
      double norm2 = 0.0;
      for (Index r = 0; r < size; ++r)
        for (Index c = 0; c < size; ++c) {
          const double phase = 2.0 * M_PI * (static_cast<double>(fi * r) / static_cast<double>(size) +
                                             static_cast<double>(fj * c) / static_cast<double>(size));
          basis[r * size + c] = std::cos(phase);
          norm2 += basis[r * size + c] * basis[r * size + c];
        }
      const double scale_to = perturbation_norm / std::sqrt(norm2);
      Rng freq_rng = root.split(static_cast<std::uint64_t>(fi * size + fj));
      for (Index i = 0; i < X.rows(); ++i) {
        const double sign = freq_rng.bernoulli(0.5) ? 1.0 : -1.0;
        for (Index p = 0; p < dim; ++p) {
          const double v = X[i * dim + p] + sign * scale_to * basis[p];
          perturbed[i * dim + p] = std::min(1.0, std::max(0.0, v));
        }
      }
      const double acc = evaluate(bundle, perturbed, Y);
      map.error[static_cast<std::size_t>(fi * size + fj)] = 1.0 - acc;
    }
  }
  return map;
}

double high_frequency_mean(const FourierHeatmap& map) {
  const double rmax = std::hypot(static_cast<double>(map.height) / 2.0,
                                 static_cast<double>(map.width) / 2.0);
  double total = 0.0;
  Index count = 0;
  for (Index i = 0; i < map.height; ++i)
    for (Index j = 0; j < map.width; ++j) {
      const double wi = std::min(i, map.height - i);
      const double wj = std::min(j, map.width - j);
      if (std::hypot(wi, wj) >= 0.5 * rmax) {
        total += map.error[static_cast<std::size_t>(i * map.width + j)];
        ++count;
      }
    }
  if (count == 0) throw std::logic_error("high_frequency_mean: empty region");
  return total / static_cast<double>(count);
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Index argmax_row(const Tensor& y, Index row) {
  Index best = 0;
  for (Index c = 1; c < y.cols(); ++c)
    if (y.at(row, c) > y.at(row, best)) best = c;
  return best;
}

}  // namespace

void export_embeddings(const MlpParams& phi, const DomainPair& pair, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("export_embeddings: cannot open " + path);
  const Tensor z_s = mlp_eval(phi, pair.x_source());
  const Tensor z_t = mlp_eval(phi, pair.x_target());
  const Index k = z_s.cols();
  for (Index c = 0; c < k; ++c) out << "z_" << c << ",";
  out << "label,domain\n";
  auto dump = [&](const Tensor& z, const Tensor& y, const char* domain) {
    for (Index i = 0; i < z.rows(); ++i) {
      for (Index c = 0; c < k; ++c) out << fmt(z.at(i, c)) << ",";
      out << argmax_row(y, i) << "," << domain << "\n";
    }
  };
  dump(z_s, pair.y_source(), "source");
  dump(z_t, pair.y_target_eval(), "target");
}

AdaptabilityReport adaptability_report(const MlpParams& phi, const DomainPair& pair,
                                       std::uint64_t probe_seed) {
  AdaptabilityReport rep;
  rep.probe_seed = probe_seed;
  rep.d_a = a_distance(phi, pair.x_source(), pair.x_target(), probe_seed);
  rep.lambda_estimate = ideal_joint_risk(phi, pair, probe_seed);
  rep.nonconservative_gap = uda::nonconservative_gap(phi, pair, probe_seed);
  return rep;
}

}  // namespace uda
