#include "uda/grad_check.hpp"

#include <cmath>

namespace uda {

namespace {

double eval_loss(const LossBuilder& build, const std::vector<Tensor>& params) {
  Graph g;
  std::vector<Value> nodes;
  nodes.reserve(params.size());
  for (const Tensor& p : params) nodes.push_back(g.input(p));
  return build(g, nodes).scalar();
}

}  // namespace

GradReport grad_check(const LossBuilder& build, const std::vector<Tensor>& params,
                      const std::vector<std::string>& names, double step) {
  if (names.size() != params.size())
    throw std::invalid_argument("grad_check: names/params size mismatch");

  // Analytic gradients from one backward pass.
  Graph g;
  std::vector<Value> nodes;
  nodes.reserve(params.size());
  for (const Tensor& p : params) nodes.push_back(g.input(p));
  Value root = build(g, nodes);
  g.backward(root);

  GradReport report;
  std::vector<Tensor> work = params;
  for (std::size_t k = 0; k < params.size(); ++k) {
    GradReport::Entry entry;
    entry.name = names[k];
    const Tensor& analytic = g.grad(nodes[k].id);
    for (Index i = 0; i < work[k].numel(); ++i) {
      const double saved = work[k][i];
      work[k][i] = saved + step;
      const double up = eval_loss(build, work);
      work[k][i] = saved - step;
      const double down = eval_loss(build, work);
      work[k][i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double abs_err = std::abs(analytic[i] - numeric);
      // Denominator floor keeps finite-difference roundoff on near-zero
      // gradients from registering as large relative error.
      const double rel_err = abs_err / std::max(1e-3, std::abs(analytic[i]) + std::abs(numeric));
      entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
      entry.max_rel_error = std::max(entry.max_rel_error, rel_err);
    }
    report.max_abs_error = std::max(report.max_abs_error, entry.max_abs_error);
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.per_param.push_back(std::move(entry));
  }
  return report;
}

}  // namespace uda
