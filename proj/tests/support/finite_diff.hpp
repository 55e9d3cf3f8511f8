#pragma once

// Central finite-difference oracle used by the gradient tests. Only forward
// evaluation of the loss is used here, never Graph::backward, so this stays
// independent of the differentiation path it checks.

#include "uda/tensor.hpp"

#include <functional>
#include <vector>

namespace uda::testsupport {

using ForwardLoss = std::function<double(const std::vector<Tensor>&)>;

inline std::vector<Tensor> fd_gradient(const ForwardLoss& loss, std::vector<Tensor> params,
                                       double step = 1e-5) {
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor g(params[k].shape());
    for (Index i = 0; i < params[k].numel(); ++i) {
      const double saved = params[k][i];
      params[k][i] = saved + step;
      const double up = loss(params);
      params[k][i] = saved - step;
      const double down = loss(params);
      params[k][i] = saved;
      g[i] = (up - down) / (2.0 * step);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

inline double rel_error(double a, double b) {
  const double diff = a > b ? a - b : b - a;
  const double mag = (a < 0 ? -a : a) + (b < 0 ? -b : b);
  return diff / (mag > 1e-3 ? mag : 1e-3);
}

}  // namespace uda::testsupport
