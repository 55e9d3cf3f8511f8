#pragma once

#include "uda/graph.hpp"

#include <functional>
#include <string>
#include <vector>

namespace uda {

struct GradReport {
  struct Entry {
    std::string name;
    double max_abs_error = 0.0;
    double max_rel_error = 0.0;
  };
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  std::vector<Entry> per_param;

  bool within(double rel_tol) const { return max_rel_error < rel_tol; }
};

/// Builds a scalar loss over the given parameter nodes. Must be deterministic:
/// the same parameter tensors always produce the same loss.
using LossBuilder = std::function<Value(Graph&, const std::vector<Value>&)>;

/// Compares backward-pass gradients against central finite differences
/// (L(p+h) - L(p-h)) / 2h, elementwise over every parameter.
GradReport grad_check(const LossBuilder& build, const std::vector<Tensor>& params,
                      const std::vector<std::string>& names, double step = 1e-5);

}  // namespace uda
