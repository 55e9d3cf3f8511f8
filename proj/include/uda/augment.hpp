#pragma once

#include "uda/rng.hpp"
#include "uda/tensor.hpp"

#include <functional>
#include <string>
#include <vector>

namespace uda {

enum class Modality : std::uint8_t { kPoints2d, kImage };

Modality modality_from_string(const std::string& s);
std::string to_string(Modality m);

/// One augmentation operation. `apply` is pure given (input, severity, rng
/// state) and preserves shape.
struct AugOp {
  std::string name;
  double lo = 0.0;  // severity range
  double hi = 0.0;
  std::function<Tensor(const Tensor&, double, Rng&)> apply;
};

struct OpRegistry {
  Modality modality = Modality::kPoints2d;
  Index height = 0;  // image modality only
  Index width = 0;
  std::vector<AugOp> ops;
  bool allow_composition = true;
};

struct MixSpec {
  int k = 4;  // number of mixed branches; Dirichlet concentration is all-ones
};

/// Uniform sample on the (k-1)-simplex: k unit-rate exponentials, normalized.
std::vector<double> sample_dirichlet(int k, Rng& rng);

/// Convex mixture of K independently augmented copies of x.
///
/// Draw order (replayed verbatim by tests): first the Dirichlet coefficients,
/// then per branch i: [compose flag if K>1 and the registry allows it], op
/// index, severity, [second op index, second severity], then the op bodies'
/// own draws. A composed branch is o_first(o_second(x)).
Tensor mix_augment(const Tensor& x, const OpRegistry& registry, const MixSpec& spec, Rng& rng);

/// Built-in registries. Every op is defined by the explicit formula in its
/// lambda; image ops clamp to [0,1].
OpRegistry builtin_registry(Modality modality, Index height = 16, Index width = 16);

}  // namespace uda
