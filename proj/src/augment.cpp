#include "uda/augment.hpp"

#include <cmath>
#include <stdexcept>

namespace uda {

Modality modality_from_string(const std::string& s) {
  if (s == "points2d") return Modality::kPoints2d;
  if (s == "image") return Modality::kImage;
  throw std::invalid_argument("unknown modality: " + s);
}

std::string to_string(Modality m) {
  return m == Modality::kPoints2d ? "points2d" : "image";
}

std::vector<double> sample_dirichlet(int k, Rng& rng) {
  if (k < 1) throw std::invalid_argument("sample_dirichlet: k must be >= 1");
  if (k == 1) return {1.0};
  std::vector<double> alpha(static_cast<std::size_t>(k));
  double total = 0.0;
  for (double& a : alpha) {
    // Gamma(1) == -log U.
    double u = rng.uniform01();
    if (u <= 0.0) u = 0x1.0p-53;
    a = -std::log(u);
    total += a;
  }
  for (double& a : alpha) a /= total;
  return alpha;
}

namespace {

Tensor apply_branch(const Tensor& x, const OpRegistry& reg, bool may_compose, Rng& rng) {
  const bool compose = may_compose && rng.bernoulli(0.5);
  const AugOp& op1 = reg.ops[rng.uniform_index(reg.ops.size())];
  const double s1 = rng.uniform(op1.lo, op1.hi);
  if (!compose) return op1.apply(x, s1, rng);
  const AugOp& op2 = reg.ops[rng.uniform_index(reg.ops.size())];
  const double s2 = rng.uniform(op2.lo, op2.hi);
  return op1.apply(op2.apply(x, s2, rng), s1, rng);
}

}  // namespace

Tensor mix_augment(const Tensor& x, const OpRegistry& registry, const MixSpec& spec, Rng& rng) {
  if (registry.ops.empty()) throw std::invalid_argument("mix_augment: empty registry");
  if (spec.k < 1) throw std::invalid_argument("mix_augment: k must be >= 1");
  const std::vector<double> alpha = sample_dirichlet(spec.k, rng);
  const bool may_compose = registry.allow_composition && spec.k > 1;
  Tensor out(x.shape());
  for (int i = 0; i < spec.k; ++i) {
    Tensor branch = apply_branch(x, registry, may_compose, rng);
    if (!branch.same_shape(x)) throw std::logic_error("mix_augment: op changed shape");
    out.array() += alpha[static_cast<std::size_t>(i)] * branch.array();
  }
  return out;
}

// ---- points2d ops -----------------------------------------------------------

namespace {

Tensor points_jitter(const Tensor& x, double sigma, Rng& rng) {
  Tensor out = x;
  for (Index i = 0; i < out.numel(); ++i) out[i] += sigma * rng.gaussian();
  return out;
}

Tensor points_rotate(const Tensor& x, double theta_deg, Rng&) {
  const double t = theta_deg * M_PI / 180.0;
  const double c = std::cos(t), s = std::sin(t);
  Tensor out = x;
  out[0] = c * x[0] - s * x[1];
  out[1] = s * x[0] + c * x[1];
  return out;
}

Tensor points_scale(const Tensor& x, double factor, Rng&) {
  Tensor out = x;
  out.array() *= factor;
  return out;
}

// First axis shifted by the sampled severity; each further axis by a fresh
// draw from the op range.
Tensor points_translate(const Tensor& x, double delta, Rng& rng) {
  Tensor out = x;
  out[0] += delta;
  for (Index i = 1; i < out.numel(); ++i) out[i] += rng.uniform(-0.1, 0.1);
  return out;
}

// ---- image ops (pixel range [0,1], all results clamped) ----------------------

Tensor clamp01(Tensor t) {
  t.array() = t.array().min(1.0).max(0.0);
  return t;
}

Tensor img_brightness(const Tensor& x, double delta, Rng&) {
  Tensor out = x;
  out.array() += delta;
  return clamp01(std::move(out));
}

Tensor img_contrast(const Tensor& x, double factor, Rng&) {
  const double m = x.array().mean();
  Tensor out = x;
  out.array() = (out.array() - m) * factor + m;
  return clamp01(std::move(out));
}

// Quantize to L = round(severity) levels over [0,1].
Tensor img_posterize(const Tensor& x, double levels, Rng&) {
  const double l = std::max(2.0, std::round(levels));
  Tensor out = x;
  out.array() = (out.array() * (l - 1.0)).round() / (l - 1.0);
  return clamp01(std::move(out));
}

// Pixels at or above the threshold are inverted; below it, untouched.
Tensor img_solarize(const Tensor& x, double threshold, Rng&) {
  Tensor out = x;
  for (Index i = 0; i < out.numel(); ++i)
    if (out[i] >= threshold) out[i] = 1.0 - out[i];
  return out;
}

Tensor img_noise(const Tensor& x, double sigma, Rng& rng) {
  Tensor out = x;
  for (Index i = 0; i < out.numel(); ++i) out[i] += sigma * rng.gaussian();
  return clamp01(std::move(out));
}

// Integer shift with zero fill. dx > 0 moves content right.
Tensor img_translate(const Tensor& x, Index h, Index w, Index dx, Index dy) {
  Tensor out({x.shape()});
  out.array().setZero();
  for (Index r = 0; r < h; ++r)
    for (Index c = 0; c < w; ++c) {
      const Index sr = r - dy, sc = c - dx;
      if (sr >= 0 && sr < h && sc >= 0 && sc < w) out[r * w + c] = x[sr * w + sc];
    }
  return out;
}

// Rotation about the image center, bilinear sampling, zero padding.
Tensor img_rotate(const Tensor& x, Index h, Index w, double theta_deg) {
  const double t = theta_deg * M_PI / 180.0;
  const double c = std::cos(t), s = std::sin(t);
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  Tensor out(x.shape());
  for (Index r = 0; r < h; ++r)
    for (Index col = 0; col < w; ++col) {
      // Inverse map: rotate destination coordinates back into the source.
      const double yr = static_cast<double>(r) - cy;
      const double xr = static_cast<double>(col) - cx;
      const double sy = c * yr + s * xr + cy;
      const double sx = -s * yr + c * xr + cx;
      const Index y0 = static_cast<Index>(std::floor(sy));
      const Index x0 = static_cast<Index>(std::floor(sx));
      const double fy = sy - static_cast<double>(y0);
      const double fx = sx - static_cast<double>(x0);
      auto at = [&](Index yy, Index xx) -> double {
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0;
        return x[yy * w + xx];
      };
      out[r * w + col] = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                         fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
    }
  return clamp01(std::move(out));
}

}  // namespace

OpRegistry builtin_registry(Modality modality, Index height, Index width) {
  OpRegistry reg;
  reg.modality = modality;
  if (modality == Modality::kPoints2d) {
    reg.ops = {
        {"gaussian_jitter", 0.01, 0.1, points_jitter},
        {"rotate_about_origin", -15.0, 15.0, points_rotate},
        {"uniform_scale", 0.9, 1.1, points_scale},
        {"translate", -0.1, 0.1, points_translate},
    };
    return reg;
  }
  reg.height = height;
  reg.width = width;
  const Index h = height, w = width;
  const double max_shift = std::max(1.0, std::floor(static_cast<double>(w) / 5.0));
  reg.ops = {
      {"brightness", -0.3, 0.3, img_brightness},
      {"contrast", 0.5, 1.5, img_contrast},
      {"posterize", 2.0, 8.0, img_posterize},
      {"solarize", 0.25, 1.0, img_solarize},
      {"gaussian_noise", 0.01, 0.1, img_noise},
      {"translate_x", -max_shift, max_shift,
       [h, w](const Tensor& x, double s, Rng&) {
         return img_translate(x, h, w, static_cast<Index>(std::llround(s)), 0);
       }},
      {"translate_y", -max_shift, max_shift,
       [h, w](const Tensor& x, double s, Rng&) {
         return img_translate(x, h, w, 0, static_cast<Index>(std::llround(s)));
       }},
      {"rotate", -15.0, 15.0,
       [h, w](const Tensor& x, double s, Rng&) { return img_rotate(x, h, w, s); }},
  };
  return reg;
}

}  // namespace uda
