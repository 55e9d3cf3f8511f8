#pragma once

#include "uda/augment.hpp"
#include "uda/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace uda {

/// What training is allowed to see: source inputs + labels, target inputs.
/// Target labels are deliberately absent from this view.
struct TrainingView {
  const Tensor& x_s;
  const Tensor& y_s;
  const Tensor& x_t;
  const std::vector<Index>& train_idx_s;
  const std::vector<Index>& train_idx_t;
};

/// Labeled source set plus target set; target labels are retained for
/// evaluation only and reachable only through eval accessors.
class DomainPair {
 public:
  DomainPair(Tensor x_s, Tensor y_s, Tensor x_t, Tensor y_t_eval, Modality modality,
             std::map<std::string, double> metadata, std::uint64_t seed);

  Index input_dim() const { return x_s_.cols(); }
  Index num_classes() const { return y_s_.cols(); }
  Modality modality() const { return modality_; }
  const std::map<std::string, double>& metadata() const { return metadata_; }
  std::uint64_t seed() const { return seed_; }

  TrainingView training_view() const {
    return TrainingView{x_s_, y_s_, x_t_, train_idx_s_, train_idx_t_};
  }

  // Evaluation-side accessors.
  const Tensor& x_source() const { return x_s_; }
  const Tensor& y_source() const { return y_s_; }
  const Tensor& x_target() const { return x_t_; }
  const Tensor& y_target_eval() const { return y_t_eval_; }
  const std::vector<Index>& eval_idx_source() const { return eval_idx_s_; }
  const std::vector<Index>& eval_idx_target() const { return eval_idx_t_; }

  std::uint64_t data_hash() const;

 private:
  Tensor x_s_, y_s_, x_t_, y_t_eval_;
  Modality modality_;
  std::map<std::string, double> metadata_;
  std::uint64_t seed_;
  // Seeded 80/20 split per domain.
  std::vector<Index> train_idx_s_, eval_idx_s_, train_idx_t_, eval_idx_t_;
};

/// Interleaved two moons; target is a fresh draw rotated by rotation_deg
/// about its own centroid (labels ride along).
DomainPair two_moons(Index n_per_domain, double noise_sigma, double rotation_deg, std::uint64_t seed);

/// C Gaussian blobs (centers on a circle in the first two dims); target is
/// the same draw process translated by shift.
DomainPair shifted_blobs(Index num_classes, Index n_per_domain, Index dim,
                         const std::vector<double>& shift, std::uint64_t seed);

enum class GlyphShift : std::uint8_t { kBrightnessBias, kAdditiveTexture };
GlyphShift glyph_shift_from_string(const std::string& s);

/// Procedural grayscale glyphs (bar/cross/square/disc, C=4) with random
/// position and scale; pixels in [0,1]. Target applies the chosen shift.
DomainPair glyph_images(Index n_per_domain, Index size, GlyphShift shift_kind,
                        double shift_magnitude, std::uint64_t seed);

// CSV round-trip: header x_0..x_{d-1},y,domain with domain in {source,target}.
void export_domain_pair_csv(const DomainPair& pair, const std::string& path);
DomainPair import_domain_pair_csv(const std::string& path, Modality modality, std::uint64_t seed);

Tensor rows_subset(const Tensor& x, const std::vector<Index>& idx);

}  // namespace uda
