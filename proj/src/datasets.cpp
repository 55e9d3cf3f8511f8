#include "uda/datasets.hpp"

#include "uda/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace uda {

namespace {

void shuffled_split(Index n, Rng& rng, std::vector<Index>& train, std::vector<Index>& eval) {
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  for (Index i = n - 1; i > 0; --i) {
    const Index j = static_cast<Index>(rng.uniform_index(static_cast<std::uint64_t>(i) + 1));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  const Index n_train = (n * 8) / 10;
  train.assign(idx.begin(), idx.begin() + n_train);
  eval.assign(idx.begin() + n_train, idx.end());
}

Tensor one_hot(const std::vector<Index>& labels, Index num_classes) {
  Tensor y({static_cast<Index>(labels.size()), num_classes});
  for (std::size_t i = 0; i < labels.size(); ++i) y[static_cast<Index>(i) * num_classes + labels[i]] = 1.0;
  return y;
}

}  // namespace

DomainPair::DomainPair(Tensor x_s, Tensor y_s, Tensor x_t, Tensor y_t_eval, Modality modality,
                       std::map<std::string, double> metadata, std::uint64_t seed)
    : x_s_(std::move(x_s)),
      y_s_(std::move(y_s)),
      x_t_(std::move(x_t)),
      y_t_eval_(std::move(y_t_eval)),
      modality_(modality),
      metadata_(std::move(metadata)),
      seed_(seed) {
  if (x_s_.rows() != y_s_.rows() || x_t_.rows() != y_t_eval_.rows())
    throw std::invalid_argument("DomainPair: row count mismatch");
  if (y_s_.cols() != y_t_eval_.cols()) throw std::invalid_argument("DomainPair: class count mismatch");
  Rng split_rng = Rng(seed_).split(0x5eed);
  Rng s_rng = split_rng.split(1), t_rng = split_rng.split(2);
  shuffled_split(x_s_.rows(), s_rng, train_idx_s_, eval_idx_s_);
  shuffled_split(x_t_.rows(), t_rng, train_idx_t_, eval_idx_t_);
}

std::uint64_t DomainPair::data_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const Tensor& t) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.array().data());
    for (Index i = 0; i < t.numel() * static_cast<Index>(sizeof(double)); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  feed(x_s_);
  feed(y_s_);
  feed(x_t_);
  feed(y_t_eval_);
  return h;
}

Tensor rows_subset(const Tensor& x, const std::vector<Index>& idx) {
  Tensor out({static_cast<Index>(idx.size()), x.cols()});
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (Index c = 0; c < x.cols(); ++c) out[static_cast<Index>(i) * x.cols() + c] = x.at(idx[i], c);
  return out;
}

namespace {

// One two-moons draw: n points, alternating classes. Class 0 is the upper
// arc, class 1 the lower, interleaved the usual way.
void draw_moons(Index n, double sigma, Rng& rng, Tensor& x, std::vector<Index>& labels) {
  x = Tensor({n, 2});
  labels.assign(static_cast<std::size_t>(n), 0);
  for (Index i = 0; i < n; ++i) {
    const Index cls = i % 2;
    const double t = rng.uniform(0.0, M_PI);
    double px, py;
    if (cls == 0) {
      px = std::cos(t);
      py = std::sin(t);
    } else {
      px = 1.0 - std::cos(t);
      py = 0.5 - std::sin(t);
    }
    x[i * 2 + 0] = px + sigma * rng.gaussian();
    x[i * 2 + 1] = py + sigma * rng.gaussian();
    labels[static_cast<std::size_t>(i)] = cls;
  }
}

}  // namespace

DomainPair two_moons(Index n_per_domain, double noise_sigma, double rotation_deg, std::uint64_t seed) {
  if (n_per_domain < 2 || noise_sigma < 0.0) throw std::invalid_argument("two_moons: bad arguments");
  Rng rng(seed);
  Rng s_rng = rng.split(1), t_rng = rng.split(2);

  Tensor x_s;
  std::vector<Index> lab_s;
  draw_moons(n_per_domain, noise_sigma, s_rng, x_s, lab_s);

  Tensor x_t;
  std::vector<Index> lab_t;
  draw_moons(n_per_domain, noise_sigma, t_rng, x_t, lab_t);

  // Rigid rotation about the empirical centroid of the target draw.
  const double cx = x_t.as_matrix().col(0).mean();
  const double cy = x_t.as_matrix().col(1).mean();
  const double th = rotation_deg * M_PI / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  for (Index i = 0; i < n_per_domain; ++i) {
    const double px = x_t[i * 2 + 0] - cx;
    const double py = x_t[i * 2 + 1] - cy;
    x_t[i * 2 + 0] = c * px - s * py + cx;
    x_t[i * 2 + 1] = s * px + c * py + cy;
  }

  std::map<std::string, double> meta{{"noise_sigma", noise_sigma}, {"rotation_deg", rotation_deg}};
  return DomainPair(std::move(x_s), one_hot(lab_s, 2), std::move(x_t), one_hot(lab_t, 2),
                    Modality::kPoints2d, std::move(meta), seed);
}

DomainPair shifted_blobs(Index num_classes, Index n_per_domain, Index dim,
                         const std::vector<double>& shift, std::uint64_t seed) {
  if (num_classes < 2) throw std::invalid_argument("shifted_blobs: need at least 2 classes");
  if (dim < 2 || n_per_domain < num_classes) throw std::invalid_argument("shifted_blobs: bad arguments");
  if (static_cast<Index>(shift.size()) != dim) throw std::invalid_argument("shifted_blobs: shift dim mismatch");
  const double blob_sigma = 0.5, center_radius = 3.0;
  Rng rng(seed);

  auto draw = [&](Rng& r, bool shifted, Tensor& x, std::vector<Index>& labels) {
    x = Tensor({n_per_domain, dim});
    labels.resize(static_cast<std::size_t>(n_per_domain));
    for (Index i = 0; i < n_per_domain; ++i) {
      const Index cls = i % num_classes;
      const double ang = 2.0 * M_PI * static_cast<double>(cls) / static_cast<double>(num_classes);
      for (Index d = 0; d < dim; ++d) {
        double center = 0.0;
        if (d == 0) center = center_radius * std::cos(ang);
        if (d == 1) center = center_radius * std::sin(ang);
        x[i * dim + d] = center + blob_sigma * r.gaussian() + (shifted ? shift[static_cast<std::size_t>(d)] : 0.0);
      }
      labels[static_cast<std::size_t>(i)] = cls;
    }
  };

  Rng s_rng = rng.split(1), t_rng = rng.split(2);
  Tensor x_s, x_t;
  std::vector<Index> lab_s, lab_t;
  draw(s_rng, false, x_s, lab_s);
  draw(t_rng, true, x_t, lab_t);

  std::map<std::string, double> meta{{"blob_sigma", blob_sigma}};
  double shift_norm = 0.0;
  for (double v : shift) shift_norm += v * v;
  meta["shift_norm"] = std::sqrt(shift_norm);
  return DomainPair(std::move(x_s), one_hot(lab_s, num_classes), std::move(x_t),
                    one_hot(lab_t, num_classes), Modality::kPoints2d, std::move(meta), seed);
}

GlyphShift glyph_shift_from_string(const std::string& s) {
  if (s == "brightness_bias") return GlyphShift::kBrightnessBias;
  if (s == "additive_texture") return GlyphShift::kAdditiveTexture;
  throw std::invalid_argument("unknown glyph shift kind: " + s);
}

namespace {

// Paint one glyph (class 0..3: bar, cross, square, disc) at a random center
// and scale. Foreground intensity ~0.85, faint background noise.
void draw_glyph(Index size, Index cls, Rng& rng, double* pix) {
  const Index n = size * size;
  for (Index i = 0; i < n; ++i) pix[i] = 0.05 * rng.uniform01();
  const double scale = rng.uniform(0.8, 1.2);
  const double unit = static_cast<double>(size) / 16.0;
  const double cx = rng.uniform(0.35, 0.65) * static_cast<double>(size - 1);
  const double cy = rng.uniform(0.35, 0.65) * static_cast<double>(size - 1);
  const double fg = rng.uniform(0.75, 0.95);
  auto put = [&](Index r, Index c) {
    if (r >= 0 && r < size && c >= 0 && c < size) pix[r * size + c] = fg;
  };
  const double half_len = 4.0 * unit * scale;   // bar/cross arm
  const double half_side = 3.2 * unit * scale;  // square half side
  const double radius = 4.1 * unit * scale;     // disc radius
  switch (cls) {
    case 0:  // horizontal bar, 2 px thick
      for (Index r = 0; r < size; ++r)
        for (Index c = 0; c < size; ++c)
          if (std::abs(r - cy) <= 1.0 * unit && std::abs(c - cx) <= half_len) put(r, c);
      break;
    case 1:  // cross: horizontal + vertical bars
      for (Index r = 0; r < size; ++r)
        for (Index c = 0; c < size; ++c) {
          const bool horiz = std::abs(r - cy) <= 1.0 * unit && std::abs(c - cx) <= half_len;
          const bool vert = std::abs(c - cx) <= 1.0 * unit && std::abs(r - cy) <= half_len;
          if (horiz || vert) put(r, c);
        }
      break;
    case 2:  // filled square
      for (Index r = 0; r < size; ++r)
        for (Index c = 0; c < size; ++c)
          if (std::abs(r - cy) <= half_side && std::abs(c - cx) <= half_side) put(r, c);
      break;
    default:  // filled disc
      for (Index r = 0; r < size; ++r)
        for (Index c = 0; c < size; ++c) {
          const double dr = r - cy, dc = c - cx;
          if (dr * dr + dc * dc <= radius * radius) put(r, c);
        }
      break;
  }
}

}  // namespace

DomainPair glyph_images(Index n_per_domain, Index size, GlyphShift shift_kind,
                        double shift_magnitude, std::uint64_t seed) {
  if (size < 8) throw std::invalid_argument("glyph_images: size must be >= 8");
  if (n_per_domain < 4) throw std::invalid_argument("glyph_images: need at least 4 samples");
  const Index num_classes = 4, dim = size * size;
  Rng rng(seed);

  auto draw_domain = [&](Rng& r, bool shifted, Tensor& x, std::vector<Index>& labels) {
    x = Tensor({n_per_domain, dim});
    labels.resize(static_cast<std::size_t>(n_per_domain));
    for (Index i = 0; i < n_per_domain; ++i) {
      const Index cls = i % num_classes;
      labels[static_cast<std::size_t>(i)] = cls;
      double* pix = x.array().data() + i * dim;
      draw_glyph(size, cls, r, pix);
      if (shifted && shift_magnitude != 0.0) {
        if (shift_kind == GlyphShift::kBrightnessBias) {
          for (Index p = 0; p < dim; ++p) pix[p] += shift_magnitude;
        } else {
          // Fixed diagonal grating; shares no structure with the glyphs.
          for (Index row = 0; row < size; ++row)
            for (Index col = 0; col < size; ++col)
              pix[row * size + col] +=
                  shift_magnitude * 0.5 *
                  (1.0 + std::sin(2.0 * M_PI * static_cast<double>(row + col) / 4.0));
        }
        for (Index p = 0; p < dim; ++p) pix[p] = std::min(1.0, std::max(0.0, pix[p]));
      }
    }
  };

  Rng s_rng = rng.split(1), t_rng = rng.split(2);
  Tensor x_s, x_t;
  std::vector<Index> lab_s, lab_t;
  draw_domain(s_rng, false, x_s, lab_s);
  draw_domain(t_rng, true, x_t, lab_t);

  std::map<std::string, double> meta{{"size", static_cast<double>(size)},
                                     {"shift_kind", static_cast<double>(shift_kind)},
                                     {"shift_magnitude", shift_magnitude}};
  return DomainPair(std::move(x_s), one_hot(lab_s, num_classes), std::move(x_t),
                    one_hot(lab_t, num_classes), Modality::kImage, std::move(meta), seed);
}

// ---- CSV ---------------------------------------------------------------------

namespace {

std::string format_double(double v) {
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

void export_domain_pair_csv(const DomainPair& pair, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("export_domain_pair_csv: cannot open " + path);
  const Index d = pair.input_dim();
  for (Index c = 0; c < d; ++c) out << "x_" << c << ",";
  out << "y,domain\n";
  auto dump = [&](const Tensor& x, const Tensor& y, const char* domain) {
    for (Index i = 0; i < x.rows(); ++i) {
      for (Index c = 0; c < d; ++c) out << format_double(x.at(i, c)) << ",";
      out << argmax_row(y, i) << "," << domain << "\n";
    }
  };
  dump(pair.x_source(), pair.y_source(), "source");
  dump(pair.x_target(), pair.y_target_eval(), "target");
}

DomainPair import_domain_pair_csv(const std::string& path, Modality modality, std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("import_domain_pair_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("import_domain_pair_csv: empty file");
  Index d = 0;
  {
    std::stringstream header(line);
    std::string col;
    while (std::getline(header, col, ',')) {
      if (col.rfind("x_", 0) == 0) ++d;
    }
  }
  if (d == 0) throw std::runtime_error("import_domain_pair_csv: no feature columns");

  std::vector<double> xs, xt;
  std::vector<Index> ys, yt;
  Index num_classes = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string cell;
    std::vector<double> feats;
    for (Index c = 0; c < d; ++c) {
      if (!std::getline(row, cell, ',')) throw std::runtime_error("import_domain_pair_csv: short row");
      feats.push_back(std::stod(cell));
    }
    if (!std::getline(row, cell, ',')) throw std::runtime_error("import_domain_pair_csv: missing label");
    const Index label = static_cast<Index>(std::stoll(cell));
    num_classes = std::max(num_classes, label + 1);
    if (!std::getline(row, cell)) throw std::runtime_error("import_domain_pair_csv: missing domain");
    if (cell == "source") {
      xs.insert(xs.end(), feats.begin(), feats.end());
      ys.push_back(label);
    } else if (cell == "target") {
      xt.insert(xt.end(), feats.begin(), feats.end());
      yt.push_back(label);
    } else {
      throw std::runtime_error("import_domain_pair_csv: bad domain value: " + cell);
    }
  }
  auto to_tensor = [d](const std::vector<double>& flat) {
    Tensor t({static_cast<Index>(flat.size()) / d, d});
    for (std::size_t i = 0; i < flat.size(); ++i) t[static_cast<Index>(i)] = flat[i];
    return t;
  };
  return DomainPair(to_tensor(xs), one_hot(ys, num_classes), to_tensor(xt), one_hot(yt, num_classes),
                    modality, {}, seed);
}

}  // namespace uda
