#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "uda/datasets.hpp"

#include <cmath>
#include <filesystem>
#include <type_traits>

using namespace uda;

namespace {

double mean_col(const Tensor& x, Index c) {
  double s = 0.0;
  for (Index i = 0; i < x.rows(); ++i) s += x.at(i, c);
  return s / static_cast<double>(x.rows());
}

}  // namespace

TEST_CASE("two_moons basics") {
  const DomainPair pair = two_moons(300, 0.1, 45.0, 7);
  CHECK(pair.input_dim() == 2);
  CHECK(pair.num_classes() == 2);
  CHECK(pair.x_source().rows() == 300);
  CHECK(pair.x_target().rows() == 300);
  CHECK(pair.modality() == Modality::kPoints2d);
  CHECK(pair.metadata().at("rotation_deg") == 45.0);

  SUBCASE("same seed is bit-identical") {
    const DomainPair again = two_moons(300, 0.1, 45.0, 7);
    CHECK(bitwise_equal(pair.x_source(), again.x_source()));
    CHECK(bitwise_equal(pair.x_target(), again.x_target()));
    CHECK(pair.data_hash() == again.data_hash());
  }
  SUBCASE("different seed differs") {
    const DomainPair other = two_moons(300, 0.1, 45.0, 8);
    CHECK(pair.data_hash() != other.data_hash());
  }
  SUBCASE("rotation preserves pairwise distances") {
    const DomainPair flat = two_moons(60, 0.1, 0.0, 11);
    const DomainPair rot = two_moons(60, 0.1, 170.0, 11);
    // Same seed: the pre-rotation target draw is identical, so pairwise
    // distances must survive the rigid motion.
    const Tensor& a = flat.x_target();
    const Tensor& b = rot.x_target();
    for (Index i = 0; i < 10; ++i)
      for (Index j = i + 1; j < 10; ++j) {
        const double da = std::hypot(a.at(i, 0) - a.at(j, 0), a.at(i, 1) - a.at(j, 1));
        const double db = std::hypot(b.at(i, 0) - b.at(j, 0), b.at(i, 1) - b.at(j, 1));
        CHECK(da == doctest::Approx(db).epsilon(1e-9));
      }
  }
  SUBCASE("rotation by 360 degrees equals rotation by 0") {
    const DomainPair zero = two_moons(50, 0.05, 0.0, 13);
    const DomainPair full = two_moons(50, 0.05, 360.0, 13);
    for (Index i = 0; i < zero.x_target().numel(); ++i)
      CHECK(zero.x_target()[i] == doctest::Approx(full.x_target()[i]).epsilon(1e-9));
  }
  SUBCASE("labels alternate and are preserved under rotation") {
    CHECK(bitwise_equal(pair.y_source(), pair.y_target_eval()));
  }
}

TEST_CASE("shifted_blobs") {
  SUBCASE("zero shift leaves distributions identical in law") {
    const DomainPair pair = shifted_blobs(3, 120, 2, {0.0, 0.0}, 21);
    // Not bitwise equal (independent draws), but per-class means agree.
    CHECK(std::abs(mean_col(pair.x_source(), 0) - mean_col(pair.x_target(), 0)) < 0.3);
    CHECK(std::abs(mean_col(pair.x_source(), 1) - mean_col(pair.x_target(), 1)) < 0.3);
  }
  SUBCASE("shift moves the target cloud") {
    const DomainPair pair = shifted_blobs(3, 120, 2, {5.0, -2.0}, 22);
    CHECK(mean_col(pair.x_target(), 0) - mean_col(pair.x_source(), 0) ==
          doctest::Approx(5.0).epsilon(0.2));
    CHECK(mean_col(pair.x_target(), 1) - mean_col(pair.x_source(), 1) ==
          doctest::Approx(-2.0).epsilon(0.2));
  }
  SUBCASE("label marginals equal across domains by construction") {
    const DomainPair pair = shifted_blobs(4, 100, 3, {1.0, 1.0, 0.0}, 23);
    for (Index c = 0; c < 4; ++c) {
      double s = 0.0, t = 0.0;
      for (Index i = 0; i < pair.y_source().rows(); ++i) {
        s += pair.y_source().at(i, c);
        t += pair.y_target_eval().at(i, c);
      }
      CHECK(s == t);
    }
  }
  SUBCASE("argument validation") {
    CHECK_THROWS_AS(shifted_blobs(1, 100, 2, {0.0, 0.0}, 1), std::invalid_argument);
    CHECK_THROWS_AS(shifted_blobs(3, 100, 2, {0.0}, 1), std::invalid_argument);
  }
}

TEST_CASE("glyph_images") {
  const DomainPair pair = glyph_images(400, 16, GlyphShift::kBrightnessBias, 0.2, 31);
  CHECK(pair.input_dim() == 256);
  CHECK(pair.num_classes() == 4);
  CHECK(pair.modality() == Modality::kImage);

  SUBCASE("every pixel is inside [0,1]") {
    for (Index i = 0; i < pair.x_source().numel(); ++i) {
      CHECK(pair.x_source()[i] >= 0.0);
      CHECK(pair.x_source()[i] <= 1.0);
    }
    for (Index i = 0; i < pair.x_target().numel(); ++i) {
      CHECK(pair.x_target()[i] >= 0.0);
      CHECK(pair.x_target()[i] <= 1.0);
    }
  }
  SUBCASE("zero shift magnitude leaves domains identical in law") {
    const DomainPair plain = glyph_images(200, 16, GlyphShift::kBrightnessBias, 0.0, 32);
    const double ms = plain.x_source().array().mean();
    const double mt = plain.x_target().array().mean();
    CHECK(std::abs(ms - mt) < 0.02);
  }
  SUBCASE("brightness bias raises the target mean") {
    const double ms = pair.x_source().array().mean();
    const double mt = pair.x_target().array().mean();
    CHECK(mt > ms + 0.1);
  }
  SUBCASE("class-conditional areas order bar < cross < square < disc (Monte Carlo)") {
    const DomainPair big = glyph_images(1000, 16, GlyphShift::kBrightnessBias, 0.0, 33);
    double area[4] = {};
    Index count[4] = {};
    const Tensor& x = big.x_source();
    const Tensor& y = big.y_source();
    for (Index i = 0; i < x.rows(); ++i) {
      Index cls = 0;
      for (Index c = 1; c < 4; ++c)
        if (y.at(i, c) > y.at(i, cls)) cls = c;
      double bright = 0.0;
      for (Index p = 0; p < 256; ++p)
        if (x[i * 256 + p] > 0.5) bright += 1.0;
      area[cls] += bright;
      ++count[cls];
    }
    for (int c = 0; c < 4; ++c) area[c] /= static_cast<double>(count[c]);
    CHECK(area[0] < area[1]);
    CHECK(area[1] < area[2]);
    CHECK(area[2] < area[3]);
  }
  SUBCASE("additive texture and unknown kinds") {
    const DomainPair tex = glyph_images(100, 16, GlyphShift::kAdditiveTexture, 0.25, 34);
    CHECK(tex.x_target().array().maxCoeff() <= 1.0);
    CHECK_THROWS_AS(glyph_shift_from_string("speckle"), std::invalid_argument);
  }
  SUBCASE("size below 8 is rejected") {
    CHECK_THROWS_AS(glyph_images(10, 4, GlyphShift::kBrightnessBias, 0.1, 1), std::invalid_argument);
  }
}

namespace {

template <class T>
constexpr bool exposes_target_labels = requires(T v) { v.y_t_eval; } || requires(T v) { v.y_t; };

}  // namespace

TEST_CASE("training view structurally omits target labels") {
  const DomainPair pair = two_moons(50, 0.1, 45.0, 41);
  const TrainingView view = pair.training_view();
  CHECK(view.x_s.rows() == 50);
  CHECK(view.x_t.rows() == 50);
  CHECK(view.train_idx_s.size() == 40);  // 80/20 split
  CHECK(view.train_idx_t.size() == 40);

  // Compile-time guarantee: no member of the training view exposes target
  // labels.
  static_assert(!exposes_target_labels<TrainingView>);
}

TEST_CASE("csv export/import round-trips exactly") {
  const DomainPair pair = shifted_blobs(3, 60, 2, {1.5, -0.5}, 51);
  const auto path = (std::filesystem::temp_directory_path() / "uda_pair_test.csv").string();
  export_domain_pair_csv(pair, path);
  const DomainPair back = import_domain_pair_csv(path, Modality::kPoints2d, 51);
  CHECK(back.x_source().shape() == pair.x_source().shape());
  CHECK(bitwise_equal(back.x_source(), pair.x_source()));
  CHECK(bitwise_equal(back.x_target(), pair.x_target()));
  CHECK(bitwise_equal(back.y_source(), pair.y_source()));
  CHECK(bitwise_equal(back.y_target_eval(), pair.y_target_eval()));
  std::filesystem::remove(path);
}
