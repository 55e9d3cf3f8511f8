#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "uda/nn.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>

using namespace uda;

namespace {

void zero_mlp(MlpParams& m) {
  for (DenseLayer& l : m.layers) {
    l.weight.array().setZero();
    l.bias.array().setZero();
  }
}

Tensor random_batch(Index rows, Index cols, Rng& rng) {
  Tensor t({rows, cols});
  for (Index i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-1.0, 1.0);
  return t;
}

}  // namespace

TEST_CASE("forward_h: zero-weight classifier gives uniform rows") {
  Rng rng(11);
  BundleConfig cfg;
  cfg.input_dim = 2;
  cfg.num_classes = 4;
  ModelBundle b = make_bundle(cfg, rng);
  zero_mlp(b.g);
  const Tensor x = random_batch(6, 2, rng);
  const HForward out = forward_h(b, x);
  CHECK(out.z.shape()[0] == 6);
  CHECK(out.z.shape()[1] == cfg.repr_dim);
  for (Index i = 0; i < out.y_prob.numel(); ++i)
    CHECK(out.y_prob[i] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("forward_h: teacher equal to student matches the student path") {
  Rng rng(12);
  BundleConfig cfg;
  cfg.with_teacher = true;
  ModelBundle b = make_bundle(cfg, rng);
  const Tensor x = random_batch(5, 2, rng);
  const HForward student = forward_h(b, x, false);
  const HForward teacher = forward_h(b, x, true);
  CHECK(bitwise_equal(student.z, teacher.z));
  CHECK(bitwise_equal(student.y_prob, teacher.y_prob));
}

TEST_CASE("softmax rows sum to one and stay strictly positive") {
  Rng rng(13);
  BundleConfig cfg;
  cfg.num_classes = 5;
  ModelBundle b = make_bundle(cfg, rng);
  const Tensor x = random_batch(32, 2, rng);
  const Tensor p = forward_h(b, x).y_prob;
  for (Index i = 0; i < p.rows(); ++i) {
    double s = 0.0;
    for (Index c = 0; c < p.cols(); ++c) {
      CHECK(p.at(i, c) > 0.0);
      s += p.at(i, c);
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("discriminator_forward") {
  Rng rng(14);
  SUBCASE("zero weights score 0.5 everywhere") {
    BundleConfig cfg;
    cfg.adv_kind = AdvKind::kDann;
    ModelBundle b = make_bundle(cfg, rng);
    zero_mlp(b.disc[0]);
    const Tensor z = random_batch(4, cfg.repr_dim, rng);
    const Tensor s = discriminator_forward(b, z, nullptr);
    CHECK(s.shape()[1] == 1);
    for (Index i = 0; i < s.numel(); ++i) CHECK(s[i] == 0.5);
  }
  SUBCASE("cdan outer product places z in the one-hot block") {
    BundleConfig cfg;
    cfg.adv_kind = AdvKind::kCdan;
    cfg.num_classes = 2;
    ModelBundle b = make_bundle(cfg, rng);
    const Index dz = cfg.repr_dim;
    Tensor z = random_batch(1, dz, rng);
    Tensor y({1, 2});
    y[1] = 1.0;  // one-hot class 1
    // Reconstruct the features the discriminator sees via a single-layer
    // identity check: feed through zero weights so only shape/structure is
    // exercised, then check the flattened outer product by hand.
    Tensor feat({1, dz * 2});
    for (Index i = 0; i < dz; ++i)
      for (Index j = 0; j < 2; ++j) feat[i * 2 + j] = z[i] * y[j];
    for (Index i = 0; i < dz; ++i) {
      CHECK(feat[i * 2 + 0] == 0.0);
      CHECK(feat[i * 2 + 1] == z[i]);
    }
    const Tensor s = discriminator_forward(b, z, &y);
    CHECK(s.shape()[0] == 1);
    CHECK(s.shape()[1] == 1);
  }
  SUBCASE("cliv with C=1 equals dann with identical weights") {
    BundleConfig cfg;
    cfg.adv_kind = AdvKind::kCliv;
    cfg.num_classes = 1;
    ModelBundle cliv = make_bundle(cfg, rng);
    ModelBundle dann = cliv;
    dann.adv_kind = AdvKind::kDann;
    const Tensor z = random_batch(3, cfg.repr_dim, rng);
    Tensor ones({3, 1});
    ones.array().setOnes();
    const Tensor s_cliv = discriminator_forward(cliv, z, &ones);
    const Tensor s_dann = discriminator_forward(dann, z, nullptr);
    CHECK(bitwise_equal(s_cliv, s_dann));
  }
  SUBCASE("cliv and cdan require predictions") {
    BundleConfig cfg;
    cfg.adv_kind = AdvKind::kCliv;
    cfg.num_classes = 3;
    ModelBundle b = make_bundle(cfg, rng);
    const Tensor z = random_batch(2, cfg.repr_dim, rng);
    CHECK_THROWS_AS(discriminator_forward(b, z, nullptr), std::invalid_argument);
  }
}

TEST_CASE("sgd_step") {
  SUBCASE("momentum 0, lr 0.1, grad 1 moves a scalar from 0 to -0.1") {
    Tensor p({1});
    std::vector<Tensor*> params{&p};
    SgdConfig cfg;
    cfg.momentum = 0.0;
    SgdState sgd(cfg, params);
    std::vector<Tensor> grads{Tensor({1}, ArrayX{{1.0}})};
    sgd.step(params, grads, 0.1);
    CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-15));
    CHECK(sgd.steps() == 1);
  }
  SUBCASE("constant gradient accumulates geometric velocity") {
    Tensor p({1});
    std::vector<Tensor*> params{&p};
    SgdConfig cfg;
    cfg.momentum = 0.9;
    SgdState sgd(cfg, params);
    std::vector<Tensor> grads{Tensor({1}, ArrayX{{1.0}})};
    const double lr = 0.1;
    sgd.step(params, grads, lr);
    sgd.step(params, grads, lr);
    // v1 = -lr, v2 = 0.9*v1 - lr; p = v1 + v2.
    const double v1 = -lr, v2 = 0.9 * v1 - lr;
    CHECK(p[0] == doctest::Approx(v1 + v2).epsilon(1e-15));
  }
  SUBCASE("zero gradient with zero velocity is a no-op") {
    Tensor p({3}, ArrayX{{1.0, -2.0, 3.0}});
    const Tensor before = p;
    std::vector<Tensor*> params{&p};
    SgdState sgd(SgdConfig{}, params);
    std::vector<Tensor> grads{Tensor({3})};
    sgd.step(params, grads, 0.5);
    CHECK(bitwise_equal(p, before));
  }
  SUBCASE("nonfinite gradients are rejected") {
    Tensor p({1});
    std::vector<Tensor*> params{&p};
    SgdState sgd(SgdConfig{}, params);
    Tensor bad({1});
    bad[0] = std::numeric_limits<double>::quiet_NaN();
    std::vector<Tensor> grads{bad};
    CHECK_THROWS_AS(sgd.step(params, grads, 0.1), std::invalid_argument);
  }
  SUBCASE("quadratic bowl converges within 500 steps") {
    // Minimize 0.5*p^2: grad = p.
    Tensor p({1}, ArrayX{{1.0}});
    std::vector<Tensor*> params{&p};
    SgdConfig cfg;
    cfg.momentum = 0.9;
    SgdState sgd(cfg, params);
    for (int i = 0; i < 500; ++i) {
      std::vector<Tensor> grads{p};
      sgd.step(params, grads, 0.1);
    }
    CHECK(std::abs(p[0]) < 1e-6);
  }
}

TEST_CASE("lr_schedule") {
  SgdConfig cfg;  // lr0 = 1e-2, alpha 10, beta 0.75
  CHECK(lr_schedule(cfg, 0.0) == doctest::Approx(1e-2).epsilon(1e-15));
  CHECK(lr_schedule(cfg, 1.0) == doctest::Approx(1e-2 / std::pow(11.0, 0.75)).epsilon(1e-12));
  double prev = lr_schedule(cfg, 0.0);
  for (int i = 1; i < 100; ++i) {
    const double cur = lr_schedule(cfg, static_cast<double>(i) / 99.0);
    CHECK(cur <= prev);
    prev = cur;
  }
  CHECK_THROWS_AS(lr_schedule(cfg, 1.5), std::invalid_argument);
}

TEST_CASE("ema_update") {
  Rng rng(15);
  BundleConfig cfg;
  cfg.with_teacher = true;
  SUBCASE("beta 0 copies the student") {
    ModelBundle b = make_bundle(cfg, rng);
    b.phi.layers[0].weight[0] += 0.5;
    ema_update(b, 0.0);
    CHECK(bitwise_equal(b.teacher->phi.layers[0].weight, b.phi.layers[0].weight));
  }
  SUBCASE("beta 1 leaves the teacher unchanged") {
    ModelBundle b = make_bundle(cfg, rng);
    const Tensor before = b.teacher->phi.layers[0].weight;
    b.phi.layers[0].weight.array() += 1.0;
    ema_update(b, 1.0);
    CHECK(bitwise_equal(b.teacher->phi.layers[0].weight, before));
  }
  SUBCASE("beta 0.5 with teacher 0, student 2 gives 1") {
    ModelBundle b = make_bundle(cfg, rng);
    b.teacher->phi.layers[0].weight.array().setZero();
    b.phi.layers[0].weight.array().setConstant(2.0);
    ema_update(b, 0.5);
    for (Index i = 0; i < b.teacher->phi.layers[0].weight.numel(); ++i)
      CHECK(b.teacher->phi.layers[0].weight[i] == 1.0);
  }
  SUBCASE("update is affine in the parameters") {
    const double c = 3.25;
    ModelBundle a = make_bundle(cfg, rng);
    ModelBundle scaled = a;
    for (Tensor* p : trainable_params(scaled)) p->array() *= c;
    scaled.teacher->phi.layers[0].weight.array() = c * a.teacher->phi.layers[0].weight.array();
    scaled.teacher->g.layers[0].weight.array() = c * a.teacher->g.layers[0].weight.array();
    ema_update(a, 0.9);
    ema_update(scaled, 0.9);
    const Tensor& ta = a.teacher->phi.layers[0].weight;
    const Tensor& ts = scaled.teacher->phi.layers[0].weight;
    for (Index i = 0; i < ta.numel(); ++i) CHECK(ts[i] == doctest::Approx(c * ta[i]).epsilon(1e-12));
  }
  SUBCASE("missing teacher is an error") {
    BundleConfig plain;
    ModelBundle b = make_bundle(plain, rng);
    CHECK_THROWS_AS(ema_update(b, 0.5), std::invalid_argument);
  }
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  Rng rng(16);
  BundleConfig cfg;
  cfg.adv_kind = AdvKind::kCliv;
  cfg.num_classes = 3;
  cfg.with_teacher = true;
  ModelBundle b = make_bundle(cfg, rng);
  // Touch values that stress the hex round-trip.
  b.phi.layers[0].weight[0] = 0.1;  // not exactly representable
  b.phi.layers[0].weight[1] = -0.0;
  b.phi.layers[0].weight[2] = 1e-300;

  const std::string path = (std::filesystem::temp_directory_path() / "uda_ckpt_test.json").string();
  save_checkpoint(b, path);
  const ModelBundle r = load_checkpoint(path);
  CHECK(r.adv_kind == AdvKind::kCliv);
  CHECK(r.num_classes == 3);
  CHECK(r.teacher.has_value());
  auto pa = trainable_params(b);
  auto pb = trainable_params(r);
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(bitwise_equal(*pa[i], *pb[i]));
  CHECK(bitwise_equal(b.teacher->phi.layers[0].weight, r.teacher->phi.layers[0].weight));
  CHECK(param_hash(b) == param_hash(r));
  std::filesystem::remove(path);
}

TEST_CASE("fixed seed two-moons bundle reproduces the recorded prediction") {
  // Frozen reference produced once from this implementation (seed 42, default
  // architecture, input (0.25, -0.125)): guards initialization and forward
  // against silent drift.
  Rng rng(42);
  BundleConfig cfg;
  ModelBundle b = make_bundle(cfg, rng);
  Tensor x({1, 2});
  x[0] = 0.25;
  x[1] = -0.125;
  const Tensor p = forward_h(b, x).y_prob;
  CHECK(p[0] == doctest::Approx(0.5152327739962933).epsilon(1e-14));
  CHECK(p[1] == doctest::Approx(0.48476722600370675).epsilon(1e-14));
  CHECK(p[0] + p[1] == doctest::Approx(1.0).epsilon(1e-12));
}
