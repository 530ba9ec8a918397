#include <doctest.h>

#include <cmath>

#include "dfpl/nn.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace dfpl;

TEST_CASE("forward: zero network maps everything to zero") {
  Rng rng(3);
  auto p = testutil::random_params(rng, 6, {5}, 4, 3);
  p.for_each_layer([](DenseLayer<double>& l) {
    l.weight.setZero();
    l.bias.setZero();
  });
  const auto out = forward(p, testutil::random_batch(rng, 7, 6));
  CHECK(out.features.isZero(0));
  CHECK(out.logits.isZero(0));
}

TEST_CASE("forward: identity extractor passes non-negative input through") {
  ModelParams<double> p;
  p.extractor.push_back({MatXd::Identity(5, 5), VecXd::Zero(5)});
  p.classifier = {MatXd::Ones(2, 5), VecXd::Zero(2)};
  Rng rng(4);
  const TensorXd x = testutil::random_batch(rng, 3, 5, 0, 2);
  CHECK(forward(p, x).features == x);
}

TEST_CASE("forward: shapes and values against a triple-loop oracle") {
  Rng rng(11);
  const auto p = testutil::random_params(rng, 8, {}, 5, 3);
  const auto x = testutil::random_batch(rng, 4, 8);
  const auto out = forward(p, x);
  REQUIRE(out.features.rows() == 4);
  REQUIRE(out.features.cols() == 5);
  REQUIRE(out.logits.rows() == 4);
  REQUIRE(out.logits.cols() == 3);
  const auto ref = oracle::forward(p, x);
  for (Eigen::Index r = 0; r < 4; ++r) {
    for (Eigen::Index c = 0; c < 5; ++c) CHECK(std::abs(out.features(r, c) - ref.features[r][c]) < 1e-12);
    for (Eigen::Index c = 0; c < 3; ++c) CHECK(std::abs(out.logits(r, c) - ref.logits[r][c]) < 1e-12);
  }
}

TEST_CASE("forward: rejects mismatched batch width") {
  Rng rng(1);
  const auto p = testutil::random_params(rng, 4, {}, 3, 2);
  CHECK_THROWS_AS(forward(p, testutil::random_batch(rng, 2, 5)), DimensionError);
}

TEST_CASE("cross_entropy") {
  SUBCASE("uniform logits give ln |I|") {
    const TensorXd z = TensorXd::Zero(3, 10);
    const std::vector<ClassId> y{0, 4, 9};
    CHECK(cross_entropy(z, std::span<const ClassId>(y)) == doctest::Approx(std::log(10.0)).epsilon(1e-15));
  }
  SUBCASE("saturated correct class") {
    TensorXd z = TensorXd::Zero(1, 4);
    z(0, 2) = 1e4;
    const std::vector<ClassId> y{2};
    CHECK(cross_entropy(z, std::span<const ClassId>(y)) <= 1e-6);
  }
  SUBCASE("[[1,2,3]] with label 0") {
    TensorXd z(1, 3);
    z << 1, 2, 3;
    const std::vector<ClassId> y{0};
    const double direct = -std::log(std::exp(1.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
    const double got = cross_entropy(z, std::span<const ClassId>(y));
    CHECK(got == doctest::Approx(direct).epsilon(1e-14));
    CHECK(got == doctest::Approx(2.40760596).epsilon(1e-8));
  }
  SUBCASE("label outside the class range") {
    const TensorXd z = TensorXd::Zero(1, 3);
    const std::vector<ClassId> y{3};
    CHECK_THROWS_AS(cross_entropy(z, std::span<const ClassId>(y)), InvalidArgument);
  }
}

TEST_CASE("backward: lambda = 0 collapses to classification-only gradients") {
  Rng rng(21);
  const auto p = testutil::random_params(rng, 6, {7}, 4, 3);
  const auto x = testutil::random_batch(rng, 6, 6);
  const auto y = testutil::cycled_labels(6, 3);
  PrototypeSet global(kGlobalOwner, 1);
  for (ClassId c = 0; c < 3; ++c) global.set(c, VecXd::Constant(4, 0.3 * c));
  const auto a = backward(p, x, std::span<const ClassId>(y), global, 0.0);
  const auto b = classification_backward(p, x, std::span<const ClassId>(y));
  CHECK(flatten(a.grads) == flatten(b.grads));
}

TEST_CASE("backward: zero distance to the global prototypes adds nothing") {
  Rng rng(22);
  const auto p = testutil::random_params(rng, 5, {6}, 4, 3);
  const auto x = testutil::random_batch(rng, 6, 5);
  const auto y = testutil::cycled_labels(6, 3);
  const auto plain = classification_backward(p, x, std::span<const ClassId>(y));
  // Global prototypes equal to this batch's own class means.
  const auto aligned = backward(p, x, std::span<const ClassId>(y), plain.batch_prototypes, 1.0);
  CHECK(aligned.loss_r == 0.0);
  CHECK(flatten(aligned.grads) == flatten(plain.grads));
}

TEST_CASE("backward: finite differences on a small instance") {
  Rng rng(23);
  const auto p = testutil::random_params(rng, 5, {6}, 4, 3);
  const auto x = testutil::random_batch(rng, 6, 5);
  const auto y = testutil::cycled_labels(6, 3);
  PrototypeSet global(kGlobalOwner, 1);
  for (ClassId c = 0; c < 3; ++c) global.set(c, testutil::random_batch(rng, 1, 4, 0, 1).row(0).transpose());
  const auto res = backward(p, x, std::span<const ClassId>(y), global, 1.0);
  CHECK(res.loss_s + res.loss_r == doctest::Approx(oracle::total_loss(p, x, y, global, 1.0)).epsilon(1e-12));
  const auto rep = testutil::finite_difference_check(p, x, y, global, 1.0, res.grads);
  CHECK(rep.checked > rep.skipped);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("sgd_step") {
  Rng rng(5);
  const auto p = testutil::random_params(rng, 3, {}, 2, 2);
  SUBCASE("zero gradient leaves parameters unchanged") {
    const auto g = zeros_like<GradientsTag>(p);
    CHECK(flatten(sgd_step(p, g, 0.1)) == flatten(p));
  }
  SUBCASE("w = 1, g = 2, eta = 0.1 gives 0.8") {
    auto q = p;
    q.classifier.weight(0, 0) = 1.0;
    auto g = zeros_like<GradientsTag>(q);
    g.classifier.weight(0, 0) = 2.0;
    CHECK(sgd_step(q, g, 0.1).classifier.weight(0, 0) == doctest::Approx(0.8).epsilon(1e-15));
  }
  SUBCASE("two steps with fixed gradients equal one step with their sum") {
    auto g1 = zeros_like<GradientsTag>(p);
    auto g2 = zeros_like<GradientsTag>(p);
    unflatten(g1, testutil::random_batch(rng, 1, static_cast<Eigen::Index>(p.parameter_count())).row(0).transpose().eval());
    unflatten(g2, testutil::random_batch(rng, 1, static_cast<Eigen::Index>(p.parameter_count())).row(0).transpose().eval());
    auto sum = g1;
    unflatten(sum, (flatten(g1) + flatten(g2)).eval());
    const auto two = sgd_step(sgd_step(p, g1, 0.1), g2, 0.1);
    const auto one = sgd_step(p, sum, 0.1);
    CHECK((flatten(two) - flatten(one)).cwiseAbs().maxCoeff() < 1e-14);
  }
  SUBCASE("non-positive rate rejected") {
    CHECK_THROWS_AS(sgd_step(p, zeros_like<GradientsTag>(p), 0.0), InvalidArgument);
  }
}
