#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "oracle.hpp"
#include "raw/error.hpp"
#include "raw/verifier.hpp"
#include "support.hpp"

using namespace raw;

TEST_CASE("init_params: layout, scale, biases, determinism") {
  const VerifierParams p = init_params(7);
  CHECK(p.parameter_count() == 23649);
  CHECK(p.conv1_w.size() == 16 * 3 * 9);
  CHECK(p.conv3_w.size() == 64 * 32 * 9);
  CHECK(p.dense_w.size() == 64);
  CHECK(p.dense_b.size() == 1);
  CHECK(init_params(7) == p);
  CHECK(!(init_params(8) == p));

  const double s1 = std::sqrt(6.0 / 27.0);
  CHECK(s1 == doctest::Approx(0.4714).epsilon(1e-4));
  float m1 = 0.0f;
  for (float w : p.conv1_w) m1 = std::max(m1, std::abs(w));
  CHECK(m1 <= s1);
  CHECK(m1 > 0.9 * s1);
  float m3 = 0.0f;
  for (float w : p.conv3_w) m3 = std::max(m3, std::abs(w));
  CHECK(m3 <= std::sqrt(6.0 / 288.0));
  for (auto* b : {&p.conv1_b, &p.conv2_b, &p.conv3_b, &p.dense_b})
    for (float v : *b) CHECK(v == 0.0f);
}

TEST_CASE("closed-form scores") {
  const std::vector<Image> batch{testing::random_image({3, 16, 16}, 1), testing::random_image({3, 24, 9}, 2)};
  VerifierParams p = VerifierParams::zeros();
  for (double s : score(p, batch)) CHECK(s == 0.5);
  p.dense_b[0] = 10.0f;
  for (double s : score(p, batch)) CHECK(s == doctest::Approx(1.0 / (1.0 + std::exp(-10.0))).epsilon(1e-12));
  CHECK(1.0 / (1.0 + std::exp(-10.0)) == doctest::Approx(0.99995).epsilon(1e-5));
}

TEST_CASE("scores stay strictly inside (0, 1)") {
  VerifierParams p = VerifierParams::zeros();
  const std::vector<Image> x{Image(Shape{3, 8, 8}, 0.5f)};
  p.dense_b[0] = 1e4f;
  CHECK(score(p, x)[0] < 1.0);
  p.dense_b[0] = -1e4f;
  CHECK(score(p, x)[0] > 0.0);
}

TEST_CASE("forward matches the direct-convolution oracle") {
  const VerifierParams p = init_params(3);
  const auto d = oracle::to_double(p);
  for (auto [h, w] : {std::pair{16, 16}, {64, 64}, {9, 13}}) {
    const Image x = testing::random_image({3, h, w}, h + w);
    const double ref = oracle::score(d, oracle::as_double(x.data()), h, w);
    CHECK(score(p, x.tensor()) == doctest::Approx(ref).epsilon(1e-5));
  }
}

TEST_CASE("batch independence") {
  const VerifierParams p = init_params(4);
  std::vector<Image> batch;
  for (int i = 0; i < 6; ++i) batch.push_back(testing::random_image({3, 16, 16}, 50 + i));
  const auto s = score(p, batch);
  std::vector<Image> rev(batch.rbegin(), batch.rend());
  const auto sr = score(p, rev);
  for (std::size_t i = 0; i < s.size(); ++i) {
    CHECK(sr[s.size() - 1 - i] == s[i]);
    CHECK(score(p, batch[i].tensor()) == s[i]);
  }
  CHECK(score(p, batch) == s);
}

TEST_CASE("input validation") {
  const VerifierParams p = init_params(1);
  const std::vector<Tensor3> gray{Tensor3(Shape{1, 16, 16})};
  CHECK_THROWS_AS(score(p, gray), DimensionError);
  const std::vector<Tensor3> tiny{Tensor3(Shape{3, 4, 16})};
  CHECK_THROWS_AS(score(p, tiny), DimensionError);
  VerifierParams bad = p;
  bad.conv2_b.pop_back();
  CHECK_THROWS_AS(bad.validate(), DimensionError);
  bad = p;
  bad.dense_w[3] = std::nanf("");
  CHECK_THROWS_AS(bad.validate(), NumericError);
}

TEST_CASE("backward: zero upstream, shapes, stale trace") {
  const VerifierParams p = init_params(5);
  const std::vector<Image> batch{testing::random_image({3, 16, 16}, 1), testing::random_image({3, 16, 16}, 2)};
  const ForwardResult f = forward(p, batch);
  const std::vector<double> zero(2, 0.0);
  const BackwardResult b = backward(p, f.trace, zero);
  for (auto block : b.grad_params.blocks())
    for (float v : block) CHECK(v == 0.0f);
  REQUIRE(b.grad_input.size() == 2);
  CHECK(b.grad_input[0].shape() == batch[0].shape());
  for (float v : b.grad_input[1].data()) CHECK(v == 0.0f);

  VerifierParams q = p;
  q.conv1_w[0] += 0.1f;
  CHECK_THROWS_AS(backward(q, f.trace, zero), StateError);
  const std::vector<double> wrong(3, 0.0);
  CHECK_THROWS_AS(backward(p, f.trace, wrong), DimensionError);
}

TEST_CASE("verifier gradients match finite differences on 3x16x16 inputs") {
  gradcheck::VerifierSetup setup = gradcheck::verifier_setup(11);
  CHECK(setup.probe.loss() == doctest::Approx(setup.bce.loss).epsilon(1e-5));

  SUBCASE("parameters") {
    const gradcheck::Stats st = gradcheck::verifier_params(setup, 99);
    MESSAGE("parameter coordinates checked: " << st.checked << ", skipped at ReLU kinks: " << st.skipped
                                              << ", worst relative error: " << st.worst);
    CHECK(st.checked >= 200);
    CHECK(st.worst <= 1e-3);
  }

  SUBCASE("input pixels") {
    const gradcheck::Stats st = gradcheck::verifier_input(setup, 98);
    MESSAGE("input coordinates checked: " << st.checked << ", skipped: " << st.skipped << ", worst: " << st.worst);
    CHECK(st.checked >= 200);
    CHECK(st.worst <= 1e-3);
  }
}

TEST_CASE("bce_loss examples") {
  const std::vector<double> half{0.5, 0.5};
  const std::vector<int> y{0, 1};
  CHECK(bce_loss(half, y).loss == doctest::Approx(std::log(2.0)));

  const std::vector<double> exact{0.0, 1.0};
  const BceResult perfect = bce_loss(exact, y);
  CHECK(perfect.loss == doctest::Approx(-std::log(1.0 - 1e-7)).epsilon(1e-6));
  CHECK(perfect.loss < 1e-6);

  const std::vector<double> s{0.8, 0.3};
  const std::vector<int> yy{1, 0};
  const BceResult r = bce_loss(s, yy);
  CHECK(r.loss == doctest::Approx((-std::log(0.8) - std::log(0.7)) / 2.0));
  CHECK(-std::log(0.8) == doctest::Approx(0.2231).epsilon(1e-4));
  CHECK(r.dloss_dscore[0] == doctest::Approx(-1.0 / 0.8 / 2.0));
  CHECK(r.dloss_dscore[1] == doctest::Approx(1.0 / 0.7 / 2.0));

  const std::vector<int> short_labels{1};
  CHECK_THROWS_AS(bce_loss(s, short_labels), DimensionError);
  const std::vector<int> bad{1, 3};
  CHECK_THROWS(bce_loss(s, bad));
}

TEST_CASE("fingerprint and equality") {
  VerifierParams a = init_params(1);
  const VerifierParams b = a;
  CHECK(a.fingerprint() == b.fingerprint());
  a.dense_b[0] = 1e-30f;
  CHECK(a.fingerprint() != b.fingerprint());
}
