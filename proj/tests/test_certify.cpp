#include <doctest.h>

#include <cmath>
#include <fstream>

#include "oracle.hpp"
#include "raw/certify.hpp"
#include "raw/error.hpp"
#include "raw/rng.hpp"
#include "support.hpp"

using namespace raw;

namespace {

VerifierParams constant_verifier(double p) {
  VerifierParams v = VerifierParams::zeros();
  v.dense_b[0] = static_cast<float>(std::log(p / (1.0 - p)));
  return v;
}

SmoothingConfig smoothing(int n_mc, double sigma = 0.05) {
  SmoothingConfig c;
  c.n_mc = n_mc;
  c.sigma = sigma;
  return c;
}

double sample_variance(const std::vector<double>& xs) {
  double m = 0.0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  double v = 0.0;
  for (double x : xs) v += (x - m) * (x - m);
  return v / static_cast<double>(xs.size() - 1);
}

}  // namespace

TEST_CASE("normal_quantile reference values") {
  const std::pair<double, double> table[] = {
      {1e-20, -9.2623400897981532129}, {1e-10, -6.3613409024040562047}, {1e-6, -4.7534243088228989482},
      {0.001, -3.0902323061678135415}, {0.02425, -1.9729610513118848503}, {0.1, -1.281551565544600467},
      {0.3, -0.52440051270804078404}, {0.5, 0.0}, {0.7, 0.52440051270804078404},
      {0.975, 1.9599639845400542355}, {0.99999999, 5.6120012441747887315},
  };
  for (const auto& [p, z] : table) {
    CAPTURE(p);
    CHECK(std::abs(normal_quantile(p) - z) <= 1e-8 * std::max(1.0, std::abs(z)));
  }
  for (double p : {0.0, 1.0, -0.1, 1.5, std::nan("")}) CHECK_THROWS_AS(normal_quantile(p), NumericError);
}

TEST_CASE("normal_quantile inverts normal_cdf") {
  for (double x = -7.0; x <= 2.0; x += 0.25) CHECK(normal_quantile(normal_cdf(x)) == doctest::Approx(x).epsilon(1e-9));
  for (double p : {1e-12, 1e-5, 0.01, 0.2, 0.45}) CHECK(normal_quantile(1.0 - p) == doctest::Approx(-normal_quantile(p)).epsilon(1e-6));
  CHECK(normal_cdf(0.0) == 0.5);
}

TEST_CASE("SmoothingConfig validation") {
  CHECK_NOTHROW(SmoothingConfig{}.validate());
  CHECK_THROWS_AS(smoothing(0).validate(), ConfigError);
  CHECK_THROWS_AS(smoothing(16, 0.0).validate(), ConfigError);
  SmoothingConfig c;
  c.clamp_eps = 0.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("smoothed score of a constant verifier") {
  const Tensor3 x = testing::random_tensor({3, 16, 16}, 1, 0.0f, 1.0f);
  CHECK(std::abs(smooth_score(constant_verifier(0.5), x, smoothing(32), 1)) <= 1e-6);
  CHECK(smooth_score(constant_verifier(0.7), x, smoothing(32), 1) == doctest::Approx(0.5244).epsilon(1e-4));
  const SmoothedEstimate high = smooth_estimate(constant_verifier(1.0 - 1e-9), x, smoothing(32), 1);
  CHECK(high.mean > 1.0 - 1e-6);
  CHECK(high.score == doctest::Approx(4.7534).epsilon(1e-4));
  const SmoothedEstimate low = smooth_estimate(constant_verifier(1e-9), x, smoothing(32), 1);
  CHECK(low.score == doctest::Approx(-4.7534).epsilon(1e-4));
}

TEST_CASE("smoothing matches a direct Monte-Carlo oracle") {
  const Shape s{3, 16, 16};
  VerifierParams params = init_params(2);
  for (auto& w : params.dense_w) w *= 8.0f;
  const Tensor3 x = testing::random_tensor(s, 3, 0.0f, 1.0f);
  const SmoothingConfig cfg = smoothing(40, 0.2);
  const SmoothedEstimate e = smooth_estimate(params, x, cfg, 11);

  // Same noise stream: sample j is drawn from derive_seed(seed, j).
  const oracle::Params p = oracle::to_double(params);
  double mean = 0.0;
  for (int j = 0; j < cfg.n_mc; ++j) {
    std::vector<float> z(s.size());
    fill_normal(z, derive_seed(11, static_cast<std::uint64_t>(j)), cfg.sigma);
    std::vector<double> xz(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) xz[i] = static_cast<float>(x.data()[i] + z[i]);
    mean += oracle::score(p, xz, 16, 16);
  }
  mean /= cfg.n_mc;
  CHECK(e.mean == doctest::Approx(mean).epsilon(1e-5));
  CHECK(e.score == doctest::Approx(normal_quantile(mean)).epsilon(1e-4));
}

TEST_CASE("smoothing is deterministic and thread-count independent") {
  const Tensor3 x = testing::random_tensor({3, 16, 16}, 4, 0.0f, 1.0f);
  const VerifierParams params = init_params(5);
  const SmoothingConfig cfg = smoothing(100);
  const SmoothedEstimate a = smooth_estimate(params, x, cfg, 9);
  const SmoothedEstimate b = serial::smooth_estimate(params, x, cfg, 9);
  CHECK(a.mean == b.mean);
  CHECK(a.score == b.score);
  CHECK(smooth_estimate(params, x, cfg, 9).mean == a.mean);
  CHECK(smooth_estimate(params, x, cfg, 10).mean != a.mean);

  std::vector<Image> images;
  for (int i = 0; i < 5; ++i) images.emplace_back(testing::random_image({3, 16, 16}, 20 + i));
  const auto scores = smooth_scores(params, images, cfg, 13);
  REQUIRE(scores.size() == images.size());
  for (std::size_t i = 0; i < images.size(); ++i)
    CHECK(scores[i] == serial::smooth_estimate(params, images[i].tensor(), cfg, derive_seed(13, i)).score);
}

TEST_CASE("Monte-Carlo error shrinks as 1/sqrt(n_mc)") {
  VerifierParams params = init_params(6);
  for (auto& w : params.dense_w) w *= 30.0f;
  const Tensor3 x = testing::random_tensor({3, 16, 16}, 7, 0.0f, 1.0f);
  std::vector<double> small, large;
  for (std::uint64_t s = 0; s < 60; ++s) {
    small.push_back(smooth_estimate(params, x, smoothing(16, 0.5), 100 + s).mean);
    large.push_back(smooth_estimate(params, x, smoothing(256, 0.5), 100 + s).mean);
  }
  const double ratio = sample_variance(small) / sample_variance(large);
  MESSAGE("variance ratio (expected 16): " << ratio);
  CHECK(sample_variance(small) > 0.0);
  CHECK((ratio > 8.0 && ratio < 32.0));
}

TEST_CASE("smoothed score is 1/sigma Lipschitz") {
  VerifierParams params = init_params(8);
  for (auto& w : params.dense_w) w *= 30.0f;
  const Shape s{3, 16, 16};
  const double sigma = 0.25;
  const int n_mc = 1024;
  Rng rng(3);
  int violations = 0;
  for (int t = 0; t < 10; ++t) {
    const Tensor3 x = testing::random_tensor(s, 50 + t, 0.0f, 1.0f);
    Tensor3 y = x;
    const Tensor3 d = testing::random_tensor(s, 80 + t);
    double dn = 0.0;
    for (float v : d.data()) dn += static_cast<double>(v) * v;
    const double r = rng.uniform(0.05, 0.5);
    for (std::size_t i = 0; i < s.size(); ++i) y.data()[i] += static_cast<float>(r * d.data()[i] / std::sqrt(dn));
    const SmoothedEstimate ex = smooth_estimate(params, x, smoothing(n_mc, sigma), 1);
    const SmoothedEstimate ey = smooth_estimate(params, y, smoothing(n_mc, sigma), 2);
    // 3-sigma binomial slack on each mean, pushed through the quantile.
    auto slack = [&](double m) {
      const double se = 3.0 * std::sqrt(std::max(m * (1 - m), 1e-12) / n_mc);
      return std::pair{normal_quantile(std::clamp(m - se, 1e-6, 1 - 1e-6)),
                       normal_quantile(std::clamp(m + se, 1e-6, 1 - 1e-6))};
    };
    const auto [xlo, xhi] = slack(ex.mean);
    const auto [ylo, yhi] = slack(ey.mean);
    const double min_gap = std::max({0.0, xlo - yhi, ylo - xhi});
    if (min_gap > r / sigma) ++violations;
  }
  CHECK(violations == 0);
}

TEST_CASE("DKW correction and feasibility") {
  CHECK(dkw_correction(2000, 0.05) == doctest::Approx(0.0303680730954).epsilon(1e-10));
  CHECK(dkw_correction(500, 0.05) == doctest::Approx(0.0607361461908).epsilon(1e-10));
  CHECK(min_feasible_alpha(500, 0.05) == doctest::Approx(0.0607361461908 + 1.0 / 500).epsilon(1e-10));
  CHECK_NOTHROW(check_calibration_request(2000, 0.05, 0.05, 0.001));
  try {
    check_calibration_request(500, 0.05, 0.05, 0.001);
    FAIL("expected InfeasibleAlphaError");
  } catch (const InfeasibleAlphaError& e) {
    CHECK(e.alpha() == 0.05);
    CHECK(e.correction() == doctest::Approx(0.0607361461908));
    CHECK(e.min_feasible_alpha() == doctest::Approx(0.0627361461908));
    CHECK(std::string(e.what()).find("0.0607") != std::string::npos);
  }
  CHECK_THROWS_AS(check_calibration_request(1000, 0.0, 0.05, 0.001), ConfigError);
  CHECK_THROWS_AS(check_calibration_request(1000, 0.1, 1.0, 0.001), ConfigError);
  CHECK_THROWS_AS(check_calibration_request(1000, 0.1, 0.05, -1.0), ConfigError);
  CHECK_THROWS_AS(check_calibration_request(1, 0.5, 0.05, 0.0), ConfigError);
}

TEST_CASE("calibrate_from_scores picks the conservative order statistic") {
  std::vector<double> scores(2000);
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = static_cast<double>((i * 7919) % 2000) / 100.0;
  const CalibrationResult c = calibrate_from_scores(scores, 0.05, 0.05, 0.001, smoothing(256));
  CHECK(c.k == 39);
  CHECK(c.tau_quantile == doctest::Approx(0.38));
  CHECK(c.tau == doctest::Approx(0.38 - 0.02));
  CHECK(std::is_sorted(c.sorted_scores.begin(), c.sorted_scores.end()));
  const CalibrationResult lit =
      calibrate_from_scores(scores, 0.05, 0.05, 0.001, smoothing(256), OffsetConvention::kLiteral);
  CHECK(lit.tau == doctest::Approx(0.38 + 0.02));

  double prev = -1e300;
  for (double a : {0.04, 0.05, 0.1, 0.2, 0.5}) {
    const CalibrationResult r = recalibrate(c, a);
    CHECK(r.tau >= prev);
    prev = r.tau;
  }
  scores[3] = std::nan("");
  CHECK_THROWS_AS(calibrate_from_scores(scores, 0.05, 0.05, 0.001, smoothing(256)), NumericError);
}

TEST_CASE("decision boundary") {
  CalibrationResult c;
  c.tau = 0.25;
  CHECK(decide_score(c, 0.25).watermarked);
  CHECK(!decide_score(c, std::nextafter(0.25, 0.0)).watermarked);
  CHECK(decide_score(c, 3.0).watermarked);

  c.sigma = 0.05;
  const Tensor3 x = testing::random_tensor({3, 16, 16}, 1, 0.0f, 1.0f);
  CHECK_THROWS_AS(decide(constant_verifier(0.7), c, x, smoothing(16, 0.1), 1), ConfigError);
  const Decision d = decide(constant_verifier(0.7), c, x, smoothing(16, 0.05), 1);
  CHECK(d.watermarked);
  CHECK(d.tau == 0.25);
}

TEST_CASE("calibrate end to end") {
  const Shape s{3, 16, 16};
  std::vector<Image> images;
  for (int i = 0; i < 60; ++i) images.emplace_back(testing::random_image(s, 200 + i));
  const WatermarkPair wm = init_watermark(s, 0.1, 0.01, 1);
  const CalibrationResult c = calibrate(init_params(1), wm, images, 0.3, 0.1, 0.001, smoothing(8));
  CHECK(c.n == 60);
  CHECK(c.k >= 1);
  CHECK(c.sorted_scores.size() == 60);
  CHECK_THROWS_AS(calibrate(init_params(1), wm, images, 0.05, 0.1, 0.001, smoothing(8)), InfeasibleAlphaError);
}

TEST_CASE("calibration file round trip and rejection") {
  std::vector<double> scores{0.1, -0.3, 1.0 / 3.0, 2.5, 1e-17, -4.75, 0.2, 0.9};
  const CalibrationResult c = calibrate_from_scores(scores, 0.9, 0.5, 0.001, smoothing(64));
  const std::string text = c.serialize();
  CHECK(CalibrationResult::parse(text) == c);
  CHECK(CalibrationResult::parse(text).serialize() == text);

  testing::TempDir dir;
  c.save(dir / "cal.txt");
  CHECK(CalibrationResult::load(dir / "cal.txt") == c);
  CHECK_THROWS_AS(CalibrationResult::load(dir / "missing.txt"), IoError);

  auto replace = [&](const std::string& from, const std::string& to) {
    std::string t = text;
    t.replace(t.find(from), from.size(), to);
    return t;
  };
  CHECK_THROWS_AS(CalibrationResult::parse(text + "bogus = 1\n"), FormatError);
  CHECK_THROWS_AS(CalibrationResult::parse(replace("scores = 8", "scores = 9")), FormatError);
  CHECK_THROWS_AS(CalibrationResult::parse(replace("tau = ", "tau = x")), FormatError);
  CHECK_THROWS_AS(CalibrationResult::parse("garbage"), FormatError);
}

TEST_CASE("PGD stays within the radius and the unit box") {
  const Shape s{3, 16, 16};
  VerifierParams params = init_params(3);
  for (auto& w : params.dense_w) w *= 8.0f;
  const Image x = testing::random_image(s, 4, 0.0f, 1.0f);
  for (double radius : {0.001, 0.1, 2.0}) {
    PgdConfig cfg;
    cfg.radius = radius;
    const Image a = pgd_l2_attack(params, x, cfg);
    CHECK(l2_distance(a.data(), x.data()) <= radius * (1 + 1e-6) + 1e-7);
    for (float v : a.data()) CHECK((v >= 0.0f && v <= 1.0f));
  }
  PgdConfig big;
  big.radius = 2.0;
  const Image a = pgd_l2_attack(params, x, big);
  const oracle::Params p = oracle::to_double(params);
  CHECK(oracle::logit(p, oracle::as_double(a.data()), 16, 16) < oracle::logit(p, oracle::as_double(x.data()), 16, 16));

  PgdConfig zero;
  zero.radius = 0.0;
  CHECK(pgd_l2_attack(params, x, zero) == x);

  const std::vector<Image> xs{x, testing::random_image(s, 5)};
  const auto batch = pgd_l2_attack_batch(params, xs, big);
  REQUIRE(batch.size() == 2);
  CHECK(batch[0] == a);
}
