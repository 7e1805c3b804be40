#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "raw/image.hpp"
#include "raw/verifier.hpp"
#include "raw/watermark.hpp"

namespace raw {

// Standard normal quantile (Wichura's AS 241, ~1e-16 relative accuracy).
// p must lie in (0, 1).
double normal_quantile(double p);
double normal_cdf(double x);

struct SmoothingConfig {
  double sigma = 0.05;
  int n_mc = 256;
  double clamp_eps = 1e-6;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const SmoothingConfig&) const = default;
};

// Direction of the gamma / sigma shift applied to the calibrated quantile.
// kConservative subtracts it, which is the direction the certified bound
// needs under the ">= tau means watermarked" rule. kLiteral adds it and is
// kept only for comparison runs.
enum class OffsetConvention { kConservative, kLiteral };

struct SmoothedEstimate {
  double mean = 0.0;   // Monte-Carlo mean of the verifier score, unclamped
  double score = 0.0;  // normal_quantile(clamp(mean, eps, 1 - eps))
};

// Phi^-1 of the Monte-Carlo average of V(x + Z), Z ~ N(0, sigma^2 I),
// x + Z unclipped. Noise is drawn in fixed blocks from streams derived from
// `seed`; the result does not depend on the thread count.
SmoothedEstimate smooth_estimate(const VerifierParams& params, const Tensor3& x, const SmoothingConfig& cfg,
                                 std::uint64_t seed);
double smooth_score(const VerifierParams& params, const Tensor3& x, const SmoothingConfig& cfg,
                    std::uint64_t seed);
inline double smooth_score(const VerifierParams& params, const Image& x, const SmoothingConfig& cfg,
                           std::uint64_t seed) {
  return smooth_score(params, x.tensor(), cfg, seed);
}

// Smoothed scores for many images; image i uses stream derive_seed(seed, i).
std::vector<double> smooth_scores(const VerifierParams& params, std::span<const Image> images,
                                  const SmoothingConfig& cfg, std::uint64_t seed);

struct CalibrationResult {
  double tau = 0.0;           // decision threshold on the smoothed-score axis
  double tau_quantile = 0.0;  // k-th smallest calibration score, before the offset
  double alpha = 0.0;
  double delta = 0.0;
  double gamma = 0.0;
  double sigma = 0.0;
  int n_mc = 0;
  std::size_t n = 0;
  std::size_t k = 0;
  double correction = 0.0;  // sqrt(ln(2 / delta) / (2 n))
  OffsetConvention convention = OffsetConvention::kConservative;
  std::vector<double> sorted_scores;

  // Structured text: one "key = value" per scalar, then "scores = <n>"
  // followed by one score per line. Doubles are written round-trip exact.
  std::string serialize() const;
  static CalibrationResult parse(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static CalibrationResult load(const std::filesystem::path& path);

  bool operator==(const CalibrationResult&) const = default;
};

double dkw_correction(std::size_t n, double delta);

// Smallest alpha that exceeds the correction and leaves k >= 1.
double min_feasible_alpha(std::size_t n, double delta);

// Throws InfeasibleAlphaError unless alpha > correction and k >= 1; also
// checks alpha, delta in (0, 1), gamma >= 0, n >= 2.
void check_calibration_request(std::size_t n, double alpha, double delta, double gamma);

// Threshold from already computed smoothed scores of embedded images.
CalibrationResult calibrate_from_scores(std::vector<double> scores, double alpha, double delta, double gamma,
                                        const SmoothingConfig& cfg,
                                        OffsetConvention convention = OffsetConvention::kConservative);

// Embeds every calibration image, smooths its score, and picks the
// conservative order statistic k = floor((alpha - correction) n).
CalibrationResult calibrate(const VerifierParams& params, const WatermarkPair& wm,
                            std::span<const Image> calib_set, double alpha, double delta, double gamma,
                            const SmoothingConfig& cfg,
                            OffsetConvention convention = OffsetConvention::kConservative);

// Same scores, different alpha.
CalibrationResult recalibrate(const CalibrationResult& cal, double alpha);

struct Decision {
  bool watermarked = false;
  double score = 0.0;
  double tau = 0.0;
};

// Watermarked iff the smoothed score reaches tau. Throws ConfigError when
// cfg.sigma differs from the calibration's sigma.
Decision decide(const VerifierParams& params, const CalibrationResult& cal, const Tensor3& x,
                const SmoothingConfig& cfg, std::uint64_t seed);
Decision decide_score(const CalibrationResult& cal, double smoothed_score);

struct PgdConfig {
  double radius = 0.001;
  int steps = 10;
  double step_size = 0.0;  // 0 selects 2.5 * radius / steps
};

// Watermark-removal attack: l2-projected gradient descent on the verifier
// logit. The result is in [0, 1] and within `radius` of x.
Image pgd_l2_attack(const VerifierParams& params, const Image& x, const PgdConfig& cfg);
std::vector<Image> pgd_l2_attack_batch(const VerifierParams& params, std::span<const Image> xs,
                                       const PgdConfig& cfg);

namespace serial {
SmoothedEstimate smooth_estimate(const VerifierParams& params, const Tensor3& x, const SmoothingConfig& cfg,
                                 std::uint64_t seed);
}  // namespace serial

}  // namespace raw
