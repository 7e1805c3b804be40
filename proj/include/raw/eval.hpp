#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "raw/augment.hpp"
#include "raw/certify.hpp"
#include "raw/image.hpp"
#include "raw/training.hpp"
#include "raw/verifier.hpp"
#include "raw/watermark.hpp"

namespace raw {

// Normalized Mann-Whitney U with ties counted half. Throws ConfigError on
// an empty list.
double auroc(std::span<const double> positives, std::span<const double> negatives);

// One cell of the robustness table. Out-of-scope rows keep the table shape
// and carry no value.
struct ManipulationRow {
  std::string name;
  bool in_scope = true;
  double auroc = 0.0;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

struct FprRow {
  double alpha = 0.0;
  double tau = 0.0;
  double fpr_clean = 0.0;
  double fpr_attacked = 0.0;
  std::size_t n = 0;

  bool operator==(const FprRow&) const = default;
};

struct EvalReport {
  double clean_auroc = 0.0;
  std::vector<ManipulationRow> rows;  // identity first, then each manipulation
  std::vector<ManipulationRow> out_of_scope;
  double mean_psnr = 0.0;
  std::size_t psnr_n = 0;
  double embed_seconds = 0.0;
  std::size_t throughput_n = 0;
  double images_per_second = 0.0;
  std::vector<FprRow> fpr;

  // Mean AUROC over in-scope rows other than identity and pgd_l2.
  double mean_manipulation_auroc() const;
  std::string to_csv(bool include_timing = true) const;
  std::string to_text(bool include_timing = true) const;
};

// A robustness-suite manipulation: an augmentation or the bounded-l2 attack.
struct Manipulation {
  std::optional<AugmentationSpec> augmentation;  // empty: pgd_l2
  PgdConfig pgd;

  static Manipulation of(const AugmentationSpec& spec) { return {spec, {}}; }
  static Manipulation pgd_l2(const PgdConfig& cfg) { return {std::nullopt, cfg}; }
  std::string name() const;
};

std::vector<Manipulation> default_manipulations(const PgdConfig& pgd = {});

struct EvalConfig {
  std::uint64_t seed = 0;
  std::size_t throughput_images = 500;  // 0 skips the timing run
};

// Scores V on M(embed(x)) against M(x) for every manipulation; the identity
// row is always evaluated first and equals clean_auroc.
EvalReport run_robustness_suite(const VerifierParams& params, const WatermarkPair& wm,
                                std::span<const Image> test_set, std::span<const Manipulation> manipulations,
                                const EvalConfig& cfg);

// Wall-clock seconds for one single-threaded embed_batch over `images`.
double time_embed_batch(std::span<const Image> images, const WatermarkPair& wm);

// Smoothed scores of fresh watermarked images, clean and after pgd_l2_attack
// at radius gamma.
struct FreshScores {
  std::vector<double> clean;
  std::vector<double> attacked;
};

FreshScores fresh_watermarked_scores(const VerifierParams& params, const WatermarkPair& wm,
                                     std::span<const Image> originals, const SmoothingConfig& smoothing,
                                     const PgdConfig& pgd, std::uint64_t seed);

// Empirical FPR (watermarked declared unwatermarked) at each alpha after
// recalibrating tau from `cal`.
std::vector<FprRow> fpr_table(const CalibrationResult& cal, const FreshScores& scores,
                              std::span<const double> alphas);

std::vector<FprRow> run_fpr_suite(const VerifierParams& params, const WatermarkPair& wm,
                                  const CalibrationResult& cal, std::span<const Image> fresh_originals,
                                  std::span<const double> alphas, const SmoothingConfig& smoothing,
                                  const PgdConfig& pgd, std::uint64_t seed);

struct HeldoutMetrics {
  double accuracy = 0.0;
  double loss = 0.0;  // mean BCE over both classes
  std::size_t n = 0;
};

HeldoutMetrics heldout_metrics(const VerifierParams& params, const WatermarkPair& wm,
                               std::span<const Image> images, const AugmentationSpec& manipulation,
                               std::uint64_t seed);

struct AblationArm {
  std::string name;
  TrainResult result;
  HeldoutMetrics clean;
  HeldoutMetrics noise;
  std::size_t signsgd_steps = 0;
};

struct AblationResult {
  AblationArm joint;
  AblationArm fixed;
  AblationArm no_spatial;

  // Final held-out clean accuracy, joint >= fixed.
  bool joint_not_worse() const;
  // Under Gaussian noise the c2 = 0 arm has lower accuracy, or equal
  // accuracy and higher loss.
  bool no_spatial_underperforms() const;
  std::string to_csv(bool include_timing = true) const;
};

// (a) joint vs fixed watermark, (b) full model vs c2 = 0, all sharing
// config.seed.
AblationResult run_ablations(const RunConfig& config, std::span<const Image> corpus,
                             std::span<const Image> heldout);

}  // namespace raw
