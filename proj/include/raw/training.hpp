#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "raw/augment.hpp"
#include "raw/image.hpp"
#include "raw/verifier.hpp"
#include "raw/watermark.hpp"

namespace raw {

// Hyperparameters of the joint training loop. `batch_size` counts the
// combined batch: batch_size / 2 corpus images, each present once clean
// (label 0) and once watermarked (label 1).
struct RunConfig {
  int epochs = 30;
  int batch_size = 16;
  double verifier_lr = 0.01;
  double momentum = 0.9;
  double watermark_lr = 2e-3;
  double c1 = 1.0;
  double c2 = 0.01;
  std::vector<AugmentationSpec> augmentations = default_augmentation_pool();
  int views = 2;
  std::uint64_t seed = 0;
  int channels = 3;
  int height = 64;
  int width = 64;
  std::string corpus_dir;   // empty: synthetic corpus
  std::string heldout_dir;  // empty: synthetic held-out set

  Shape shape() const { return {channels, height, width}; }
  // T >= 0, learning rates > 0, batch even and >= 2, c1 > 0, c2 >= 0,
  // non-empty pool, views == 2.
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

struct EpochStats {
  int epoch = 0;
  double l0 = 0.0;
  double laug = 0.0;
  double lraw = 0.0;
  double train_accuracy = 0.0;
  double heldout_accuracy = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  // epoch,L0,LAug,Lraw,train_acc,heldout_acc,seconds
  std::string to_csv(bool include_timing = true) const;
};

struct LossTerms {
  double l0 = 0.0;
  double laug = 0.0;
  double lraw() const { return l0 + laug; }
};

struct GradientRequest {
  bool params = true;
  bool watermark = true;
};

struct LossEvaluation {
  LossTerms loss;
  double accuracy = 0.0;            // on the un-augmented combined batch
  VerifierParams grad_params;       // empty blocks unless requested
  WatermarkGradient grad_watermark;  // empty tensors unless requested
};

using ViewPair = std::pair<AugmentationSpec, AugmentationSpec>;

// L_raw = BCE(D) + BCE(M_a(D)) + BCE(M_b(D)) for D = batch plus its
// embedded copies. Augmentation randomness flows from `view_seed`.
LossEvaluation compute_loss_raw(const VerifierParams& params, const WatermarkPair& wm,
                                std::span<const Image> batch, const ViewPair& views,
                                std::uint64_t view_seed, GradientRequest request = {});

// velocity = momentum * velocity + grad; params -= lr * velocity.
void sgd_step(VerifierParams& params, const VerifierParams& grad, double lr, double momentum,
              VerifierParams& velocity);

// u -= lr * sign(grad_u), v -= lr * sign(grad_v), sign(0) = 0.
void signsgd_step(WatermarkPair& wm, const WatermarkGradient& grad, double lr);

struct StepEvent {
  enum class Kind { kWatermark, kVerifier };
  Kind kind;
  int epoch;
  int iteration;
};

struct TrainOptions {
  std::span<const Image> heldout;
  // Applied to both classes of the held-out set before scoring.
  AugmentationSpec heldout_manipulation = AugmentationSpec::of(AugmentKind::kIdentity);
  // Fixed-watermark ablation: signsgd_step is never called.
  bool freeze_watermark = false;
  std::function<void(const StepEvent&)> step_hook;
};

struct TrainResult {
  VerifierParams params;
  WatermarkPair watermark;
  TrainReport report;
};

// Alternating optimization: per iteration the watermark takes one SignSGD
// step with the verifier held fixed, then the verifier takes one SGD step
// against the updated watermark. Fully determined by config.seed.
TrainResult train_joint(const RunConfig& config, std::span<const Image> corpus,
                        const TrainOptions& options = {});

// Fraction correct at threshold 0.5 when the manipulation is applied to
// both the clean and the embedded copy of every image.
double heldout_accuracy(const VerifierParams& params, const WatermarkPair& wm,
                        std::span<const Image> images, const AugmentationSpec& manipulation,
                        std::uint64_t seed);

}  // namespace raw
