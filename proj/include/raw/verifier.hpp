#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "raw/image.hpp"
#include "raw/kernels.hpp"

namespace raw {

// Fixed scorer: three 3x3 stride-2 conv+ReLU stages (3 -> 16 -> 32 -> 64),
// global average pooling, one dense unit, logistic output. Conv weights are
// stored [out][in][ky][kx].
struct VerifierParams {
  static constexpr std::array<int, 4> kChannels{3, 16, 32, 64};
  static constexpr int kBlocks = 8;

  std::vector<float> conv1_w, conv1_b;
  std::vector<float> conv2_w, conv2_b;
  std::vector<float> conv3_w, conv3_b;
  std::vector<float> dense_w, dense_b;

  // Correctly shaped, all zero.
  static VerifierParams zeros();

  // Parameter blocks in serialization order:
  // conv1.w, conv1.b, conv2.w, conv2.b, conv3.w, conv3.b, dense.w, dense.b.
  std::array<std::span<float>, kBlocks> blocks();
  std::array<std::span<const float>, kBlocks> blocks() const;

  std::size_t parameter_count() const;
  // Throws DimensionError / NumericError when shapes or values are off.
  void validate() const;
  // FNV-1a over the raw bytes; used to detect stale forward traces.
  std::uint64_t fingerprint() const;

  bool operator==(const VerifierParams&) const = default;
};

// Weights IID uniform on [-s, s], s = sqrt(6 / fan_in); biases zero.
VerifierParams init_params(std::uint64_t seed);

// Activations kept by forward() for the matching backward().
struct ForwardTrace {
  struct Sample {
    Shape shape;
    std::array<kernels::ConvGeometry, 3> geom;
    std::vector<float> col1, act1, col2, act2, col3, act3;
    std::vector<float> pooled;
    double logit = 0.0;
    double slope = 0.0;  // d score / d logit
  };
  std::vector<Sample> samples;
  std::uint64_t params_fingerprint = 0;
};

struct ForwardResult {
  std::vector<double> scores;  // each strictly inside (0, 1)
  ForwardTrace trace;
};

// Images must have 3 channels and H, W >= 8. Inputs are not required to
// lie in [0, 1] (smoothing feeds noisy copies).
ForwardResult forward(const VerifierParams& params, std::span<const Tensor3> batch);
ForwardResult forward(const VerifierParams& params, std::span<const Image> batch);

// Scores only; no trace is retained.
std::vector<double> score(const VerifierParams& params, std::span<const Tensor3> batch);
std::vector<double> score(const VerifierParams& params, std::span<const Image> batch);
double score(const VerifierParams& params, const Tensor3& x);

struct BackwardResult {
  VerifierParams grad_params;       // zero-sized blocks when not requested
  std::vector<Tensor3> grad_input;  // empty when not requested
};

struct BackwardOptions {
  bool params = true;
  bool input = true;
};

// Exact reverse-mode gradients of a scalar loss given dLoss/dScore per
// sample. ReLU subgradient at 0 is 0. Throws StateError when `params` no
// longer matches the parameters the trace was recorded with.
BackwardResult backward(const VerifierParams& params, const ForwardTrace& trace,
                        std::span<const double> dloss_dscore, BackwardOptions options = {});

struct BceResult {
  double loss = 0.0;
  std::vector<double> dloss_dscore;
};

// Mean-reduced binary cross-entropy, -(1/N) sum[y log s + (1-y) log(1-s)],
// with s clamped to [1e-7, 1 - 1e-7].
BceResult bce_loss(std::span<const double> scores, std::span<const int> labels);
inline constexpr double kBceClamp = 1e-7;

namespace serial {
ForwardResult forward(const VerifierParams& params, std::span<const Tensor3> batch);
std::vector<double> score(const VerifierParams& params, std::span<const Tensor3> batch);
BackwardResult backward(const VerifierParams& params, const ForwardTrace& trace,
                        std::span<const double> dloss_dscore, BackwardOptions options = {});
}  // namespace serial

}  // namespace raw
