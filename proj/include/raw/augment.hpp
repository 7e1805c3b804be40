#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "raw/image.hpp"
#include "raw/rng.hpp"

namespace raw {

enum class AugmentKind {
  kIdentity,
  kRotate90,
  kCropResize,
  kGaussianBlur,
  kGaussianNoise,
  kJitter,
  kJpegApprox,
};

std::string_view kind_name(AugmentKind kind);
// Throws ConfigError for an unknown name.
AugmentKind parse_kind(std::string_view name);

// One image modification. Only the fields relevant to `kind` are used or
// serialized.
struct AugmentationSpec {
  AugmentKind kind = AugmentKind::kIdentity;
  double crop_fraction = 0.7;  // per side
  int blur_taps_y = 7;
  int blur_taps_x = 9;
  double blur_sigma = 4.0;
  double noise_sigma = 0.05;
  double brightness = 0.6;  // factor drawn from [1 - b, 1 + b]
  int jpeg_quality = 50;

  static AugmentationSpec of(AugmentKind kind) { return AugmentationSpec{kind}; }

  void validate() const;
  // "kind key=value ...", e.g. "gaussian_blur taps_y=7 taps_x=9 sigma=4".
  std::string to_string() const;
  static AugmentationSpec parse(std::string_view text);

  bool operator==(const AugmentationSpec&) const = default;
};

// rotate90, crop_resize, gaussian_blur, gaussian_noise, jitter, jpeg_approx
// with their default parameters.
std::vector<AugmentationSpec> default_augmentation_pool();

// Realized randomness and clip mask of one application, needed for the
// vector-Jacobian product.
struct AugmentTrace {
  Shape in_shape{};
  double factor = 1.0;
  int off_y = 0;
  int off_x = 0;
  std::vector<std::uint8_t> inside;  // 1 where the pre-clip value was in [0, 1]
};

Image apply(const AugmentationSpec& spec, const Image& img, Rng& rng, AugmentTrace* trace = nullptr);

// Gradient with respect to the input given the gradient with respect to the
// output. jpeg_approx has zero derivative almost everywhere and returns zeros.
Tensor3 apply_vjp(const AugmentationSpec& spec, const AugmentTrace& trace, const Tensor3& upstream);

// Applies one spec to every image with per-image streams derived from
// `seed`, so results do not depend on thread count.
std::vector<Image> apply_batch(const AugmentationSpec& spec, std::span<const Image> images,
                               std::uint64_t seed, std::vector<AugmentTrace>* traces = nullptr);

// Two independent uniform draws, with replacement.
std::pair<AugmentationSpec, AugmentationSpec> sample_two_views(std::span<const AugmentationSpec> pool,
                                                               Rng& rng);

// Separable normalized Gaussian taps.
std::vector<double> gaussian_taps(int taps, double sigma);

// Standard Annex-K tables scaled for `quality` (1..100), entries in [1, 255].
std::array<int, 64> jpeg_quant_table(bool chroma, int quality);

namespace serial {
std::vector<Image> apply_batch(const AugmentationSpec& spec, std::span<const Image> images,
                               std::uint64_t seed, std::vector<AugmentTrace>* traces = nullptr);
}  // namespace serial

}  // namespace raw
