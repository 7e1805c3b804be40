#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "raw/image.hpp"

namespace raw {

// The learned dual-domain watermark: v lives in the frequency domain (added
// to the real part of the orthonormal spectrum), u in pixel space. Neither
// is constrained to [0, 1] once training starts.
struct WatermarkPair {
  Tensor3 v;
  Tensor3 u;
  double c1 = 1.0;   // frequency visibility
  double c2 = 0.01;  // spatial visibility

  const Shape& shape() const { return u.shape(); }
  // Throws on shape mismatch, non-finite entries, or negative / non-finite
  // visibilities. Zero visibility is accepted (ablations and identity tests).
  void validate() const;
  bool operator==(const WatermarkPair&) const = default;
};

// u and v IID uniform on [0, 1].
WatermarkPair init_watermark(Shape shape, double c1, double c2, std::uint64_t seed);

// clip01(ifft2(fft2(x) + c1 v) + c2 u).
Image embed(const Image& x, const WatermarkPair& wm);

// Maps embed over the batch; images run in parallel and each output is
// bit-identical to embed() on that image.
std::vector<Image> embed_batch(std::span<const Image> xs, const WatermarkPair& wm);

struct WatermarkGradient {
  Tensor3 v;
  Tensor3 u;
};

// Vector-Jacobian product of embed at (x, wm) with respect to (v, u).
// Positions whose pre-clip value left [0, 1] contribute nothing.
WatermarkGradient embed_gradient(const Image& x, const WatermarkPair& wm, const Tensor3& upstream);

// Sum of embed_gradient over the pairs (xs[i], upstream[i]), using one
// transform for the whole batch (the map is linear in the masked upstream).
WatermarkGradient embed_gradient_sum(std::span<const Image> xs, const WatermarkPair& wm,
                                     std::span<const Tensor3> upstream);

namespace serial {
std::vector<Image> embed_batch(std::span<const Image> xs, const WatermarkPair& wm);
}  // namespace serial

}  // namespace raw
