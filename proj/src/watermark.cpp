#include "raw/watermark.hpp"

#include <cmath>

#include <fmt/format.h>

#include "raw/error.hpp"
#include "raw/rng.hpp"
#include "raw/spectral.hpp"

namespace raw {

void WatermarkPair::validate() const {
  if (u.shape() != v.shape()) {
    throw DimensionError("watermark u and v shapes differ: " + u.shape().str() + " vs " +
                         v.shape().str());
  }
  if (!std::isfinite(c1) || !std::isfinite(c2) || c1 < 0.0 || c2 < 0.0) {
    throw ConfigError(fmt::format("watermark visibilities must be finite and >= 0 (c1 = {}, c2 = {})", c1, c2));
  }
  for (float x : u.data())
    if (!std::isfinite(x)) throw NumericError("watermark u has a non-finite entry");
  for (float x : v.data())
    if (!std::isfinite(x)) throw NumericError("watermark v has a non-finite entry");
}

WatermarkPair init_watermark(Shape shape, double c1, double c2, std::uint64_t seed) {
  WatermarkPair wm{Tensor3(shape), Tensor3(shape), c1, c2};
  Rng rng(derive_seed(seed, stream::kWatermarkInit));
  for (float& x : wm.v.data()) x = static_cast<float>(rng.uniform());
  for (float& x : wm.u.data()) x = static_cast<float>(rng.uniform());
  wm.validate();
  return wm;
}

namespace {

void check_shape(const Shape& x, const WatermarkPair& wm) {
  if (x != wm.shape()) {
    throw DimensionError("image shape " + x.str() + " does not match watermark shape " +
                         wm.shape().str());
  }
}

// Pre-clip embedded values: ifft2(fft2(x) + c1 v) + c2 u.
Tensor3 embed_unclipped(const Image& x, const WatermarkPair& wm) {
  Spectrum spec = serial::fft2(x.tensor());
  auto v = wm.v.data();
  for (std::size_t i = 0; i < v.size(); ++i) spec.re[i] += wm.c1 * v[i];
  Tensor3 out = serial::ifft2(spec);
  auto dst = out.data();
  auto u = wm.u.data();
  const float c2 = static_cast<float>(wm.c2);
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += c2 * u[i];
  return out;
}

}  // namespace

Image embed(const Image& x, const WatermarkPair& wm) {
  check_shape(x.shape(), wm);
  return clip01(embed_unclipped(x, wm));
}

namespace serial {

std::vector<Image> embed_batch(std::span<const Image> xs, const WatermarkPair& wm) {
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].shape() != wm.shape()) {
      throw DimensionError(fmt::format("embed_batch: image {} has shape {}, watermark is {}", i,
                                       xs[i].shape().str(), wm.shape().str()));
    }
  }
  std::vector<Image> out;
  out.reserve(xs.size());
  for (const Image& x : xs) out.push_back(clip01(embed_unclipped(x, wm)));
  return out;
}

}  // namespace serial

std::vector<Image> embed_batch(std::span<const Image> xs, const WatermarkPair& wm) {
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].shape() != wm.shape()) {
      throw DimensionError(fmt::format("embed_batch: image {} has shape {}, watermark is {}", i,
                                       xs[i].shape().str(), wm.shape().str()));
    }
  }
  std::vector<Image> out(xs.size());
  const auto n = static_cast<std::ptrdiff_t>(xs.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = clip01(embed_unclipped(xs[i], wm));
  return out;
}

WatermarkGradient embed_gradient(const Image& x, const WatermarkPair& wm, const Tensor3& upstream) {
  check_shape(x.shape(), wm);
  if (upstream.shape() != x.shape()) {
    throw DimensionError("embed_gradient: upstream shape " + upstream.shape().str() +
                         " does not match image " + x.shape().str());
  }
  const Tensor3 pre = embed_unclipped(x, wm);
  Tensor3 masked(x.shape());
  auto m = masked.data();
  auto g = upstream.data();
  auto p = pre.data();
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = (p[i] >= 0.0f && p[i] <= 1.0f) ? g[i] : 0.0f;

  WatermarkGradient grad{fft2_real(masked), masked};
  const float c1 = static_cast<float>(wm.c1);
  const float c2 = static_cast<float>(wm.c2);
  for (float& val : grad.v.data()) val *= c1;
  for (float& val : grad.u.data()) val *= c2;
  return grad;
}

WatermarkGradient embed_gradient_sum(std::span<const Image> xs, const WatermarkPair& wm,
                                     std::span<const Tensor3> upstream) {
  if (xs.size() != upstream.size()) {
    throw DimensionError(fmt::format("embed_gradient_sum: {} images vs {} upstream arrays", xs.size(),
                                     upstream.size()));
  }
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].shape() != wm.shape() || upstream[i].shape() != wm.shape()) {
      throw DimensionError(fmt::format("embed_gradient_sum: entry {} does not match watermark shape {}", i,
                                       wm.shape().str()));
    }
  }
  const auto n = static_cast<std::ptrdiff_t>(xs.size());
  std::vector<Tensor3> masked(xs.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const Tensor3 pre = embed_unclipped(xs[i], wm);
    masked[i] = upstream[i];
    auto m = masked[i].data();
    auto p = pre.data();
    for (std::size_t j = 0; j < m.size(); ++j)
      if (!(p[j] >= 0.0f && p[j] <= 1.0f)) m[j] = 0.0f;
  }
  Tensor3 total(wm.shape());
  auto t = total.data();
  for (const auto& m : masked) {
    auto d = m.data();
    for (std::size_t j = 0; j < t.size(); ++j) t[j] += d[j];
  }
  WatermarkGradient grad{fft2_real(total), total};
  const float c1 = static_cast<float>(wm.c1);
  const float c2 = static_cast<float>(wm.c2);
  for (float& val : grad.v.data()) val *= c1;
  for (float& val : grad.u.data()) val *= c2;
  return grad;
}

}  // namespace raw
