#include "raw/image.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "raw/error.hpp"

namespace raw {

std::string Shape::str() const { return fmt::format("{}x{}x{}", channels, height, width); }

Tensor3::Tensor3(Shape shape, float fill) : shape_(shape), data_(shape.size(), fill) {
  if (shape.channels < 1 || shape.height < 1 || shape.width < 1) {
    throw DimensionError("tensor dimensions must be positive, got " + shape.str());
  }
}

Tensor3::Tensor3(Shape shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
  if (shape.channels < 1 || shape.height < 1 || shape.width < 1) {
    throw DimensionError("tensor dimensions must be positive, got " + shape.str());
  }
  if (data_.size() != shape.size()) {
    throw DimensionError(fmt::format("data length {} does not match shape {}", data_.size(),
                                     shape.str()));
  }
}

namespace {

void check_unit_range(std::span<const float> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float v = values[i];
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
      throw NumericError(fmt::format("image value {} at index {} is outside [0, 1]", v, i));
    }
  }
}

}  // namespace

Image::Image(Tensor3 t) : t_(std::move(t)) { check_unit_range(t_.data()); }

Image::Image(Shape shape, std::vector<float> data) : Image(Tensor3(shape, std::move(data))) {}

Image::Image(Shape shape, float value) : Image(Tensor3(shape, value)) {}

void LabeledBatch::validate() const {
  if (images.size() != labels.size()) {
    throw DimensionError(fmt::format("batch has {} images but {} labels", images.size(),
                                     labels.size()));
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw ConfigError(fmt::format("label {} is not 0 or 1", y));
  }
}

Image clip01(Tensor3 t) {
  for (float& v : t.data()) {
    if (std::isnan(v)) throw NumericError("clip01: NaN input");
    v = std::min(1.0f, std::max(0.0f, v));
  }
  return Image(std::move(t), Image::Unchecked{});
}

Image clip01(Shape shape, std::span<const float> values) {
  return clip01(Tensor3(shape, std::vector<float>(values.begin(), values.end())));
}

double psnr(const Image& a, const Image& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("psnr: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  double sse = 0.0;
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    const double d = static_cast<double>(da[i]) - db[i];
    sse += d * d;
  }
  const double mse = sse / static_cast<double>(da.size());
  if (mse < 1e-10) return kPsnrCap;
  return 10.0 * std::log10(1.0 / mse);
}

double l2_distance(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw DimensionError("l2_distance: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

Tensor3 resize_bilinear(const Tensor3& src, int height, int width) {
  if (height < 1 || width < 1) throw DimensionError("resize target must be positive");
  const Shape in = src.shape();
  Tensor3 out({in.channels, height, width});
  const double sy = static_cast<double>(in.height) / height;
  const double sx = static_cast<double>(in.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(in.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, in.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(in.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, in.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < in.channels; ++c) {
        const double top = (1 - wx) * src.at(c, y0, x0) + wx * src.at(c, y0, x1);
        const double bot = (1 - wx) * src.at(c, y1, x0) + wx * src.at(c, y1, x1);
        out.at(c, y, x) = static_cast<float>((1 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

Image resize_bilinear(const Image& src, int height, int width) {
  return clip01(resize_bilinear(src.tensor(), height, width));
}

}  // namespace raw
