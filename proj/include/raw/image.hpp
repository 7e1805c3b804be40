#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace raw {

// Channel-major, then row-major: index(c, y, x) = (c * height + y) * width + x.
struct Shape {
  int channels = 3;
  int height = 0;
  int width = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

// Unconstrained C x H x W float array: gradients, watermarks, and noisy
// inputs that may leave [0, 1].
class Tensor3 {
 public:
  Tensor3() = default;
  explicit Tensor3(Shape shape, float fill = 0.0f);
  Tensor3(Shape shape, std::vector<float> data);

  const Shape& shape() const { return shape_; }
  int channels() const { return shape_.channels; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  std::size_t size() const { return data_.size(); }

  float& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  float at(int c, int y, int x) const { return data_[index(c, y, x)]; }
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x;
  }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::span<float> channel(int c) { return data().subspan(c * shape_.plane(), shape_.plane()); }
  std::span<const float> channel(int c) const {
    return data().subspan(c * shape_.plane(), shape_.plane());
  }
  std::vector<float>& storage() { return data_; }

  bool operator==(const Tensor3&) const = default;

 private:
  Shape shape_{};
  std::vector<float> data_;
};

// A sample of the input space: every element finite and in [0, 1].
// Immutable once built; construct from checked data or through clip01.
class Image {
 public:
  Image() = default;
  // Throws NumericError if any value is non-finite or outside [0, 1].
  explicit Image(Tensor3 t);
  Image(Shape shape, std::vector<float> data);
  // Constant image.
  Image(Shape shape, float value);

  const Shape& shape() const { return t_.shape(); }
  int channels() const { return t_.channels(); }
  int height() const { return t_.height(); }
  int width() const { return t_.width(); }
  std::size_t size() const { return t_.size(); }
  float at(int c, int y, int x) const { return t_.at(c, y, x); }
  std::span<const float> data() const { return t_.data(); }
  const Tensor3& tensor() const { return t_; }

  bool operator==(const Image&) const = default;

 private:
  struct Unchecked {};
  Image(Tensor3 t, Unchecked) : t_(std::move(t)) {}
  friend Image clip01(Tensor3 t);

  Tensor3 t_;
};

struct LabeledBatch {
  std::vector<Image> images;
  std::vector<int> labels;  // 0 = unwatermarked, 1 = watermarked

  // Throws DimensionError on length mismatch, ConfigError on a bad label.
  void validate() const;
  std::size_t size() const { return images.size(); }
};

// Elementwise min(1, max(0, x)). NaN input raises NumericError; infinities
// clip like any other value.
Image clip01(Tensor3 t);
Image clip01(Shape shape, std::span<const float> values);

// 10 log10(1 / MSE) with peak 1.0; 99 dB when MSE < 1e-10.
double psnr(const Image& a, const Image& b);
inline constexpr double kPsnrCap = 99.0;

double l2_distance(std::span<const float> a, std::span<const float> b);

// Bilinear resampling with half-pixel-centre alignment.
Tensor3 resize_bilinear(const Tensor3& src, int height, int width);
Image resize_bilinear(const Image& src, int height, int width);

}  // namespace raw
