#include "raw/augment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include <fmt/format.h>

#include "raw/error.hpp"
#include "raw/spectral.hpp"

namespace raw {

namespace {

constexpr std::array<std::pair<AugmentKind, std::string_view>, 7> kKindNames{{
    {AugmentKind::kIdentity, "identity"},
    {AugmentKind::kRotate90, "rotate90"},
    {AugmentKind::kCropResize, "crop_resize"},
    {AugmentKind::kGaussianBlur, "gaussian_blur"},
    {AugmentKind::kGaussianNoise, "gaussian_noise"},
    {AugmentKind::kJitter, "jitter"},
    {AugmentKind::kJpegApprox, "jpeg_approx"},
}};

constexpr std::array<int, 64> kLumaBase{
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

constexpr std::array<int, 64> kChromaBase{
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

double parse_number(std::string_view key, std::string_view text) {
  double v = 0.0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(fmt::format("augmentation parameter {}: '{}' is not a number", key, text));
  }
  return v;
}

int parse_int(std::string_view key, std::string_view text) {
  const double v = parse_number(key, text);
  if (v != std::floor(v)) throw ConfigError(fmt::format("augmentation parameter {} must be an integer", key));
  return static_cast<int>(v);
}

// Half-sample symmetric reflection: -1 -> 0, n -> n - 1. Every column of
// the padded blur operator then sums to one, so the image mean is kept.
int reflect(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

// Bilinear sampling taps for resizing n_in samples to n_out (half-pixel centres).
struct Tap {
  int i0, i1;
  double w1;
};

std::vector<Tap> bilinear_taps(int n_out, int n_in) {
  std::vector<Tap> taps(n_out);
  const double scale = static_cast<double>(n_in) / n_out;
  for (int i = 0; i < n_out; ++i) {
    const double f = std::clamp((i + 0.5) * scale - 0.5, 0.0, static_cast<double>(n_in - 1));
    const int i0 = static_cast<int>(f);
    taps[i] = {i0, std::min(i0 + 1, n_in - 1), f - i0};
  }
  return taps;
}

Tensor3 rotate_ccw(const Tensor3& in) {
  const Shape s = in.shape();
  Tensor3 out({s.channels, s.width, s.height});
  for (int c = 0; c < s.channels; ++c)
    for (int i = 0; i < s.width; ++i)
      for (int j = 0; j < s.height; ++j) out.at(c, i, j) = in.at(c, j, s.width - 1 - i);
  return out;
}

Tensor3 rotate_cw(const Tensor3& in) {
  const Shape s = in.shape();
  Tensor3 out({s.channels, s.width, s.height});
  for (int c = 0; c < s.channels; ++c)
    for (int i = 0; i < s.width; ++i)
      for (int j = 0; j < s.height; ++j) out.at(c, i, j) = in.at(c, s.height - 1 - j, i);
  return out;
}

void crop_dims(const AugmentationSpec& spec, const Shape& s, int& ch, int& cw) {
  ch = std::max(1, static_cast<int>(std::floor(spec.crop_fraction * s.height)));
  cw = std::max(1, static_cast<int>(std::floor(spec.crop_fraction * s.width)));
}

Tensor3 crop_resize_forward(const Tensor3& in, int oy, int ox, int ch, int cw) {
  const Shape s = in.shape();
  const auto ty = bilinear_taps(s.height, ch);
  const auto tx = bilinear_taps(s.width, cw);
  Tensor3 out(s);
  for (int c = 0; c < s.channels; ++c)
    for (int y = 0; y < s.height; ++y) {
      const Tap& a = ty[y];
      for (int x = 0; x < s.width; ++x) {
        const Tap& b = tx[x];
        const double top = (1 - b.w1) * in.at(c, oy + a.i0, ox + b.i0) + b.w1 * in.at(c, oy + a.i0, ox + b.i1);
        const double bot = (1 - b.w1) * in.at(c, oy + a.i1, ox + b.i0) + b.w1 * in.at(c, oy + a.i1, ox + b.i1);
        out.at(c, y, x) = static_cast<float>((1 - a.w1) * top + a.w1 * bot);
      }
    }
  return out;
}

Tensor3 crop_resize_adjoint(const Tensor3& g, int oy, int ox, int ch, int cw) {
  const Shape s = g.shape();
  const auto ty = bilinear_taps(s.height, ch);
  const auto tx = bilinear_taps(s.width, cw);
  std::vector<double> acc(s.size(), 0.0);
  auto at = [&](int c, int y, int x) -> double& {
    return acc[(static_cast<std::size_t>(c) * s.height + y) * s.width + x];
  };
  for (int c = 0; c < s.channels; ++c)
    for (int y = 0; y < s.height; ++y) {
      const Tap& a = ty[y];
      for (int x = 0; x < s.width; ++x) {
        const Tap& b = tx[x];
        const double v = g.at(c, y, x);
        at(c, oy + a.i0, ox + b.i0) += (1 - a.w1) * (1 - b.w1) * v;
        at(c, oy + a.i0, ox + b.i1) += (1 - a.w1) * b.w1 * v;
        at(c, oy + a.i1, ox + b.i0) += a.w1 * (1 - b.w1) * v;
        at(c, oy + a.i1, ox + b.i1) += a.w1 * b.w1 * v;
      }
    }
  Tensor3 out(s);
  auto d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<float>(acc[i]);
  return out;
}

// One separable pass along rows (axis 1) or columns (axis 0). With
// adjoint = true the transpose of the same linear map is applied.
Tensor3 blur_pass(const Tensor3& in, const std::vector<double>& k, bool along_y, bool adjoint) {
  const Shape s = in.shape();
  const int r = static_cast<int>(k.size()) / 2;
  const int n = along_y ? s.height : s.width;
  std::vector<double> line(n), res(n);
  Tensor3 out(s);
  const int lines = along_y ? s.width : s.height;
  for (int c = 0; c < s.channels; ++c)
    for (int l = 0; l < lines; ++l) {
      for (int i = 0; i < n; ++i) line[i] = along_y ? in.at(c, i, l) : in.at(c, l, i);
      std::fill(res.begin(), res.end(), 0.0);
      for (int i = 0; i < n; ++i)
        for (int t = -r; t <= r; ++t) {
          const int j = reflect(i + t, n);
          if (adjoint) {
            res[j] += k[t + r] * line[i];
          } else {
            res[i] += k[t + r] * line[j];
          }
        }
      for (int i = 0; i < n; ++i) {
        float& dst = along_y ? out.at(c, i, l) : out.at(c, l, i);
        dst = static_cast<float>(res[i]);
      }
    }
  return out;
}

Tensor3 jpeg_forward(const Image& img, int quality) {
  const Shape s = img.shape();
  const int planes = s.channels;
  const int h = s.height;
  const int w = s.width;
  // Work on the 0..255 scale in YCbCr (BT.601 full range) or luma only.
  std::vector<std::vector<double>> ycc(planes, std::vector<double>(s.plane()));
  for (std::size_t i = 0; i < s.plane(); ++i) {
    if (planes == 3) {
      const double r = 255.0 * img.data()[i];
      const double g = 255.0 * img.data()[s.plane() + i];
      const double b = 255.0 * img.data()[2 * s.plane() + i];
      ycc[0][i] = 0.299 * r + 0.587 * g + 0.114 * b;
      ycc[1][i] = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b;
      ycc[2][i] = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b;
    } else {
      ycc[0][i] = 255.0 * img.data()[i];
    }
  }
  const auto luma_q = jpeg_quant_table(false, quality);
  const auto chroma_q = jpeg_quant_table(true, quality);
  for (int p = 0; p < planes; ++p) {
    const auto& q = p == 0 ? luma_q : chroma_q;
    std::vector<double> rec(s.plane());
    for (int by = 0; by < h; by += 8)
      for (int bx = 0; bx < w; bx += 8) {
        Block8 block{};
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x) {
            const int sy = std::min(by + y, h - 1);
            const int sx = std::min(bx + x, w - 1);
            block[y * 8 + x] = ycc[p][static_cast<std::size_t>(sy) * w + sx] - 128.0;
          }
        Block8 coef = dct8_forward(block);
        for (int i = 0; i < 64; ++i) coef[i] = std::round(coef[i] / q[i]) * q[i];
        const Block8 back = dct8_inverse(coef);
        for (int y = 0; y < 8 && by + y < h; ++y)
          for (int x = 0; x < 8 && bx + x < w; ++x)
            rec[static_cast<std::size_t>(by + y) * w + bx + x] = back[y * 8 + x] + 128.0;
      }
    ycc[p] = std::move(rec);
  }
  Tensor3 out(s);
  auto d = out.data();
  for (std::size_t i = 0; i < s.plane(); ++i) {
    if (planes == 3) {
      const double y = ycc[0][i];
      const double cb = ycc[1][i] - 128.0;
      const double cr = ycc[2][i] - 128.0;
      d[i] = static_cast<float>((y + 1.402 * cr) / 255.0);
      d[s.plane() + i] = static_cast<float>((y - 0.344136 * cb - 0.714136 * cr) / 255.0);
      d[2 * s.plane() + i] = static_cast<float>((y + 1.772 * cb) / 255.0);
    } else {
      d[i] = static_cast<float>(ycc[0][i] / 255.0);
    }
  }
  return out;
}

// Clips in place and records which entries were already inside [0, 1].
Image clip_recording(Tensor3 t, AugmentTrace* trace) {
  if (trace) {
    trace->inside.resize(t.size());
    auto d = t.data();
    for (std::size_t i = 0; i < d.size(); ++i) trace->inside[i] = (d[i] >= 0.0f && d[i] <= 1.0f) ? 1 : 0;
  }
  return clip01(std::move(t));
}

Tensor3 masked(const Tensor3& g, const AugmentTrace& trace) {
  if (trace.inside.size() != g.size()) throw StateError("augmentation trace does not match gradient");
  Tensor3 out = g;
  auto d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i)
    if (!trace.inside[i]) d[i] = 0.0f;
  return out;
}

}  // namespace

std::string_view kind_name(AugmentKind kind) {
  for (const auto& [k, name] : kKindNames)
    if (k == kind) return name;
  return "unknown";
}

AugmentKind parse_kind(std::string_view name) {
  for (const auto& [k, n] : kKindNames)
    if (n == name) return k;
  throw ConfigError(fmt::format("unknown augmentation kind '{}'", name));
}

void AugmentationSpec::validate() const {
  switch (kind) {
    case AugmentKind::kCropResize:
      if (!(crop_fraction > 0.0 && crop_fraction <= 1.0))
        throw ConfigError(fmt::format("crop fraction {} outside (0, 1]", crop_fraction));
      break;
    case AugmentKind::kGaussianBlur:
      if (blur_taps_y < 1 || blur_taps_x < 1 || blur_taps_y % 2 == 0 || blur_taps_x % 2 == 0)
        throw ConfigError("blur tap counts must be odd and positive");
      if (!(blur_sigma > 0.0)) throw ConfigError("blur sigma must be positive");
      break;
    case AugmentKind::kGaussianNoise:
      if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("noise sigma must be >= 0");
      break;
    case AugmentKind::kJitter:
      if (!(brightness >= 0.0 && brightness < 1.0)) throw ConfigError("jitter brightness must be in [0, 1)");
      break;
    case AugmentKind::kJpegApprox:
      if (jpeg_quality < 1 || jpeg_quality > 100) throw ConfigError("jpeg quality must be in [1, 100]");
      break;
    case AugmentKind::kIdentity:
    case AugmentKind::kRotate90:
      break;
  }
}

std::string AugmentationSpec::to_string() const {
  std::string out(kind_name(kind));
  switch (kind) {
    case AugmentKind::kCropResize:
      out += fmt::format(" fraction={}", crop_fraction);
      break;
    case AugmentKind::kGaussianBlur:
      out += fmt::format(" taps_y={} taps_x={} sigma={}", blur_taps_y, blur_taps_x, blur_sigma);
      break;
    case AugmentKind::kGaussianNoise:
      out += fmt::format(" sigma={}", noise_sigma);
      break;
    case AugmentKind::kJitter:
      out += fmt::format(" brightness={}", brightness);
      break;
    case AugmentKind::kJpegApprox:
      out += fmt::format(" quality={}", jpeg_quality);
      break;
    case AugmentKind::kIdentity:
    case AugmentKind::kRotate90:
      break;
  }
  return out;
}

AugmentationSpec AugmentationSpec::parse(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string word;
  if (!(in >> word)) throw ConfigError("empty augmentation spec");
  AugmentationSpec spec = of(parse_kind(word));
  while (in >> word) {
    const auto eq = word.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("augmentation parameter '{}' lacks '='", word));
    const std::string key = word.substr(0, eq);
    const std::string_view value = std::string_view(word).substr(eq + 1);
    const AugmentKind k = spec.kind;
    if (k == AugmentKind::kCropResize && key == "fraction") {
      spec.crop_fraction = parse_number(key, value);
    } else if (k == AugmentKind::kGaussianBlur && key == "taps_y") {
      spec.blur_taps_y = parse_int(key, value);
    } else if (k == AugmentKind::kGaussianBlur && key == "taps_x") {
      spec.blur_taps_x = parse_int(key, value);
    } else if (k == AugmentKind::kGaussianBlur && key == "sigma") {
      spec.blur_sigma = parse_number(key, value);
    } else if (k == AugmentKind::kGaussianNoise && key == "sigma") {
      spec.noise_sigma = parse_number(key, value);
    } else if (k == AugmentKind::kJitter && key == "brightness") {
      spec.brightness = parse_number(key, value);
    } else if (k == AugmentKind::kJpegApprox && key == "quality") {
      spec.jpeg_quality = parse_int(key, value);
    } else {
      throw ConfigError(fmt::format("unknown parameter '{}' for augmentation {}", key, kind_name(k)));
    }
  }
  spec.validate();
  return spec;
}

std::vector<AugmentationSpec> default_augmentation_pool() {
  return {AugmentationSpec::of(AugmentKind::kRotate90),      AugmentationSpec::of(AugmentKind::kCropResize),
          AugmentationSpec::of(AugmentKind::kGaussianBlur),  AugmentationSpec::of(AugmentKind::kGaussianNoise),
          AugmentationSpec::of(AugmentKind::kJitter),        AugmentationSpec::of(AugmentKind::kJpegApprox)};
}

std::vector<double> gaussian_taps(int taps, double sigma) {
  std::vector<double> k(taps);
  const int r = taps / 2;
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    k[i + r] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    sum += k[i + r];
  }
  for (double& v : k) v /= sum;
  return k;
}

std::array<int, 64> jpeg_quant_table(bool chroma, int quality) {
  quality = std::clamp(quality, 1, 100);
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  const auto& base = chroma ? kChromaBase : kLumaBase;
  std::array<int, 64> q{};
  for (int i = 0; i < 64; ++i) q[i] = std::clamp((base[i] * scale + 50) / 100, 1, 255);
  return q;
}

Image apply(const AugmentationSpec& spec, const Image& img, Rng& rng, AugmentTrace* trace) {
  spec.validate();
  const Shape s = img.shape();
  if (trace) {
    *trace = AugmentTrace{};
    trace->in_shape = s;
  }
  switch (spec.kind) {
    case AugmentKind::kIdentity:
      return img;
    case AugmentKind::kRotate90:
      return clip01(rotate_ccw(img.tensor()));
    case AugmentKind::kCropResize: {
      int ch = 0, cw = 0;
      crop_dims(spec, s, ch, cw);
      const int oy = static_cast<int>(rng.uniform_int(0, s.height - ch));
      const int ox = static_cast<int>(rng.uniform_int(0, s.width - cw));
      if (trace) {
        trace->off_y = oy;
        trace->off_x = ox;
      }
      return clip01(crop_resize_forward(img.tensor(), oy, ox, ch, cw));
    }
    case AugmentKind::kGaussianBlur: {
      if (s.height <= spec.blur_taps_y / 2 || s.width <= spec.blur_taps_x / 2) {
        throw DimensionError(fmt::format("image {} is smaller than the {}x{} blur kernel", s.str(),
                                         spec.blur_taps_y, spec.blur_taps_x));
      }
      const Tensor3 a = blur_pass(img.tensor(), gaussian_taps(spec.blur_taps_x, spec.blur_sigma), false, false);
      return clip01(blur_pass(a, gaussian_taps(spec.blur_taps_y, spec.blur_sigma), true, false));
    }
    case AugmentKind::kGaussianNoise: {
      Tensor3 t = img.tensor();
      for (float& v : t.data()) v += static_cast<float>(spec.noise_sigma * rng.normal());
      return clip_recording(std::move(t), trace);
    }
    case AugmentKind::kJitter: {
      const double f = rng.uniform(1.0 - spec.brightness, 1.0 + spec.brightness);
      if (trace) trace->factor = f;
      Tensor3 t = img.tensor();
      for (float& v : t.data()) v = static_cast<float>(f * v);
      return clip_recording(std::move(t), trace);
    }
    case AugmentKind::kJpegApprox: {
      if (s.channels != 1 && s.channels != 3) {
        throw DimensionError(fmt::format("jpeg_approx needs 1 or 3 channels, got {}", s.channels));
      }
      if (s.height < 8 || s.width < 8) {
        throw DimensionError(fmt::format("image {} is smaller than an 8x8 block", s.str()));
      }
      return clip01(jpeg_forward(img, spec.jpeg_quality));
    }
  }
  throw ConfigError("unhandled augmentation kind");
}

Tensor3 apply_vjp(const AugmentationSpec& spec, const AugmentTrace& trace, const Tensor3& upstream) {
  const Shape s = trace.in_shape;
  switch (spec.kind) {
    case AugmentKind::kIdentity:
      return upstream;
    case AugmentKind::kRotate90:
      return rotate_cw(upstream);
    case AugmentKind::kCropResize: {
      int ch = 0, cw = 0;
      crop_dims(spec, s, ch, cw);
      return crop_resize_adjoint(upstream, trace.off_y, trace.off_x, ch, cw);
    }
    case AugmentKind::kGaussianBlur: {
      // Blur clips nothing: a convex combination of [0, 1] values stays inside.
      const Tensor3 a = blur_pass(upstream, gaussian_taps(spec.blur_taps_y, spec.blur_sigma), true, true);
      return blur_pass(a, gaussian_taps(spec.blur_taps_x, spec.blur_sigma), false, true);
    }
    case AugmentKind::kGaussianNoise:
      return masked(upstream, trace);
    case AugmentKind::kJitter: {
      Tensor3 g = masked(upstream, trace);
      for (float& v : g.data()) v = static_cast<float>(trace.factor * v);
      return g;
    }
    case AugmentKind::kJpegApprox:
      return Tensor3(s, 0.0f);
  }
  throw ConfigError("unhandled augmentation kind");
}

namespace serial {

std::vector<Image> apply_batch(const AugmentationSpec& spec, std::span<const Image> images,
                               std::uint64_t seed, std::vector<AugmentTrace>* traces) {
  std::vector<Image> out(images.size());
  if (traces) traces->assign(images.size(), AugmentTrace{});
  for (std::size_t i = 0; i < images.size(); ++i) {
    Rng rng(derive_seed(seed, stream::kAugment, i));
    out[i] = apply(spec, images[i], rng, traces ? &(*traces)[i] : nullptr);
  }
  return out;
}

}  // namespace serial

std::vector<Image> apply_batch(const AugmentationSpec& spec, std::span<const Image> images,
                               std::uint64_t seed, std::vector<AugmentTrace>* traces) {
  spec.validate();
  std::vector<Image> out(images.size());
  if (traces) traces->assign(images.size(), AugmentTrace{});
  const auto n = static_cast<std::ptrdiff_t>(images.size());
  // Errors inside the parallel region are rethrown after it.
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      Rng rng(derive_seed(seed, stream::kAugment, static_cast<std::uint64_t>(i)));
      out[i] = apply(spec, images[i], rng, traces ? &(*traces)[i] : nullptr);
    } catch (...) {
#pragma omp critical(raw_augment_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

std::pair<AugmentationSpec, AugmentationSpec> sample_two_views(std::span<const AugmentationSpec> pool,
                                                               Rng& rng) {
  if (pool.empty()) throw ConfigError("augmentation pool is empty");
  const auto last = static_cast<std::int64_t>(pool.size()) - 1;
  const auto a = rng.uniform_int(0, last);
  const auto b = rng.uniform_int(0, last);
  return {pool[a], pool[b]};
}

}  // namespace raw
