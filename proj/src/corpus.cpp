#include "raw/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "raw/error.hpp"
#include "raw/image_io.hpp"
#include "raw/rng.hpp"
#include "raw/spectral.hpp"

namespace raw {
namespace fs = std::filesystem;

void CorpusSpec::validate() const {
  if (n_images < 1) throw ConfigError("corpus needs at least one image");
  if (channels < 1 || height < 1 || width < 1) throw ConfigError("corpus image size must be positive");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("corpus mixture weights must be finite and >= 0");
    sum += w;
  }
  if (!(sum > 0.0)) throw ConfigError("corpus mixture weights must not all be zero");
}

namespace {

Image normalize_minmax(Tensor3 t) {
  auto d = t.data();
  const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
  const float a = *lo;
  const float range = *hi - *lo;
  for (float& v : d) v = range > 0.0f ? (v - a) / range : 0.5f;
  return clip01(std::move(t));
}

Image low_freq_fourier(Shape s, Rng& rng) {
  Spectrum spec(s);
  for (int c = 0; c < s.channels; ++c)
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x) {
        const double fy = std::min(y, s.height - y);
        const double fx = std::min(x, s.width - x);
        const double amp = std::sqrt(1.0 / (1.0 + fy * fy + fx * fx));
        const std::size_t i = (static_cast<std::size_t>(c) * s.height + y) * s.width + x;
        spec.re[i] = amp * rng.normal();
        spec.im[i] = amp * rng.normal();
      }
  return normalize_minmax(ifft2(spec));
}

Image gradient_field(Shape s, Rng& rng) {
  std::vector<double> a(s.channels), b(s.channels);
  for (int c = 0; c < s.channels; ++c) {
    a[c] = rng.uniform();
    b[c] = rng.uniform();
  }
  const bool radial = rng.uniform() < 0.5;
  const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double cy = rng.uniform(0.0, s.height);
  const double cx = rng.uniform(0.0, s.width);
  const double diag = std::hypot(s.height, s.width);
  Tensor3 t(s);
  for (int y = 0; y < s.height; ++y)
    for (int x = 0; x < s.width; ++x) {
      double f;
      if (radial) {
        f = std::min(1.0, std::hypot(y - cy, x - cx) / (0.75 * diag));
      } else {
        const double proj = ((x - 0.5 * s.width) * std::cos(angle) + (y - 0.5 * s.height) * std::sin(angle)) / diag;
        f = std::clamp(proj + 0.5, 0.0, 1.0);
      }
      for (int c = 0; c < s.channels; ++c) t.at(c, y, x) = static_cast<float>((1.0 - f) * a[c] + f * b[c]);
    }
  return clip01(std::move(t));
}

Image shape_collage(Shape s, Rng& rng) {
  Tensor3 t(s);
  for (int c = 0; c < s.channels; ++c) {
    const float bg = static_cast<float>(rng.uniform());
    for (float& v : t.channel(c)) v = bg;
  }
  const int count = static_cast<int>(rng.uniform_int(5, 20));
  std::vector<float> color(s.channels);
  for (int k = 0; k < count; ++k) {
    for (auto& v : color) v = static_cast<float>(rng.uniform());
    const bool circle = rng.uniform() < 0.5;
    const double cy = rng.uniform(0.0, s.height);
    const double cx = rng.uniform(0.0, s.width);
    const double ry = rng.uniform(0.05, 0.35) * s.height;
    const double rx = circle ? ry : rng.uniform(0.05, 0.35) * s.width;
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x) {
        const double dy = y + 0.5 - cy;
        const double dx = x + 0.5 - cx;
        const bool inside = circle ? (dy * dy + dx * dx <= ry * ry) : (std::abs(dy) <= ry && std::abs(dx) <= rx);
        if (!inside) continue;
        for (int c = 0; c < s.channels; ++c) t.at(c, y, x) = color[c];
      }
  }
  return clip01(std::move(t));
}

Image filtered_noise(Shape s, Rng& rng) {
  Tensor3 noise(s);
  for (float& v : noise.data()) v = static_cast<float>(rng.uniform());
  const int r = static_cast<int>(rng.uniform_int(1, 4));
  Tensor3 out(s);
  for (int c = 0; c < s.channels; ++c)
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x) {
        double sum = 0.0;
        int n = 0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx) {
            const int yy = y + dy;
            const int xx = x + dx;
            if (yy < 0 || yy >= s.height || xx < 0 || xx >= s.width) continue;
            sum += noise.at(c, yy, xx);
            ++n;
          }
        out.at(c, y, x) = static_cast<float>(sum / n);
      }
  return clip01(std::move(out));
}

Generator pick_family(const std::array<double, 4>& weights, Rng& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  double u = rng.uniform() * total;
  for (int k = 0; k < 4; ++k) {
    if (u < weights[k]) return static_cast<Generator>(k);
    u -= weights[k];
  }
  for (int k = 3; k >= 0; --k)
    if (weights[k] > 0.0) return static_cast<Generator>(k);
  return Generator::kFilteredNoise;
}

Image generate_index(const CorpusSpec& spec, std::size_t i) {
  Rng rng(derive_seed(spec.seed, stream::kCorpus, i));
  const Generator family = pick_family(spec.weights, rng);
  return generate_one(family, spec.shape(), rng.next_u64());
}

}  // namespace

Image generate_one(Generator family, Shape shape, std::uint64_t seed) {
  Rng rng(seed);
  switch (family) {
    case Generator::kLowFreqFourier:
      return low_freq_fourier(shape, rng);
    case Generator::kGradientField:
      return gradient_field(shape, rng);
    case Generator::kShapeCollage:
      return shape_collage(shape, rng);
    case Generator::kFilteredNoise:
      return filtered_noise(shape, rng);
  }
  throw ConfigError("unknown generator family");
}

namespace serial {

std::vector<Image> generate(const CorpusSpec& spec) {
  spec.validate();
  std::vector<Image> out(spec.n_images);
  for (int i = 0; i < spec.n_images; ++i) out[i] = generate_index(spec, i);
  return out;
}

}  // namespace serial

std::vector<Image> generate(const CorpusSpec& spec) {
  spec.validate();
  std::vector<Image> out(spec.n_images);
#pragma omp parallel for schedule(dynamic, 4)
  for (int i = 0; i < spec.n_images; ++i) out[i] = generate_index(spec, i);
  return out;
}

std::vector<Image> ingest_dir(const fs::path& dir, Shape shape) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw IoError(fmt::format("'{}' is not a readable directory", dir.string()));
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".png" || ext == ".ppm" || ext == ".pgm" || ext == ".pnm") files.push_back(entry.path());
  }
  if (files.empty()) throw ConfigError(fmt::format("directory '{}' contains no PNG/PPM images", dir.string()));
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
  std::vector<Image> out;
  out.reserve(files.size());
  for (const auto& f : files) {
    Image img;
    try {
      img = load_image(f, shape.channels);
    } catch (const Error& e) {
      throw IoError(fmt::format("failed to read '{}': {}", f.string(), e.what()));
    }
    if (img.height() != shape.height || img.width() != shape.width) {
      img = resize_bilinear(img, shape.height, shape.width);
    }
    out.push_back(std::move(img));
  }
  return out;
}

void write_corpus(std::span<const Image> images, const fs::path& dir, const std::string& extension) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create '{}': {}", dir.string(), ec.message()));
  const std::string ext = extension.empty() || extension[0] == '.' ? extension : "." + extension;
  for (std::size_t i = 0; i < images.size(); ++i) {
    save_image(images[i], dir / fmt::format("img_{:05d}{}", i, ext));
  }
}

}  // namespace raw
