#include "raw/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

#include "raw/error.hpp"

namespace raw {

namespace {

using cd = std::complex<double>;

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

// Precomputed state for an unnormalized length-n complex DFT.
class Plan1d {
 public:
  explicit Plan1d(int n) : n_(n) {
    if (is_pow2(n)) {
      build_radix2(n, twiddle_, bitrev_);
    } else {
      m_ = 1;
      while (m_ < 2 * n - 1) m_ <<= 1;
      build_radix2(m_, twiddle_, bitrev_);
      chirp_.resize(n);
      for (int k = 0; k < n; ++k) {
        // k^2 mod 2n keeps the angle argument small for large k.
        const long long k2 = (static_cast<long long>(k) * k) % (2LL * n);
        const double ang = std::numbers::pi * static_cast<double>(k2) / n;
        chirp_[k] = cd(std::cos(ang), -std::sin(ang));
      }
      chirp_fft_.assign(m_, cd(0.0, 0.0));
      chirp_fft_[0] = std::conj(chirp_[0]);
      for (int k = 1; k < n; ++k) {
        chirp_fft_[k] = std::conj(chirp_[k]);
        chirp_fft_[m_ - k] = std::conj(chirp_[k]);
      }
      radix2(chirp_fft_.data(), false);
    }
  }

  // Unnormalized forward (inverse = false) or conjugate (inverse = true) DFT.
  void run(cd* data, bool inverse, std::vector<cd>& scratch) const {
    if (m_ == 0) {
      radix2(data, inverse);
      return;
    }
    // Bluestein: X_k = conj(c_k) sum_j (x_j conj(c_j)) c_{k-j} with c_k = exp(i pi k^2 / n).
    // Written here with chirp_ = exp(-i pi k^2 / n).
    scratch.assign(m_, cd(0.0, 0.0));
    for (int j = 0; j < n_; ++j) {
      const cd x = inverse ? std::conj(data[j]) : data[j];
      scratch[j] = x * chirp_[j];
    }
    radix2(scratch.data(), false);
    for (int k = 0; k < m_; ++k) scratch[k] *= chirp_fft_[k];
    radix2(scratch.data(), true);
    const double inv_m = 1.0 / m_;
    for (int k = 0; k < n_; ++k) {
      const cd y = scratch[k] * inv_m * chirp_[k];
      data[k] = inverse ? std::conj(y) : y;
    }
  }

 private:
  static void build_radix2(int n, std::vector<cd>& tw, std::vector<int>& rev) {
    tw.resize(n / 2);
    for (int k = 0; k < n / 2; ++k) {
      const double ang = -2.0 * std::numbers::pi * k / n;
      tw[k] = cd(std::cos(ang), std::sin(ang));
    }
    rev.resize(n);
    int bits = 0;
    while ((1 << bits) < n) ++bits;
    for (int i = 0; i < n; ++i) {
      int r = 0;
      for (int b = 0; b < bits; ++b) r |= ((i >> b) & 1) << (bits - 1 - b);
      rev[i] = r;
    }
  }

  void radix2(cd* a, bool inverse) const {
    const int n = static_cast<int>(bitrev_.size());
    for (int i = 0; i < n; ++i) {
      if (i < bitrev_[i]) std::swap(a[i], a[bitrev_[i]]);
    }
    for (int len = 2; len <= n; len <<= 1) {
      const int half = len / 2;
      const int step = n / len;
      for (int i = 0; i < n; i += len) {
        for (int j = 0; j < half; ++j) {
          const cd w = inverse ? std::conj(twiddle_[j * step]) : twiddle_[j * step];
          const cd t = a[i + j + half] * w;
          a[i + j + half] = a[i + j] - t;
          a[i + j] += t;
        }
      }
    }
  }

  int n_;
  int m_ = 0;  // Bluestein convolution length, 0 for radix-2
  std::vector<cd> twiddle_;
  std::vector<int> bitrev_;
  std::vector<cd> chirp_;
  std::vector<cd> chirp_fft_;
};

std::shared_ptr<const Plan1d> plan_for(int n) {
  static std::mutex mu;
  static std::map<int, std::shared_ptr<const Plan1d>> cache;
  std::lock_guard lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  auto plan = std::make_shared<const Plan1d>(n);
  cache.emplace(n, plan);
  return plan;
}

void forward_channel(const Tensor3& x, int c, Spectrum& out) {
  const int h = x.height();
  const int w = x.width();
  std::vector<cd> plane(x.shape().plane());
  auto src = x.channel(c);
  for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = cd(src[i], 0.0);
  dft2_inplace(plane, h, w, false);
  const std::size_t off = c * x.shape().plane();
  for (std::size_t i = 0; i < plane.size(); ++i) {
    out.re[off + i] = plane[i].real();
    out.im[off + i] = plane[i].imag();
  }
}

double inverse_channel(const Spectrum& spec, int c, Tensor3& out) {
  const int h = spec.shape.height;
  const int w = spec.shape.width;
  const std::size_t off = c * spec.shape.plane();
  std::vector<cd> plane(spec.shape.plane());
  for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = cd(spec.re[off + i], spec.im[off + i]);
  dft2_inplace(plane, h, w, true);
  auto dst = out.channel(c);
  double max_imag = 0.0;
  for (std::size_t i = 0; i < plane.size(); ++i) {
    dst[i] = static_cast<float>(plane[i].real());
    max_imag = std::max(max_imag, std::abs(plane[i].imag()));
  }
  return max_imag;
}

void check_spectrum(const Spectrum& spec) {
  if (spec.re.size() != spec.shape.size() || spec.im.size() != spec.shape.size()) {
    throw DimensionError("spectrum arrays do not match its shape " + spec.shape.str());
  }
}

}  // namespace

void dft2_inplace(std::span<std::complex<double>> plane, int height, int width, bool inverse) {
  if (height < 1 || width < 1 || plane.size() != static_cast<std::size_t>(height) * width) {
    throw DimensionError("dft2_inplace: plane size does not match dimensions");
  }
  auto row_plan = plan_for(width);
  auto col_plan = plan_for(height);
  std::vector<cd> scratch;
  for (int y = 0; y < height; ++y) row_plan->run(plane.data() + static_cast<std::size_t>(y) * width, inverse, scratch);
  std::vector<cd> column(height);
  for (int x = 0; x < width; ++x) {
    for (int y = 0; y < height; ++y) column[y] = plane[static_cast<std::size_t>(y) * width + x];
    col_plan->run(column.data(), inverse, scratch);
    for (int y = 0; y < height; ++y) plane[static_cast<std::size_t>(y) * width + x] = column[y];
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(height) * width);
  for (auto& v : plane) v *= scale;
}

namespace serial {

Spectrum fft2(const Tensor3& x) {
  Spectrum out(x.shape());
  for (int c = 0; c < x.channels(); ++c) forward_channel(x, c, out);
  return out;
}

Tensor3 ifft2(const Spectrum& spec, double* max_abs_imag) {
  check_spectrum(spec);
  Tensor3 out(spec.shape);
  double worst = 0.0;
  for (int c = 0; c < spec.shape.channels; ++c) worst = std::max(worst, inverse_channel(spec, c, out));
  if (max_abs_imag) *max_abs_imag = worst;
  return out;
}

}  // namespace serial

Spectrum fft2(const Tensor3& x) {
  Spectrum out(x.shape());
  const int channels = x.channels();
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c) forward_channel(x, c, out);
  return out;
}

Tensor3 ifft2(const Spectrum& spec, double* max_abs_imag) {
  check_spectrum(spec);
  Tensor3 out(spec.shape);
  const int channels = spec.shape.channels;
  std::vector<double> imag(channels, 0.0);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < channels; ++c) imag[c] = inverse_channel(spec, c, out);
  if (max_abs_imag) *max_abs_imag = *std::max_element(imag.begin(), imag.end());
  return out;
}

Tensor3 ifft2_real(const Tensor3& coefficients) {
  Spectrum spec(coefficients.shape());
  auto src = coefficients.data();
  std::copy(src.begin(), src.end(), spec.re.begin());
  return ifft2(spec);
}

Tensor3 fft2_real(const Tensor3& x) {
  const Spectrum spec = fft2(x);
  Tensor3 out(x.shape());
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<float>(spec.re[i]);
  return out;
}

namespace {

const std::array<double, 64>& dct8_basis() {
  static const std::array<double, 64> basis = [] {
    std::array<double, 64> b{};
    for (int u = 0; u < 8; ++u) {
      const double a = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int x = 0; x < 8; ++x) b[u * 8 + x] = a * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
    }
    return b;
  }();
  return basis;
}

}  // namespace

Block8 dct8_forward(const Block8& block) {
  const auto& c = dct8_basis();
  Block8 tmp{};
  Block8 out{};
  // rows: tmp[y][u] = sum_x c[u][x] block[y][x]
  for (int y = 0; y < 8; ++y)
    for (int u = 0; u < 8; ++u) {
      double s = 0.0;
      for (int x = 0; x < 8; ++x) s += c[u * 8 + x] * block[y * 8 + x];
      tmp[y * 8 + u] = s;
    }
  // columns: out[v][u] = sum_y c[v][y] tmp[y][u]
  for (int v = 0; v < 8; ++v)
    for (int u = 0; u < 8; ++u) {
      double s = 0.0;
      for (int y = 0; y < 8; ++y) s += c[v * 8 + y] * tmp[y * 8 + u];
      out[v * 8 + u] = s;
    }
  return out;
}

Block8 dct8_inverse(const Block8& coefficients) {
  const auto& c = dct8_basis();
  Block8 tmp{};
  Block8 out{};
  for (int y = 0; y < 8; ++y)
    for (int u = 0; u < 8; ++u) {
      double s = 0.0;
      for (int v = 0; v < 8; ++v) s += c[v * 8 + y] * coefficients[v * 8 + u];
      tmp[y * 8 + u] = s;
    }
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      double s = 0.0;
      for (int u = 0; u < 8; ++u) s += c[u * 8 + x] * tmp[y * 8 + u];
      out[y * 8 + x] = s;
    }
  return out;
}

}  // namespace raw
