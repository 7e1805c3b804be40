#include <doctest.h>

#include <cmath>
#include <complex>

#include "oracle.hpp"
#include "raw/spectral.hpp"
#include "support.hpp"

using namespace raw;

namespace {

double max_abs_diff(std::span<const float> a, std::span<const float> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

}  // namespace

TEST_CASE("fft2 of a constant 2x2 image") {
  const Image img(Shape{1, 2, 2}, 0.5f);
  const Spectrum s = fft2(img);
  CHECK(s.re[0] == doctest::Approx(1.0));
  for (int i = 1; i < 4; ++i) {
    CHECK(std::abs(s.re[i]) < 1e-12);
    CHECK(std::abs(s.im[i]) < 1e-12);
  }
  CHECK(std::abs(s.im[0]) < 1e-12);
}

TEST_CASE("ifft2 of a DC spike on a 2x2 grid") {
  Spectrum s(Shape{1, 2, 2});
  s.re[0] = 1.0;
  const Tensor3 t = ifft2(s);
  for (float v : t.data()) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("zero in, zero out") {
  const Image z(Shape{3, 6, 10}, 0.0f);
  const Spectrum s = fft2(z);
  for (std::size_t i = 0; i < s.re.size(); ++i) {
    CHECK(s.re[i] == 0.0);
    CHECK(s.im[i] == 0.0);
  }
  const Tensor3 back = ifft2(Spectrum(Shape{3, 6, 10}));
  for (float v : back.data()) CHECK(v == 0.0f);
}

TEST_CASE("fft2 matches a direct DFT for power-of-two and other sizes") {
  for (auto [h, w] : {std::pair{8, 8}, {5, 7}, {6, 12}, {1, 9}, {16, 3}}) {
    CAPTURE(h);
    CAPTURE(w);
    const Shape shape{2, h, w};
    const Image img = testing::random_image(shape, h * 100 + w);
    const Spectrum s = fft2(img);
    for (int c = 0; c < shape.channels; ++c) {
      std::vector<oracle::cd> p(shape.plane());
      for (std::size_t i = 0; i < p.size(); ++i) p[i] = img.data()[c * shape.plane() + i];
      const auto ref = oracle::dft2(p, h, w, false);
      for (std::size_t i = 0; i < p.size(); ++i) {
        CHECK(std::abs(s.re[c * shape.plane() + i] - ref[i].real()) < 1e-10);
        CHECK(std::abs(s.im[c * shape.plane() + i] - ref[i].imag()) < 1e-10);
      }
    }
  }
}

TEST_CASE("round trip, Parseval, and the imaginary-part diagnostic") {
  for (auto [h, w] : {std::pair{64, 64}, {31, 17}, {48, 40}}) {
    const Image img = testing::random_image({3, h, w}, 11 + h);
    const Spectrum s = fft2(img);
    double imag = 1.0;
    const Tensor3 back = ifft2(s, &imag);
    CHECK(max_abs_diff(img.data(), back.data()) <= 1e-5);
    CHECK(imag <= 1e-5);

    double e_pix = 0.0, e_freq = 0.0;
    for (float v : img.data()) e_pix += static_cast<double>(v) * v;
    for (std::size_t i = 0; i < s.re.size(); ++i) e_freq += s.re[i] * s.re[i] + s.im[i] * s.im[i];
    CHECK(std::abs(e_pix - e_freq) <= 1e-6 * e_pix);
  }
}

TEST_CASE("64-bit plane transform round trip within 1e-10") {
  raw::Rng rng(3);
  for (auto [h, w] : {std::pair{32, 32}, {15, 22}}) {
    std::vector<std::complex<double>> p(static_cast<std::size_t>(h) * w);
    for (auto& z : p) z = {rng.uniform(), 0.0};
    auto orig = p;
    dft2_inplace(p, h, w, false);
    dft2_inplace(p, h, w, true);
    double err = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) err = std::max(err, std::abs(p[i] - orig[i]));
    CHECK(err <= 1e-10);
  }
}

TEST_CASE("linearity") {
  const Shape s{3, 12, 20};
  const Image x = testing::random_image(s, 1), y = testing::random_image(s, 2);
  const double a = 0.3, b = 0.6;
  std::vector<float> mix(s.size());
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = static_cast<float>(a * x.data()[i] + b * y.data()[i]);
  const Spectrum fx = fft2(x), fy = fft2(y), fm = fft2(Image(s, mix));
  for (std::size_t i = 0; i < mix.size(); ++i) {
    CHECK(std::abs(fm.re[i] - (a * fx.re[i] + b * fy.re[i])) <= 1e-5);
    CHECK(std::abs(fm.im[i] - (a * fx.im[i] + b * fy.im[i])) <= 1e-5);
  }
}

TEST_CASE("ifft2_real and fft2_real are adjoint") {
  const Shape s{3, 10, 14};
  const Tensor3 v = testing::random_tensor(s, 5), x = testing::random_tensor(s, 6);
  const Tensor3 iv = ifft2_real(v), fx = fft2_real(x);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    lhs += static_cast<double>(iv.data()[i]) * x.data()[i];
    rhs += static_cast<double>(v.data()[i]) * fx.data()[i];
  }
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-5));
}

TEST_CASE("dct8 examples and round trip") {
  Block8 k{};
  k.fill(0.25);
  const Block8 d = dct8_forward(k);
  CHECK(d[0] == doctest::Approx(2.0));
  for (int i = 1; i < 64; ++i) CHECK(std::abs(d[i]) < 1e-12);

  Block8 z{};
  for (double v : dct8_forward(z)) CHECK(v == 0.0);

  raw::Rng rng(17);
  Block8 b{};
  for (auto& v : b) v = rng.uniform(-1.0, 1.0);
  const Block8 back = dct8_inverse(dct8_forward(b));
  for (int i = 0; i < 64; ++i) CHECK(std::abs(back[i] - b[i]) <= 1e-6);

  // Orthonormality: energy preserved.
  double e0 = 0.0, e1 = 0.0;
  const Block8 fb = dct8_forward(b);
  for (int i = 0; i < 64; ++i) {
    e0 += b[i] * b[i];
    e1 += fb[i] * fb[i];
  }
  CHECK(e1 == doctest::Approx(e0).epsilon(1e-12));
}
