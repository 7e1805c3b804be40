#pragma once

#include <array>
#include <complex>
#include <span>
#include <vector>

#include "raw/image.hpp"

namespace raw {

// Complex coefficients in the same (C, H, W) layout as Image.
struct Spectrum {
  Shape shape{};
  std::vector<double> re;
  std::vector<double> im;

  Spectrum() = default;
  explicit Spectrum(Shape s) : shape(s), re(s.size(), 0.0), im(s.size(), 0.0) {}
};

// In-place orthonormal 2D DFT of one h x w plane (row-major). Forward uses
// exp(-2 pi i k n / N); both directions scale by 1 / sqrt(h w). Any size:
// powers of two go through radix-2, everything else through Bluestein.
void dft2_inplace(std::span<std::complex<double>> plane, int height, int width, bool inverse);

// Per-channel orthonormal 2D DFT, no frequency centring. Channels run in
// parallel; output is bit-identical to serial::fft2.
Spectrum fft2(const Tensor3& x);
inline Spectrum fft2(const Image& x) { return fft2(x.tensor()); }

// Inverse orthonormal 2D DFT; returns the real part. When max_abs_imag is
// non-null it receives the largest magnitude of the discarded imaginary part.
Tensor3 ifft2(const Spectrum& spec, double* max_abs_imag = nullptr);

// Real part of the inverse transform of a real-valued coefficient array.
// This is the pixel-space image of a frequency watermark.
Tensor3 ifft2_real(const Tensor3& coefficients);

// Real part of the forward transform: the adjoint of ifft2_real under the
// orthonormal convention.
Tensor3 fft2_real(const Tensor3& x);

using Block8 = std::array<double, 64>;

// Orthonormal type-II 2D DCT of an 8x8 block (row-major) and its inverse.
Block8 dct8_forward(const Block8& block);
Block8 dct8_inverse(const Block8& coefficients);

namespace serial {
Spectrum fft2(const Tensor3& x);
Tensor3 ifft2(const Spectrum& spec, double* max_abs_imag = nullptr);
}  // namespace serial

}  // namespace raw
