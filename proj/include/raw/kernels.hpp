#pragma once

// Single-image building blocks for the verifier. Batch-level parallelism
// lives one level up (verifier.cpp); everything here is sequential so the
// OpenMP batch drivers and their serial references share identical
// arithmetic.

#include <cstddef>

namespace raw::kernels {

// 3x3, stride-2, zero-padding-1 convolution geometry.
struct ConvGeometry {
  int in_ch = 0;
  int out_ch = 0;
  int in_h = 0;
  int in_w = 0;
  int out_h = 0;
  int out_w = 0;

  int taps() const { return in_ch * 9; }  // K: rows of the im2col matrix
  int positions() const { return out_h * out_w; }  // P: columns
  std::size_t in_size() const { return static_cast<std::size_t>(in_ch) * in_h * in_w; }
  std::size_t out_size() const { return static_cast<std::size_t>(out_ch) * positions(); }
  std::size_t col_size() const { return static_cast<std::size_t>(taps()) * positions(); }
};

ConvGeometry conv_geometry(int in_ch, int out_ch, int in_h, int in_w);

// col[K][P] from in[C][H][W]; padding positions are zero.
void im2col(const float* in, const ConvGeometry& g, float* col);

// din[C][H][W] += scatter of dcol[K][P] (adjoint of im2col).
void col2im_add(const float* dcol, const ConvGeometry& g, float* din);

// out[m][n] = max(0, bias[m] + sum_k w[m][k] col[k][n]).
void conv_gemm_relu(const float* w, const float* bias, const float* col, int m, int k, int n,
                    float* out);

// Backward of conv_gemm_relu given the post-ReLU output `act` and its
// gradient `dact`. Writes dz = dact * (act > 0) into dact, accumulates
// dw[m][k] and db[m], and (when dcol is non-null) writes dcol[k][n].
void conv_gemm_relu_backward(const float* w, const float* col, const float* act, float* dact,
                             int m, int k, int n, float* dw, float* db, float* dcol);

}  // namespace raw::kernels
