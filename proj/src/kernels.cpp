#include "raw/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace raw::kernels {

ConvGeometry conv_geometry(int in_ch, int out_ch, int in_h, int in_w) {
  ConvGeometry g;
  g.in_ch = in_ch;
  g.out_ch = out_ch;
  g.in_h = in_h;
  g.in_w = in_w;
  g.out_h = (in_h - 1) / 2 + 1;
  g.out_w = (in_w - 1) / 2 + 1;
  return g;
}

void im2col(const float* in, const ConvGeometry& g, float* col) {
  const int P = g.positions();
  for (int c = 0; c < g.in_ch; ++c) {
    const float* plane = in + static_cast<std::size_t>(c) * g.in_h * g.in_w;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        float* row = col + static_cast<std::size_t>(c * 9 + ky * 3 + kx) * P;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = 2 * oy - 1 + ky;
          float* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.in_h) {
            std::fill(dst, dst + g.out_w, 0.0f);
            continue;
          }
          const float* src = plane + static_cast<std::size_t>(iy) * g.in_w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = 2 * ox - 1 + kx;
            dst[ox] = (ix >= 0 && ix < g.in_w) ? src[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_add(const float* dcol, const ConvGeometry& g, float* din) {
  const int P = g.positions();
  for (int c = 0; c < g.in_ch; ++c) {
    float* plane = din + static_cast<std::size_t>(c) * g.in_h * g.in_w;
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const float* row = dcol + static_cast<std::size_t>(c * 9 + ky * 3 + kx) * P;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = 2 * oy - 1 + ky;
          if (iy < 0 || iy >= g.in_h) continue;
          float* dst = plane + static_cast<std::size_t>(iy) * g.in_w;
          const float* src = row + oy * g.out_w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = 2 * ox - 1 + kx;
            if (ix >= 0 && ix < g.in_w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

void conv_gemm_relu(const float* w, const float* bias, const float* col, int m, int k, int n,
                    float* out) {
  constexpr int kRows = 4;
  int r = 0;
  for (; r + kRows <= m; r += kRows) {
    float* o0 = out + static_cast<std::size_t>(r) * n;
    float* o1 = o0 + n;
    float* o2 = o1 + n;
    float* o3 = o2 + n;
    std::fill(o0, o0 + n, bias[r]);
    std::fill(o1, o1 + n, bias[r + 1]);
    std::fill(o2, o2 + n, bias[r + 2]);
    std::fill(o3, o3 + n, bias[r + 3]);
    const float* w0 = w + static_cast<std::size_t>(r) * k;
    const float* w1 = w0 + k;
    const float* w2 = w1 + k;
    const float* w3 = w2 + k;
    for (int t = 0; t < k; ++t) {
      const float* c = col + static_cast<std::size_t>(t) * n;
      const float a0 = w0[t], a1 = w1[t], a2 = w2[t], a3 = w3[t];
      for (int j = 0; j < n; ++j) {
        const float cj = c[j];
        o0[j] += a0 * cj;
        o1[j] += a1 * cj;
        o2[j] += a2 * cj;
        o3[j] += a3 * cj;
      }
    }
  }
  for (; r < m; ++r) {
    float* o = out + static_cast<std::size_t>(r) * n;
    std::fill(o, o + n, bias[r]);
    const float* wr = w + static_cast<std::size_t>(r) * k;
    for (int t = 0; t < k; ++t) {
      const float* c = col + static_cast<std::size_t>(t) * n;
      const float a = wr[t];
      for (int j = 0; j < n; ++j) o[j] += a * c[j];
    }
  }
  const std::size_t total = static_cast<std::size_t>(m) * n;
  for (std::size_t i = 0; i < total; ++i) out[i] = std::max(out[i], 0.0f);
}

void conv_gemm_relu_backward(const float* w, const float* col, const float* act, float* dact,
                             int m, int k, int n, float* dw, float* db, float* dcol) {
  const std::size_t total = static_cast<std::size_t>(m) * n;
  for (std::size_t i = 0; i < total; ++i) {
    if (!(act[i] > 0.0f)) dact[i] = 0.0f;
  }
  if (dw != nullptr) {
    // dw[r][t] += sum_j dz[r][j] col[t][j], computed through col^T so the
    // inner loop runs contiguously over t.
    std::vector<float> colt(static_cast<std::size_t>(n) * k);
    for (int t = 0; t < k; ++t)
      for (int j = 0; j < n; ++j) colt[static_cast<std::size_t>(j) * k + t] = col[static_cast<std::size_t>(t) * n + j];
    for (int r = 0; r < m; ++r) {
      const float* dz = dact + static_cast<std::size_t>(r) * n;
      float* dwr = dw + static_cast<std::size_t>(r) * k;
      float bsum = 0.0f;
      for (int j = 0; j < n; ++j) {
        const float g = dz[j];
        bsum += g;
        if (g == 0.0f) continue;
        const float* ct = colt.data() + static_cast<std::size_t>(j) * k;
        for (int t = 0; t < k; ++t) dwr[t] += g * ct[t];
      }
      db[r] += bsum;
    }
  }
  if (dcol != nullptr) {
    std::fill(dcol, dcol + static_cast<std::size_t>(k) * n, 0.0f);
    for (int r = 0; r < m; ++r) {
      const float* dz = dact + static_cast<std::size_t>(r) * n;
      const float* wr = w + static_cast<std::size_t>(r) * k;
      for (int t = 0; t < k; ++t) {
        const float a = wr[t];
        if (a == 0.0f) continue;
        float* dc = dcol + static_cast<std::size_t>(t) * n;
        for (int j = 0; j < n; ++j) dc[j] += a * dz[j];
      }
    }
  }
}

}  // namespace raw::kernels
