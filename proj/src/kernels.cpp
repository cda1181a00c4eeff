#include "salprune/kernels.hpp"

#include <algorithm>
#include <cstddef>
#include <vector>

namespace salprune::kernels {
namespace {

using index_t = std::ptrdiff_t;

// Copies planes [count, h, w] into zero-bordered planes [count, h+2, w+2].
void pad_planes(const double* src, int count, int h, int w, double* dst) {
  const int pw = w + 2;
  const index_t padded = static_cast<index_t>(h + 2) * pw;
  std::fill(dst, dst + count * padded, 0.0);
  for (int p = 0; p < count; ++p) {
    const double* s = src + static_cast<index_t>(p) * h * w;
    double* t = dst + p * padded + pw + 1;
    for (int y = 0; y < h; ++y) std::copy(s + y * w, s + (y + 1) * w, t + y * pw);
  }
}

}  // namespace

void conv3x3_forward(const ConvDims& d, std::span<const double> x, std::span<const double> weight,
                     std::span<const double> bias, std::span<double> y) {
  const int C = d.in_channels, F = d.out_channels, H = d.height, W = d.width;
  const int PW = W + 2;
  const index_t plane = static_cast<index_t>(H) * W;
  const index_t padded = static_cast<index_t>(H + 2) * PW;

#pragma omp parallel
  {
    std::vector<double> pad(static_cast<std::size_t>(C * padded));
    std::vector<double> acc(static_cast<std::size_t>(W));
#pragma omp for schedule(static)
    for (int n = 0; n < d.batch; ++n) {
      pad_planes(x.data() + n * C * plane, C, H, W, pad.data());
      for (int f = 0; f < F; ++f) {
        double* out = y.data() + (static_cast<index_t>(n) * F + f) * plane;
        const double* kf = weight.data() + static_cast<index_t>(f) * C * 9;
        for (int r = 0; r < H; ++r) {
          double* a = acc.data();
          std::fill(a, a + W, bias[static_cast<std::size_t>(f)]);
          for (int c = 0; c < C; ++c) {
            const double* k = kf + c * 9;
            const double* p = pad.data() + c * padded + static_cast<index_t>(r) * PW;
            for (int ky = 0; ky < 3; ++ky, p += PW) {
              const double k0 = k[ky * 3], k1 = k[ky * 3 + 1], k2 = k[ky * 3 + 2];
#pragma omp simd
              for (int i = 0; i < W; ++i) a[i] += k0 * p[i] + k1 * p[i + 1] + k2 * p[i + 2];
            }
          }
          std::copy(a, a + W, out + static_cast<index_t>(r) * W);
        }
      }
    }
  }
}

void conv3x3_backward_input(const ConvDims& d, std::span<const double> dy,
                            std::span<const double> weight, std::span<double> dx) {
  const int C = d.in_channels, F = d.out_channels, H = d.height, W = d.width;
  const int PW = W + 2;
  const index_t plane = static_cast<index_t>(H) * W;
  const index_t padded = static_cast<index_t>(H + 2) * PW;

#pragma omp parallel
  {
    std::vector<double> pad(static_cast<std::size_t>(F * padded));
    std::vector<double> acc(static_cast<std::size_t>(W));
#pragma omp for schedule(static)
    for (int n = 0; n < d.batch; ++n) {
      pad_planes(dy.data() + n * F * plane, F, H, W, pad.data());
      for (int c = 0; c < C; ++c) {
        double* out = dx.data() + (static_cast<index_t>(n) * C + c) * plane;
        for (int r = 0; r < H; ++r) {
          double* a = acc.data();
          std::fill(a, a + W, 0.0);
          for (int f = 0; f < F; ++f) {
            const double* k = weight.data() + (static_cast<index_t>(f) * C + c) * 9;
            // dx[r][i] += k[ky][kx] * dy[r - ky + 1][i - kx + 1] = k[ky][kx] * P[r + 2 - ky][i + 2 - kx]
            const double* base = pad.data() + f * padded;
            for (int ky = 0; ky < 3; ++ky) {
              const double* p = base + static_cast<index_t>(r + 2 - ky) * PW;
              const double k0 = k[ky * 3], k1 = k[ky * 3 + 1], k2 = k[ky * 3 + 2];
#pragma omp simd
              for (int i = 0; i < W; ++i) a[i] += k0 * p[i + 2] + k1 * p[i + 1] + k2 * p[i];
            }
          }
          std::copy(a, a + W, out + static_cast<index_t>(r) * W);
        }
      }
    }
  }
}

void conv3x3_backward_params(const ConvDims& d, std::span<const double> x,
                             std::span<const double> dy, std::span<double> dweight,
                             std::span<double> dbias) {
  const int C = d.in_channels, F = d.out_channels, H = d.height, W = d.width;
  const int PW = W + 2;
  const index_t plane = static_cast<index_t>(H) * W;
  const index_t padded = static_cast<index_t>(H + 2) * PW;

  std::vector<double> pad(static_cast<std::size_t>(d.batch) * static_cast<std::size_t>(C * padded));
#pragma omp parallel for schedule(static)
  for (int n = 0; n < d.batch; ++n) {
    pad_planes(x.data() + n * C * plane, C, H, W, pad.data() + static_cast<index_t>(n) * C * padded);
  }

#pragma omp parallel for schedule(static)
  for (int f = 0; f < F; ++f) {
    double bsum = 0.0;
    double* kf = dweight.data() + static_cast<index_t>(f) * C * 9;
    std::fill(kf, kf + C * 9, 0.0);
    for (int n = 0; n < d.batch; ++n) {
      const double* g = dy.data() + (static_cast<index_t>(n) * F + f) * plane;
      double s = 0.0;
#pragma omp simd reduction(+ : s)
      for (index_t i = 0; i < plane; ++i) s += g[i];
      bsum += s;
      const double* xs = pad.data() + static_cast<index_t>(n) * C * padded;
      for (int c = 0; c < C; ++c) {
        const double* xc = xs + c * padded;
        double* k = kf + c * 9;
        for (int ky = 0; ky < 3; ++ky) {
          double s0 = 0.0, s1 = 0.0, s2 = 0.0;
          for (int r = 0; r < H; ++r) {
            const double* gr = g + static_cast<index_t>(r) * W;
            const double* p = xc + static_cast<index_t>(r + ky) * PW;
#pragma omp simd reduction(+ : s0, s1, s2)
            for (int i = 0; i < W; ++i) {
              s0 += gr[i] * p[i];
              s1 += gr[i] * p[i + 1];
              s2 += gr[i] * p[i + 2];
            }
          }
          k[ky * 3] += s0;
          k[ky * 3 + 1] += s1;
          k[ky * 3 + 2] += s2;
        }
      }
    }
    dbias[static_cast<std::size_t>(f)] = bsum;
  }
}

void dense_forward(const DenseDims& d, std::span<const double> x, std::span<const double> weight,
                   std::span<const double> bias, std::span<double> y) {
  const int I = d.in_features, O = d.out_features;
  // Four samples share each weight row load.
  const int blocks = (d.batch + 3) / 4;
#pragma omp parallel for schedule(static)
  for (int blk = 0; blk < blocks; ++blk) {
    const int n0 = blk * 4;
    const int count = std::min(4, d.batch - n0);
    const double* x0 = x.data() + static_cast<index_t>(n0) * I;
    const double* x1 = count > 1 ? x0 + I : x0;
    const double* x2 = count > 2 ? x0 + 2 * I : x0;
    const double* x3 = count > 3 ? x0 + 3 * I : x0;
    for (int o = 0; o < O; ++o) {
      const double* w = weight.data() + static_cast<index_t>(o) * I;
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
#pragma omp simd reduction(+ : s0, s1, s2, s3)
      for (int i = 0; i < I; ++i) {
        s0 += w[i] * x0[i];
        s1 += w[i] * x1[i];
        s2 += w[i] * x2[i];
        s3 += w[i] * x3[i];
      }
      const double b = bias[static_cast<std::size_t>(o)];
      const double sums[4] = {s0, s1, s2, s3};
      for (int k = 0; k < count; ++k) y[static_cast<std::size_t>((n0 + k) * O + o)] = sums[k] + b;
    }
  }
}

void dense_backward_input(const DenseDims& d, std::span<const double> dy,
                          std::span<const double> weight, std::span<double> dx) {
  const int I = d.in_features, O = d.out_features;
#pragma omp parallel for schedule(static)
  for (int n = 0; n < d.batch; ++n) {
    double* out = dx.data() + static_cast<index_t>(n) * I;
    std::fill(out, out + I, 0.0);
    const double* g = dy.data() + static_cast<index_t>(n) * O;
    for (int o = 0; o < O; ++o) {
      const double go = g[o];
      if (go == 0.0) continue;
      const double* w = weight.data() + static_cast<index_t>(o) * I;
#pragma omp simd
      for (int i = 0; i < I; ++i) out[i] += go * w[i];
    }
  }
}

void dense_backward_params(const DenseDims& d, std::span<const double> x,
                           std::span<const double> dy, std::span<double> dweight,
                           std::span<double> dbias) {
  const int I = d.in_features, O = d.out_features;
#pragma omp parallel for schedule(static)
  for (int o = 0; o < O; ++o) {
    double* row = dweight.data() + static_cast<index_t>(o) * I;
    std::fill(row, row + I, 0.0);
    double bsum = 0.0;
    for (int n = 0; n < d.batch; ++n) {
      const double go = dy[static_cast<std::size_t>(n * O + o)];
      bsum += go;
      if (go == 0.0) continue;
      const double* xs = x.data() + static_cast<index_t>(n) * I;
#pragma omp simd
      for (int i = 0; i < I; ++i) row[i] += go * xs[i];
    }
    dbias[static_cast<std::size_t>(o)] = bsum;
  }
}

void max_pool2_forward(const PoolDims& d, std::span<const double> x, std::span<double> y,
                       std::span<std::int32_t> argmax) {
  const int H = d.height, W = d.width, OH = H / 2, OW = W / 2;
#pragma omp parallel for schedule(static)
  for (int p = 0; p < d.planes; ++p) {
    const index_t in_base = static_cast<index_t>(p) * H * W;
    const index_t out_base = static_cast<index_t>(p) * OH * OW;
    for (int r = 0; r < OH; ++r) {
      for (int c = 0; c < OW; ++c) {
        const index_t i00 = in_base + static_cast<index_t>(2 * r) * W + 2 * c;
        const index_t cand[4] = {i00, i00 + 1, i00 + W, i00 + W + 1};
        index_t best = cand[0];
        double bv = x[static_cast<std::size_t>(best)];
        for (int k = 1; k < 4; ++k) {
          const double v = x[static_cast<std::size_t>(cand[k])];
          if (v > bv) {
            bv = v;
            best = cand[k];
          }
        }
        const auto o = static_cast<std::size_t>(out_base + static_cast<index_t>(r) * OW + c);
        y[o] = bv;
        argmax[o] = static_cast<std::int32_t>(best);
      }
    }
  }
}

void max_pool2_backward(std::span<const double> dy, std::span<const std::int32_t> argmax,
                        std::span<double> dx) {
  std::fill(dx.begin(), dx.end(), 0.0);
  // 2x2/stride-2 windows are disjoint, so every input receives at most one contribution.
  for (std::size_t j = 0; j < dy.size(); ++j) dx[static_cast<std::size_t>(argmax[j])] += dy[j];
}

}  // namespace salprune::kernels
