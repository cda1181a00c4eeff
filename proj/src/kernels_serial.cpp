#include <cstddef>

#include "salprune/kernels.hpp"

namespace salprune::kernels::serial {
namespace {

std::size_t at4(int a, int b, int c, int e, int B, int C, int E) {
  return ((static_cast<std::size_t>(a) * B + b) * C + c) * E + e;
}

}  // namespace

void conv3x3_forward(const ConvDims& d, std::span<const double> x, std::span<const double> weight,
                     std::span<const double> bias, std::span<double> y) {
  for (int n = 0; n < d.batch; ++n)
    for (int f = 0; f < d.out_channels; ++f)
      for (int r = 0; r < d.height; ++r)
        for (int c = 0; c < d.width; ++c) {
          double s = bias[f];
          for (int ch = 0; ch < d.in_channels; ++ch)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int rr = r + ky - 1, cc = c + kx - 1;
                if (rr < 0 || rr >= d.height || cc < 0 || cc >= d.width) continue;
                s += weight[at4(f, ch, ky, kx, d.in_channels, 3, 3)] *
                     x[at4(n, ch, rr, cc, d.in_channels, d.height, d.width)];
              }
          y[at4(n, f, r, c, d.out_channels, d.height, d.width)] = s;
        }
}

void conv3x3_backward_input(const ConvDims& d, std::span<const double> dy,
                            std::span<const double> weight, std::span<double> dx) {
  for (auto& v : dx) v = 0.0;
  for (int n = 0; n < d.batch; ++n)
    for (int f = 0; f < d.out_channels; ++f)
      for (int r = 0; r < d.height; ++r)
        for (int c = 0; c < d.width; ++c) {
          const double g = dy[at4(n, f, r, c, d.out_channels, d.height, d.width)];
          for (int ch = 0; ch < d.in_channels; ++ch)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int rr = r + ky - 1, cc = c + kx - 1;
                if (rr < 0 || rr >= d.height || cc < 0 || cc >= d.width) continue;
                dx[at4(n, ch, rr, cc, d.in_channels, d.height, d.width)] +=
                    g * weight[at4(f, ch, ky, kx, d.in_channels, 3, 3)];
              }
        }
}

void conv3x3_backward_params(const ConvDims& d, std::span<const double> x,
                             std::span<const double> dy, std::span<double> dweight,
                             std::span<double> dbias) {
  for (auto& v : dweight) v = 0.0;
  for (auto& v : dbias) v = 0.0;
  for (int n = 0; n < d.batch; ++n)
    for (int f = 0; f < d.out_channels; ++f)
      for (int r = 0; r < d.height; ++r)
        for (int c = 0; c < d.width; ++c) {
          const double g = dy[at4(n, f, r, c, d.out_channels, d.height, d.width)];
          dbias[f] += g;
          for (int ch = 0; ch < d.in_channels; ++ch)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int rr = r + ky - 1, cc = c + kx - 1;
                if (rr < 0 || rr >= d.height || cc < 0 || cc >= d.width) continue;
                dweight[at4(f, ch, ky, kx, d.in_channels, 3, 3)] +=
                    g * x[at4(n, ch, rr, cc, d.in_channels, d.height, d.width)];
              }
        }
}

void dense_forward(const DenseDims& d, std::span<const double> x, std::span<const double> weight,
                   std::span<const double> bias, std::span<double> y) {
  for (int n = 0; n < d.batch; ++n)
    for (int o = 0; o < d.out_features; ++o) {
      double s = bias[o];
      for (int i = 0; i < d.in_features; ++i)
        s += weight[static_cast<std::size_t>(o) * d.in_features + i] *
             x[static_cast<std::size_t>(n) * d.in_features + i];
      y[static_cast<std::size_t>(n) * d.out_features + o] = s;
    }
}

void dense_backward_input(const DenseDims& d, std::span<const double> dy,
                          std::span<const double> weight, std::span<double> dx) {
  for (int n = 0; n < d.batch; ++n)
    for (int i = 0; i < d.in_features; ++i) {
      double s = 0.0;
      for (int o = 0; o < d.out_features; ++o)
        s += dy[static_cast<std::size_t>(n) * d.out_features + o] *
             weight[static_cast<std::size_t>(o) * d.in_features + i];
      dx[static_cast<std::size_t>(n) * d.in_features + i] = s;
    }
}

void dense_backward_params(const DenseDims& d, std::span<const double> x,
                           std::span<const double> dy, std::span<double> dweight,
                           std::span<double> dbias) {
  for (int o = 0; o < d.out_features; ++o) {
    double sb = 0.0;
    for (int n = 0; n < d.batch; ++n) sb += dy[static_cast<std::size_t>(n) * d.out_features + o];
    dbias[o] = sb;
    for (int i = 0; i < d.in_features; ++i) {
      double s = 0.0;
      for (int n = 0; n < d.batch; ++n)
        s += dy[static_cast<std::size_t>(n) * d.out_features + o] *
             x[static_cast<std::size_t>(n) * d.in_features + i];
      dweight[static_cast<std::size_t>(o) * d.in_features + i] = s;
    }
  }
}

void max_pool2_forward(const PoolDims& d, std::span<const double> x, std::span<double> y,
                       std::span<std::int32_t> argmax) {
  const int oh = d.height / 2, ow = d.width / 2;
  for (int p = 0; p < d.planes; ++p)
    for (int r = 0; r < oh; ++r)
      for (int c = 0; c < ow; ++c) {
        int best = -1;
        double bv = 0.0;
        for (int dr = 0; dr < 2; ++dr)
          for (int dc = 0; dc < 2; ++dc) {
            const int idx = (p * d.height + 2 * r + dr) * d.width + 2 * c + dc;
            if (best < 0 || x[idx] > bv) {
              best = idx;
              bv = x[idx];
            }
          }
        const int o = (p * oh + r) * ow + c;
        y[o] = bv;
        argmax[o] = best;
      }
}

}  // namespace salprune::kernels::serial
