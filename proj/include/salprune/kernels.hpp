#pragma once

#include <cstdint>
#include <span>

// Compute kernels for the fixed operator set. The functions in `kernels`
// are the production versions: loop orders are arranged for contiguous inner
// loops, and the outer loops are OpenMP-parallel over independent outputs.
// Every reduction runs in a fixed order inside one thread, so results are
// identical for any thread count. `kernels::serial` mirrors the same
// signatures with straightforward nested loops and is kept as the reference
// the optimized kernels are tested and benchmarked against.

namespace salprune::kernels {

// 3x3 convolution, stride 1, zero padding 1. Layouts:
// x [batch, in, h, w], weight [out, in, 3, 3], bias [out], y [batch, out, h, w].
struct ConvDims {
  int batch;
  int in_channels;
  int out_channels;
  int height;
  int width;
};

// Affine layer. x [batch, in], weight [out, in], bias [out], y [batch, out].
struct DenseDims {
  int batch;
  int in_features;
  int out_features;
};

// 2x2 max pool, stride 2. x [planes, h, w] -> y [planes, h/2, w/2]; planes = batch*channels.
struct PoolDims {
  int planes;
  int height;
  int width;
};

void conv3x3_forward(const ConvDims& d, std::span<const double> x, std::span<const double> weight,
                     std::span<const double> bias, std::span<double> y);
// dx = conv^T(dy); overwrites dx.
void conv3x3_backward_input(const ConvDims& d, std::span<const double> dy,
                            std::span<const double> weight, std::span<double> dx);
// dweight, dbias overwritten with sums over the batch.
void conv3x3_backward_params(const ConvDims& d, std::span<const double> x,
                             std::span<const double> dy, std::span<double> dweight,
                             std::span<double> dbias);

void dense_forward(const DenseDims& d, std::span<const double> x, std::span<const double> weight,
                   std::span<const double> bias, std::span<double> y);
void dense_backward_input(const DenseDims& d, std::span<const double> dy,
                          std::span<const double> weight, std::span<double> dx);
void dense_backward_params(const DenseDims& d, std::span<const double> x,
                           std::span<const double> dy, std::span<double> dweight,
                           std::span<double> dbias);

// argmax receives, per output element, the flat input index that won.
// Ties go to the lowest flat index.
void max_pool2_forward(const PoolDims& d, std::span<const double> x, std::span<double> y,
                       std::span<std::int32_t> argmax);
void max_pool2_backward(std::span<const double> dy, std::span<const std::int32_t> argmax,
                        std::span<double> dx);

namespace serial {

void conv3x3_forward(const ConvDims& d, std::span<const double> x, std::span<const double> weight,
                     std::span<const double> bias, std::span<double> y);
void conv3x3_backward_input(const ConvDims& d, std::span<const double> dy,
                            std::span<const double> weight, std::span<double> dx);
void conv3x3_backward_params(const ConvDims& d, std::span<const double> x,
                             std::span<const double> dy, std::span<double> dweight,
                             std::span<double> dbias);
void dense_forward(const DenseDims& d, std::span<const double> x, std::span<const double> weight,
                   std::span<const double> bias, std::span<double> y);
void dense_backward_input(const DenseDims& d, std::span<const double> dy,
                          std::span<const double> weight, std::span<double> dx);
void dense_backward_params(const DenseDims& d, std::span<const double> x,
                           std::span<const double> dy, std::span<double> dweight,
                           std::span<double> dbias);
void max_pool2_forward(const PoolDims& d, std::span<const double> x, std::span<double> y,
                       std::span<std::int32_t> argmax);

}  // namespace serial
}  // namespace salprune::kernels
