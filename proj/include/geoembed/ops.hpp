#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "geoembed/tensor.hpp"

namespace geoembed {

/// Geometry shared by a convolution and its transpose.
struct ConvGeometry {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 0;
  // Flipped kernel (true discrete convolution) is the contract; false
  // switches to plain cross-correlation for debugging.
  bool flip_kernel = true;
};

/// o = floor((i + 2p - k) / s) + 1
std::size_t conv_output_size(std::size_t input, const ConvGeometry& g);
/// Spatial size produced by the transpose of a convolution: (o - 1)s + k - 2p.
std::size_t transpose_conv_output_size(std::size_t input, const ConvGeometry& g);
/// o = floor((i - k) / s) + 1
std::size_t pool_output_size(std::size_t input, std::size_t kernel, std::size_t stride);

// Kernels are stored [c_out][k][k][c_in] for a forward convolution. A
// transpose convolution reuses the weights of the convolution it inverts,
// so its kernel is [c_in_t][k][k][c_out_t].

/// input [n, h, w, c_in] -> [n, o, o, c_out]. An empty bias means no bias.
Tensor conv2d(const Tensor& input, std::span<const double> kernel,
              std::span<const double> bias, std::size_t out_channels,
              const ConvGeometry& g);

/// Gradient of conv2d with respect to its input, given the input spatial size.
/// This is the transpose convolution without bias.
Tensor conv2d_backward_input(const Tensor& grad_out, std::span<const double> kernel,
                             std::size_t in_channels, std::size_t in_h, std::size_t in_w,
                             const ConvGeometry& g);

/// Accumulates kernel (and bias, when non-empty) gradients of conv2d.
void conv2d_backward_params(const Tensor& input, const Tensor& grad_out,
                            std::span<double> kernel_grad, std::span<double> bias_grad,
                            const ConvGeometry& g);

/// input [n, h, w, c_in] -> [n, (h-1)s+k-2p, ..., c_out]; kernel [c_in][k][k][c_out].
Tensor transpose_conv2d(const Tensor& input, std::span<const double> kernel,
                        std::span<const double> bias, std::size_t out_channels,
                        const ConvGeometry& g);

/// Saved argmax positions of a pooling pass: for every output cell, the flat
/// spatial index (row * width + col) of the winning input cell.
struct PoolIndices {
  Shape input_shape;
  Shape output_shape;
  std::vector<std::uint32_t> argmax;
};

/// Max pooling with no padding; ties go to the first cell in row-major window order.
Tensor max_pool(const Tensor& input, std::size_t kernel, std::size_t stride,
                PoolIndices& indices);

/// Scatter every value to its saved argmax cell; all other cells are zero.
Tensor max_unpool(const Tensor& input, const PoolIndices& indices);

/// Gradient of max_unpool: gather the output gradient at the saved cells.
Tensor max_unpool_backward(const Tensor& grad_out, const PoolIndices& indices);

}  // namespace geoembed
