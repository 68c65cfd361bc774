#include "geoembed/ops.hpp"

#include <algorithm>
#include <string>

#include "geoembed/error.hpp"

namespace geoembed {

namespace {

void require_rank4(const Tensor& t, const char* what) {
  if (t.rank() != 4) {
    fail(ErrorCode::ShapeMismatch, std::string(what) + " expects a [n,h,w,c] tensor, got " +
                                       shape_string(t.shape()));
  }
}

// Reorders a [a][k][k][b] kernel so that spatial taps run backwards. Applying
// this once turns the flipped convolution into a plain cross-correlation.
std::vector<double> oriented_kernel(std::span<const double> kernel, std::size_t outer,
                                    std::size_t k, std::size_t inner, bool flip) {
  std::vector<double> out(kernel.begin(), kernel.end());
  if (!flip) return out;
  for (std::size_t a = 0; a < outer; ++a) {
    for (std::size_t m = 0; m < k; ++m) {
      for (std::size_t q = 0; q < k; ++q) {
        const double* src = kernel.data() + ((a * k + (k - 1 - m)) * k + (k - 1 - q)) * inner;
        double* dst = out.data() + ((a * k + m) * k + q) * inner;
        for (std::size_t b = 0; b < inner; ++b) dst[b] = src[b];
      }
    }
  }
  return out;
}

}  // namespace

std::size_t conv_output_size(std::size_t input, const ConvGeometry& g) {
  if (g.kernel == 0 || g.stride == 0 || input + 2 * g.pad < g.kernel) {
    fail(ErrorCode::ShapeMismatch,
         "convolution kernel " + std::to_string(g.kernel) + " does not fit input " +
             std::to_string(input) + " with padding " + std::to_string(g.pad));
  }
  return (input + 2 * g.pad - g.kernel) / g.stride + 1;
}

std::size_t transpose_conv_output_size(std::size_t input, const ConvGeometry& g) {
  if (g.kernel == 0 || g.stride == 0 || input == 0 ||
      (input - 1) * g.stride + g.kernel <= 2 * g.pad) {
    fail(ErrorCode::ShapeMismatch, "transpose convolution produces an empty output");
  }
  return (input - 1) * g.stride + g.kernel - 2 * g.pad;
}

std::size_t pool_output_size(std::size_t input, std::size_t kernel, std::size_t stride) {
  if (kernel == 0 || stride == 0 || input < kernel) {
    fail(ErrorCode::ShapeMismatch, "pooling window " + std::to_string(kernel) +
                                       " larger than input " + std::to_string(input));
  }
  return (input - kernel) / stride + 1;
}

Tensor conv2d(const Tensor& input, std::span<const double> kernel,
              std::span<const double> bias, std::size_t out_channels,
              const ConvGeometry& g) {
  require_rank4(input, "conv2d");
  const std::size_t n = input.dim(0), h = input.dim(1), w = input.dim(2), cin = input.dim(3);
  const std::size_t k = g.kernel;
  if (kernel.size() != out_channels * k * k * cin) {
    fail(ErrorCode::ShapeMismatch, "conv2d kernel size does not match channels");
  }
  if (!bias.empty() && bias.size() != out_channels) {
    fail(ErrorCode::ShapeMismatch, "conv2d bias size does not match output channels");
  }
  const std::size_t oh = conv_output_size(h, g), ow = conv_output_size(w, g);
  const auto kf = oriented_kernel(kernel, out_channels, k, cin, g.flip_kernel);

  Tensor out({n, oh, ow, out_channels});
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        double* o = &out.at(b, i, j, 0);
        for (std::size_t c = 0; c < out_channels; ++c) o[c] = bias.empty() ? 0.0 : bias[c];
        for (std::size_t m = 0; m < k; ++m) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(i * g.stride + m) - pad;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t q = 0; q < k; ++q) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(j * g.stride + q) - pad;
            if (x < 0 || x >= static_cast<std::ptrdiff_t>(w)) continue;
            const double* src = input.data() + input.offset(b, static_cast<std::size_t>(y),
                                          static_cast<std::size_t>(x), 0);
            for (std::size_t c = 0; c < out_channels; ++c) {
              const double* kk = kf.data() + ((c * k + m) * k + q) * cin;
              double acc = 0.0;
              for (std::size_t l = 0; l < cin; ++l) acc += src[l] * kk[l];
              o[c] += acc;
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor conv2d_backward_input(const Tensor& grad_out, std::span<const double> kernel,
                             std::size_t in_channels, std::size_t in_h, std::size_t in_w,
                             const ConvGeometry& g) {
  require_rank4(grad_out, "conv2d_backward_input");
  const std::size_t n = grad_out.dim(0), oh = grad_out.dim(1), ow = grad_out.dim(2),
                    cout = grad_out.dim(3);
  const std::size_t k = g.kernel;
  if (kernel.size() != cout * k * k * in_channels) {
    fail(ErrorCode::ShapeMismatch, "transpose kernel size does not match channels");
  }
  if (conv_output_size(in_h, g) != oh || conv_output_size(in_w, g) != ow) {
    fail(ErrorCode::ShapeMismatch, "transpose convolution input does not match geometry");
  }
  const auto kf = oriented_kernel(kernel, cout, k, in_channels, g.flip_kernel);
  Tensor grad_in({n, in_h, in_w, in_channels});
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        const double* go = grad_out.data() + grad_out.offset(b, i, j, 0);
        for (std::size_t m = 0; m < k; ++m) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(i * g.stride + m) - pad;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(in_h)) continue;
          for (std::size_t q = 0; q < k; ++q) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(j * g.stride + q) - pad;
            if (x < 0 || x >= static_cast<std::ptrdiff_t>(in_w)) continue;
            double* dst = &grad_in.at(b, static_cast<std::size_t>(y),
                                      static_cast<std::size_t>(x), 0);
            for (std::size_t c = 0; c < cout; ++c) {
              const double gc = go[c];
              if (gc == 0.0) continue;
              const double* kk = kf.data() + ((c * k + m) * k + q) * in_channels;
              for (std::size_t l = 0; l < in_channels; ++l) dst[l] += gc * kk[l];
            }
          }
        }
      }
    }
  }
  return grad_in;
}

void conv2d_backward_params(const Tensor& input, const Tensor& grad_out,
                            std::span<double> kernel_grad, std::span<double> bias_grad,
                            const ConvGeometry& g) {
  require_rank4(input, "conv2d_backward_params");
  require_rank4(grad_out, "conv2d_backward_params");
  const std::size_t n = input.dim(0), h = input.dim(1), w = input.dim(2), cin = input.dim(3);
  const std::size_t oh = grad_out.dim(1), ow = grad_out.dim(2), cout = grad_out.dim(3);
  const std::size_t k = g.kernel;
  if (kernel_grad.size() != cout * k * k * cin) {
    fail(ErrorCode::ShapeMismatch, "kernel gradient size does not match channels");
  }
  // Gradients are accumulated in the cross-correlation orientation, then
  // mapped back onto the stored kernel layout.
  std::vector<double> gk(kernel_grad.size(), 0.0);
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        const double* go = grad_out.data() + grad_out.offset(b, i, j, 0);
        if (!bias_grad.empty()) {
          for (std::size_t c = 0; c < cout; ++c) bias_grad[c] += go[c];
        }
        for (std::size_t m = 0; m < k; ++m) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(i * g.stride + m) - pad;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t q = 0; q < k; ++q) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(j * g.stride + q) - pad;
            if (x < 0 || x >= static_cast<std::ptrdiff_t>(w)) continue;
            const double* src = input.data() + input.offset(b, static_cast<std::size_t>(y),
                                          static_cast<std::size_t>(x), 0);
            for (std::size_t c = 0; c < cout; ++c) {
              const double gc = go[c];
              if (gc == 0.0) continue;
              double* dst = gk.data() + ((c * k + m) * k + q) * cin;
              for (std::size_t l = 0; l < cin; ++l) dst[l] += gc * src[l];
            }
          }
        }
      }
    }
  }
  // The flip is an involution, so the same reordering maps gradients back.
  const auto oriented = oriented_kernel(gk, cout, k, cin, g.flip_kernel);
  for (std::size_t i = 0; i < kernel_grad.size(); ++i) kernel_grad[i] += oriented[i];
}

Tensor transpose_conv2d(const Tensor& input, std::span<const double> kernel,
                        std::span<const double> bias, std::size_t out_channels,
                        const ConvGeometry& g) {
  require_rank4(input, "transpose_conv2d");
  if (!bias.empty() && bias.size() != out_channels) {
    fail(ErrorCode::ShapeMismatch, "transpose_conv2d bias size does not match output channels");
  }
  const std::size_t oh = transpose_conv_output_size(input.dim(1), g);
  const std::size_t ow = transpose_conv_output_size(input.dim(2), g);
  Tensor out = conv2d_backward_input(input, kernel, out_channels, oh, ow, g);
  if (!bias.empty()) {
    double* v = out.data();
    for (std::size_t i = 0; i < out.size(); i += out_channels) {
      for (std::size_t c = 0; c < out_channels; ++c) v[i + c] += bias[c];
    }
  }
  return out;
}

Tensor max_pool(const Tensor& input, std::size_t kernel, std::size_t stride,
                PoolIndices& indices) {
  require_rank4(input, "max_pool");
  const std::size_t n = input.dim(0), h = input.dim(1), w = input.dim(2), c = input.dim(3);
  const std::size_t oh = pool_output_size(h, kernel, stride);
  const std::size_t ow = pool_output_size(w, kernel, stride);
  Tensor out({n, oh, ow, c});
  indices.input_shape = input.shape();
  indices.output_shape = out.shape();
  indices.argmax.assign(out.size(), 0);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          std::size_t best_y = i * stride, best_x = j * stride;
          double best = input.at(b, best_y, best_x, ch);
          for (std::size_t m = 0; m < kernel; ++m) {
            for (std::size_t q = 0; q < kernel; ++q) {
              const std::size_t y = i * stride + m, x = j * stride + q;
              const double v = input.at(b, y, x, ch);
              if (v > best) {
                best = v;
                best_y = y;
                best_x = x;
              }
            }
          }
          const std::size_t slot = ((b * oh + i) * ow + j) * c + ch;
          out[slot] = best;
          indices.argmax[slot] = static_cast<std::uint32_t>(best_y * w + best_x);
        }
      }
    }
  }
  return out;
}

Tensor max_unpool(const Tensor& input, const PoolIndices& indices) {
  if (input.shape() != indices.output_shape) {
    fail(ErrorCode::ShapeMismatch, "max_unpool input " + shape_string(input.shape()) +
                                       " does not match saved pooling output " +
                                       shape_string(indices.output_shape));
  }
  Tensor out(indices.input_shape);
  const std::size_t h = indices.input_shape[1], w = indices.input_shape[2],
                    c = indices.input_shape[3];
  const std::size_t per_sample_out = input.size() / std::max<std::size_t>(input.dim(0), 1);
  for (std::size_t slot = 0; slot < input.size(); ++slot) {
    const std::size_t b = slot / per_sample_out;
    const std::size_t ch = slot % c;
    out[(b * h * w + indices.argmax[slot]) * c + ch] += input[slot];
  }
  return out;
}

Tensor max_unpool_backward(const Tensor& grad_out, const PoolIndices& indices) {
  if (grad_out.shape() != indices.input_shape) {
    fail(ErrorCode::ShapeMismatch, "max_unpool gradient shape mismatch");
  }
  Tensor grad_in(indices.output_shape);
  const std::size_t h = indices.input_shape[1], w = indices.input_shape[2],
                    c = indices.input_shape[3];
  const std::size_t per_sample_out =
      grad_in.size() / std::max<std::size_t>(grad_in.dim(0), 1);
  for (std::size_t slot = 0; slot < grad_in.size(); ++slot) {
    const std::size_t b = slot / per_sample_out;
    const std::size_t ch = slot % c;
    grad_in[slot] = grad_out[(b * h * w + indices.argmax[slot]) * c + ch];
  }
  return grad_in;
}

}  // namespace geoembed
