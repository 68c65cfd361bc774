#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "geoembed/ops.hpp"
#include "geoembed/tensor.hpp"

namespace geoembed {

enum class ActivationKind { Tanh, Relu, Sigmoid };

std::string_view to_string(ActivationKind kind);
ActivationKind activation_from_string(std::string_view name);

struct ConvSpec {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 1;
  std::size_t out_channels = 1;
  bool bias = true;
};

/// Transpose of a ConvSpec with the same kernel, stride and padding.
struct TransposeConvSpec {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 1;
  std::size_t out_channels = 1;
  bool bias = true;
};

struct MaxPoolSpec {
  std::size_t kernel = 2;
  std::size_t stride = 2;
};

/// Consumes the argmax indices saved by the MaxPool layer named `pool`.
/// `output_height`/`output_width` restate that pool's input size so shapes
/// can be inferred without the paired network.
struct MaxUnpoolSpec {
  std::string pool;
  std::size_t output_height = 0;
  std::size_t output_width = 0;
};

struct DenseSpec {
  std::size_t out_dim = 1;
};

struct BatchNormSpec {
  double momentum = 0.1;
  double eps = 1e-5;
};

struct ActivationSpec {
  ActivationKind kind = ActivationKind::Relu;
};

/// [h, w, c] -> channel-major vector (channel 0 row-major, then channel 1, ...).
struct UnrollSpec {};

/// Inverse of UnrollSpec.
struct RollSpec {
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t channels = 1;
};

using LayerSpec = std::variant<ConvSpec, TransposeConvSpec, MaxPoolSpec, MaxUnpoolSpec,
                               DenseSpec, BatchNormSpec, ActivationSpec, UnrollSpec, RollSpec>;

std::string layer_kind(const LayerSpec& spec);

struct NamedLayer {
  std::string name;
  LayerSpec spec;
};

/// One row of the shape/parameter audit of a NetworkSpec.
struct LayerAudit {
  std::string name;
  std::string kind;
  Shape output_shape;  // per sample, no batch axis
  std::size_t feature_size = 0;
  std::size_t parameters = 0;
};

/// Ordered layer list over a per-sample input shape ([h, w, c] or [features]).
struct NetworkSpec {
  Shape input_shape;
  std::vector<NamedLayer> layers;

  NetworkSpec& add(std::string name, LayerSpec spec);

  /// Shape inference and exact parameter counts; throws ShapeMismatch when
  /// consecutive layers do not compose.
  std::vector<LayerAudit> audit() const;
  std::size_t parameter_count() const;
  Shape output_shape() const;
};

enum class Mode { Train, Inference };

struct InitConfig {
  double weight_std = 1e-3;
  std::uint64_t seed = 1;
};

/// View of one trainable array and its gradient accumulator.
struct Parameter {
  std::string name;
  Shape shape;
  std::span<double> value;
  std::span<double> grad;
};

/// Non-trainable state that still belongs in a checkpoint.
struct Buffer {
  std::string name;
  std::span<double> value;
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& input, Mode mode) = 0;
  virtual Tensor backward(const Tensor& grad_output) = 0;
  virtual std::vector<Parameter> parameters() { return {}; }
  virtual std::vector<Buffer> buffers() { return {}; }
};

class MaxPoolLayer;

/// Materialized network: owns parameters and per-pass caches. Move-only.
class Network {
 public:
  Network(NetworkSpec spec, const InitConfig& init);
  Network(Network&&) noexcept;
  Network& operator=(Network&&) noexcept;
  ~Network();

  const NetworkSpec& spec() const noexcept { return spec_; }

  /// input is batched: [n, ...input_shape].
  Tensor forward(const Tensor& input, Mode mode);
  /// Accumulates parameter gradients and returns the gradient of the input.
  Tensor backward(const Tensor& grad_output);

  std::vector<Parameter> parameters();
  std::vector<Buffer> buffers();
  void zero_grad();
  std::size_t parameter_count() const { return spec_.parameter_count(); }

  /// Wires every MaxUnpool layer to the MaxPool layer it names, searching
  /// this network first and then `other`.
  void bind_unpooling(Network* other = nullptr);

  std::vector<std::vector<double>> snapshot();
  void restore(const std::vector<std::vector<double>>& state);

 private:
  MaxPoolLayer* find_pool(const std::string& name);

  NetworkSpec spec_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

Tensor activation_forward(const Tensor& input, ActivationKind kind);

}  // namespace geoembed
