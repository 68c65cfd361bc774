#include "geoembed/network.hpp"

#include <cmath>
#include <string>

#include "geoembed/error.hpp"
#include "geoembed/random.hpp"

namespace geoembed {

std::string_view to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::Tanh: return "tanh";
    case ActivationKind::Relu: return "relu";
    case ActivationKind::Sigmoid: return "sigmoid";
  }
  return "?";
}

ActivationKind activation_from_string(std::string_view name) {
  if (name == "tanh") return ActivationKind::Tanh;
  if (name == "relu") return ActivationKind::Relu;
  if (name == "sigmoid") return ActivationKind::Sigmoid;
  fail(ErrorCode::ConfigInvalid, "unknown activation '" + std::string(name) + "'");
}

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void require_sample_rank(const Shape& s, std::size_t rank, const std::string& layer) {
  if (s.size() != rank) {
    fail(ErrorCode::ShapeMismatch, "layer '" + layer + "' expects rank-" + std::to_string(rank) +
                                       " samples, got " + shape_string(s));
  }
}

void require_batch_shape(const Tensor& t, const Shape& sample, const std::string& layer) {
  if (t.rank() != sample.size() + 1 ||
      !std::equal(sample.begin(), sample.end(), t.shape().begin() + 1)) {
    fail(ErrorCode::ShapeMismatch, "layer '" + layer + "' expected samples of shape " +
                                       shape_string(sample) + ", got " +
                                       shape_string(t.shape()));
  }
}

// ---------------------------------------------------------------------------

class ConvLayer final : public Layer {
 public:
  ConvLayer(std::string name, const ConvSpec& spec, Shape in, Rng& rng, double std)
      : name_(std::move(name)), spec_(spec), in_(std::move(in)),
        kernel_(spec.out_channels * spec.kernel * spec.kernel * in_[2]),
        kernel_grad_(kernel_.size(), 0.0),
        bias_(spec.bias ? spec.out_channels : 0, 0.0),
        bias_grad_(bias_.size(), 0.0) {
    for (double& v : kernel_) v = std * rng.normal();
  }

  Tensor forward(const Tensor& input, Mode) override {
    require_batch_shape(input, in_, name_);
    input_ = input;
    return conv2d(input, kernel_, bias_, spec_.out_channels, geometry());
  }

  Tensor backward(const Tensor& grad) override {
    conv2d_backward_params(input_, grad, kernel_grad_, bias_grad_, geometry());
    return conv2d_backward_input(grad, kernel_, in_[2], in_[0], in_[1], geometry());
  }

  std::vector<Parameter> parameters() override {
    std::vector<Parameter> p{{name_ + ".kernel",
                              {spec_.out_channels, spec_.kernel, spec_.kernel, in_[2]},
                              kernel_,
                              kernel_grad_}};
    if (!bias_.empty()) p.push_back({name_ + ".bias", {bias_.size()}, bias_, bias_grad_});
    return p;
  }

 private:
  ConvGeometry geometry() const { return {spec_.kernel, spec_.stride, spec_.pad, true}; }

  std::string name_;
  ConvSpec spec_;
  Shape in_;
  std::vector<double> kernel_, kernel_grad_, bias_, bias_grad_;
  Tensor input_;
};

class TransposeConvLayer final : public Layer {
 public:
  TransposeConvLayer(std::string name, const TransposeConvSpec& spec, Shape in, Rng& rng,
                     double std)
      : name_(std::move(name)), spec_(spec), in_(std::move(in)),
        kernel_(in_[2] * spec.kernel * spec.kernel * spec.out_channels),
        kernel_grad_(kernel_.size(), 0.0),
        bias_(spec.bias ? spec.out_channels : 0, 0.0),
        bias_grad_(bias_.size(), 0.0) {
    for (double& v : kernel_) v = std * rng.normal();
  }

  Tensor forward(const Tensor& input, Mode) override {
    require_batch_shape(input, in_, name_);
    input_ = input;
    return transpose_conv2d(input, kernel_, bias_, spec_.out_channels, geometry());
  }

  Tensor backward(const Tensor& grad) override {
    // The layer computes K^T x; its kernel gradient is the forward-conv kernel
    // gradient with the roles of input and output swapped.
    conv2d_backward_params(grad, input_, kernel_grad_, {}, geometry());
    if (!bias_grad_.empty()) {
      const std::size_t c = spec_.out_channels;
      for (std::size_t i = 0; i < grad.size(); ++i) bias_grad_[i % c] += grad[i];
    }
    return conv2d(grad, kernel_, {}, in_[2], geometry());
  }

  std::vector<Parameter> parameters() override {
    std::vector<Parameter> p{{name_ + ".kernel",
                              {in_[2], spec_.kernel, spec_.kernel, spec_.out_channels},
                              kernel_,
                              kernel_grad_}};
    if (!bias_.empty()) p.push_back({name_ + ".bias", {bias_.size()}, bias_, bias_grad_});
    return p;
  }

 private:
  ConvGeometry geometry() const { return {spec_.kernel, spec_.stride, spec_.pad, true}; }

  std::string name_;
  TransposeConvSpec spec_;
  Shape in_;
  std::vector<double> kernel_, kernel_grad_, bias_, bias_grad_;
  Tensor input_;
};

class DenseLayer final : public Layer {
 public:
  DenseLayer(std::string name, const DenseSpec& spec, Shape in, Rng& rng, double std)
      : name_(std::move(name)), in_dim_(in.at(0)), out_dim_(spec.out_dim),
        weight_(out_dim_ * in_dim_), weight_grad_(weight_.size(), 0.0),
        bias_(out_dim_, 0.0), bias_grad_(out_dim_, 0.0) {
    for (double& v : weight_) v = std * rng.normal();
  }

  Tensor forward(const Tensor& input, Mode) override {
    require_batch_shape(input, {in_dim_}, name_);
    input_ = input;
    const std::size_t n = input.dim(0);
    Tensor out({n, out_dim_});
    for (std::size_t b = 0; b < n; ++b) {
      const double* x = input.data() + b * in_dim_;
      for (std::size_t o = 0; o < out_dim_; ++o) {
        const double* wr = weight_.data() + o * in_dim_;
        double acc = bias_[o];
        for (std::size_t i = 0; i < in_dim_; ++i) acc += wr[i] * x[i];
        out[b * out_dim_ + o] = acc;
      }
    }
    return out;
  }

  Tensor backward(const Tensor& grad) override {
    const std::size_t n = grad.dim(0);
    Tensor grad_in({n, in_dim_});
    for (std::size_t b = 0; b < n; ++b) {
      const double* x = input_.data() + b * in_dim_;
      double* gi = grad_in.data() + b * in_dim_;
      for (std::size_t o = 0; o < out_dim_; ++o) {
        const double g = grad[b * out_dim_ + o];
        if (g == 0.0) continue;
        bias_grad_[o] += g;
        const double* wr = weight_.data() + o * in_dim_;
        double* gw = weight_grad_.data() + o * in_dim_;
        for (std::size_t i = 0; i < in_dim_; ++i) {
          gw[i] += g * x[i];
          gi[i] += g * wr[i];
        }
      }
    }
    return grad_in;
  }

  std::vector<Parameter> parameters() override {
    return {{name_ + ".weight", {out_dim_, in_dim_}, weight_, weight_grad_},
            {name_ + ".bias", {out_dim_}, bias_, bias_grad_}};
  }

 private:
  std::string name_;
  std::size_t in_dim_, out_dim_;
  std::vector<double> weight_, weight_grad_, bias_, bias_grad_;
  Tensor input_;
};

// Normalizes every channel (last axis) over all remaining axes.
class BatchNormLayer final : public Layer {
 public:
  BatchNormLayer(std::string name, const BatchNormSpec& spec, Shape in)
      : name_(std::move(name)), spec_(spec), in_(std::move(in)), channels_(in_.back()),
        gamma_(channels_, 1.0), gamma_grad_(channels_, 0.0),
        beta_(channels_, 0.0), beta_grad_(channels_, 0.0),
        running_mean_(channels_, 0.0), running_var_(channels_, 1.0) {}

  Tensor forward(const Tensor& input, Mode mode) override {
    require_batch_shape(input, in_, name_);
    mode_ = mode;
    const std::size_t c = channels_;
    const std::size_t count = input.size() / c;
    Tensor out(input.shape());
    if (mode == Mode::Inference) {
      inv_std_.assign(c, 0.0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        inv_std_[ch] = 1.0 / std::sqrt(running_var_[ch] + spec_.eps);
      }
      normalized_ = Tensor(input.shape());
      for (std::size_t i = 0; i < input.size(); ++i) {
        const std::size_t ch = i % c;
        normalized_[i] = (input[i] - running_mean_[ch]) * inv_std_[ch];
        out[i] = gamma_[ch] * normalized_[i] + beta_[ch];
      }
      return out;
    }
    if (input.dim(0) < 2) {
      fail(ErrorCode::BatchTooSmall,
           "batch normalization '" + name_ + "' needs a training batch of at least 2");
    }
    std::vector<double> mean(c, 0.0), var(c, 0.0);
    for (std::size_t i = 0; i < input.size(); ++i) mean[i % c] += input[i];
    for (double& m : mean) m /= static_cast<double>(count);
    for (std::size_t i = 0; i < input.size(); ++i) {
      const double dv = input[i] - mean[i % c];
      var[i % c] += dv * dv;
    }
    for (double& v : var) v /= static_cast<double>(count);
    inv_std_.assign(c, 0.0);
    normalized_ = Tensor(input.shape());
    for (std::size_t ch = 0; ch < c; ++ch) inv_std_[ch] = 1.0 / std::sqrt(var[ch] + spec_.eps);
    for (std::size_t i = 0; i < input.size(); ++i) {
      const std::size_t ch = i % c;
      normalized_[i] = (input[i] - mean[ch]) * inv_std_[ch];
      out[i] = gamma_[ch] * normalized_[i] + beta_[ch];
    }
    const double unbias = count > 1 ? static_cast<double>(count) / (count - 1) : 1.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      running_mean_[ch] = (1 - spec_.momentum) * running_mean_[ch] + spec_.momentum * mean[ch];
      running_var_[ch] =
          (1 - spec_.momentum) * running_var_[ch] + spec_.momentum * var[ch] * unbias;
    }
    return out;
  }

  Tensor backward(const Tensor& grad) override {
    const std::size_t c = channels_;
    Tensor grad_in(grad.shape());
    if (mode_ == Mode::Inference) {
      for (std::size_t i = 0; i < grad.size(); ++i) {
        const std::size_t ch = i % c;
        grad_in[i] = grad[i] * gamma_[ch] * inv_std_[ch];
        gamma_grad_[ch] += grad[i] * normalized_[i];
        beta_grad_[ch] += grad[i];
      }
      return grad_in;
    }
    const double count = static_cast<double>(grad.size() / c);
    std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
    for (std::size_t i = 0; i < grad.size(); ++i) {
      sum_g[i % c] += grad[i];
      sum_gx[i % c] += grad[i] * normalized_[i];
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      beta_grad_[ch] += sum_g[ch];
      gamma_grad_[ch] += sum_gx[ch];
    }
    for (std::size_t i = 0; i < grad.size(); ++i) {
      const std::size_t ch = i % c;
      grad_in[i] = gamma_[ch] * inv_std_[ch] / count *
                   (count * grad[i] - sum_g[ch] - normalized_[i] * sum_gx[ch]);
    }
    return grad_in;
  }

  std::vector<Parameter> parameters() override {
    return {{name_ + ".gamma", {channels_}, gamma_, gamma_grad_},
            {name_ + ".beta", {channels_}, beta_, beta_grad_}};
  }

  std::vector<Buffer> buffers() override {
    return {{name_ + ".running_mean", running_mean_}, {name_ + ".running_var", running_var_}};
  }

 private:
  std::string name_;
  BatchNormSpec spec_;
  Shape in_;
  std::size_t channels_;
  std::vector<double> gamma_, gamma_grad_, beta_, beta_grad_, running_mean_, running_var_;
  std::vector<double> inv_std_;
  Tensor normalized_;
  Mode mode_ = Mode::Train;
};

class ActivationLayer final : public Layer {
 public:
  ActivationLayer(std::string name, ActivationKind kind, Shape in)
      : name_(std::move(name)), kind_(kind), in_(std::move(in)) {}

  Tensor forward(const Tensor& input, Mode) override {
    require_batch_shape(input, in_, name_);
    output_ = activation_forward(input, kind_);
    return output_;
  }

  Tensor backward(const Tensor& grad) override {
    Tensor g(grad.shape());
    for (std::size_t i = 0; i < grad.size(); ++i) {
      const double y = output_[i];
      switch (kind_) {
        case ActivationKind::Tanh: g[i] = grad[i] * (1.0 - y * y); break;
        case ActivationKind::Sigmoid: g[i] = grad[i] * y * (1.0 - y); break;
        case ActivationKind::Relu: g[i] = y > 0.0 ? grad[i] : 0.0; break;
      }
    }
    return g;
  }

 private:
  std::string name_;
  ActivationKind kind_;
  Shape in_;
  Tensor output_;
};

}  // namespace

class MaxPoolLayer final : public Layer {
 public:
  MaxPoolLayer(std::string name, const MaxPoolSpec& spec, Shape in)
      : name_(std::move(name)), spec_(spec), in_(std::move(in)),
        indices_(std::make_shared<PoolIndices>()) {}

  Tensor forward(const Tensor& input, Mode) override {
    require_batch_shape(input, in_, name_);
    return max_pool(input, spec_.kernel, spec_.stride, *indices_);
  }

  Tensor backward(const Tensor& grad) override { return max_unpool(grad, *indices_); }

  std::shared_ptr<const PoolIndices> indices() const { return indices_; }
  const Shape& input_shape() const { return in_; }

 private:
  std::string name_;
  MaxPoolSpec spec_;
  Shape in_;
  std::shared_ptr<PoolIndices> indices_;
};

namespace {

class MaxUnpoolLayer final : public Layer {
 public:
  MaxUnpoolLayer(std::string name, const MaxUnpoolSpec& spec, Shape in)
      : name_(std::move(name)), spec_(spec), in_(std::move(in)) {}

  void bind(std::shared_ptr<const PoolIndices> indices) { indices_ = std::move(indices); }
  const MaxUnpoolSpec& spec() const { return spec_; }
  const Shape& input_shape() const { return in_; }

  Tensor forward(const Tensor& input, Mode) override {
    require_batch_shape(input, in_, name_);
    if (!indices_) {
      fail(ErrorCode::ShapeMismatch,
           "unpooling layer '" + name_ + "' is not bound to pool '" + spec_.pool + "'");
    }
    return max_unpool(input, *indices_);
  }

  Tensor backward(const Tensor& grad) override { return max_unpool_backward(grad, *indices_); }

 private:
  std::string name_;
  MaxUnpoolSpec spec_;
  Shape in_;
  std::shared_ptr<const PoolIndices> indices_;
};

class UnrollLayer final : public Layer {
 public:
  UnrollLayer(std::string name, Shape in) : name_(std::move(name)), in_(std::move(in)) {}

  Tensor forward(const Tensor& input, Mode) override {
    require_batch_shape(input, in_, name_);
    const std::size_t n = input.dim(0), h = in_[0], w = in_[1], c = in_[2];
    const std::size_t f = h * w * c;
    Tensor out({n, f});
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t col = 0; col < w; ++col) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            out[b * f + (ch * h + r) * w + col] = input.at(b, r, col, ch);
          }
        }
      }
    }
    return out;
  }

  Tensor backward(const Tensor& grad) override {
    const std::size_t n = grad.dim(0), h = in_[0], w = in_[1], c = in_[2];
    const std::size_t f = h * w * c;
    Tensor out({n, h, w, c});
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t col = 0; col < w; ++col) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            out.at(b, r, col, ch) = grad[b * f + (ch * h + r) * w + col];
          }
        }
      }
    }
    return out;
  }

 private:
  std::string name_;
  Shape in_;
};

class RollLayer final : public Layer {
 public:
  RollLayer(std::string name, const RollSpec& spec, Shape in)
      : name_(std::move(name)), spec_(spec), in_(std::move(in)),
        unroll_(name_ + ".inverse", {spec.height, spec.width, spec.channels}) {}

  Tensor forward(const Tensor& input, Mode) override {
    require_batch_shape(input, in_, name_);
    return unroll_.backward(input);
  }

  Tensor backward(const Tensor& grad) override { return unroll_.forward(grad, Mode::Train); }

 private:
  std::string name_;
  RollSpec spec_;
  Shape in_;
  UnrollLayer unroll_;
};

}  // namespace

Tensor activation_forward(const Tensor& input, ActivationKind kind) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    const double x = input[i];
    switch (kind) {
      case ActivationKind::Tanh: out[i] = std::tanh(x); break;
      case ActivationKind::Relu: out[i] = x > 0.0 ? x : 0.0; break;
      case ActivationKind::Sigmoid:
        out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        break;
    }
  }
  return out;
}

std::string layer_kind(const LayerSpec& spec) {
  return std::visit(Overloaded{
                        [](const ConvSpec&) { return std::string("conv"); },
                        [](const TransposeConvSpec&) { return std::string("transpose_conv"); },
                        [](const MaxPoolSpec&) { return std::string("max_pool"); },
                        [](const MaxUnpoolSpec&) { return std::string("max_unpool"); },
                        [](const DenseSpec&) { return std::string("dense"); },
                        [](const BatchNormSpec&) { return std::string("batch_norm"); },
                        [](const ActivationSpec& a) {
                          return "activation:" + std::string(to_string(a.kind));
                        },
                        [](const UnrollSpec&) { return std::string("unroll"); },
                        [](const RollSpec&) { return std::string("roll"); },
                    },
                    spec);
}

NetworkSpec& NetworkSpec::add(std::string name, LayerSpec spec) {
  layers.push_back({std::move(name), std::move(spec)});
  return *this;
}

std::vector<LayerAudit> NetworkSpec::audit() const {
  std::vector<LayerAudit> rows;
  Shape s = input_shape;
  for (const auto& layer : layers) {
    const std::string& nm = layer.name;
    std::size_t params = 0;
    s = std::visit(
        Overloaded{
            [&](const ConvSpec& c) -> Shape {
              require_sample_rank(s, 3, nm);
              if (c.kernel < 1 || c.stride < 1 || c.out_channels < 1) {
                fail(ErrorCode::ShapeMismatch, "layer '" + nm + "' has invalid geometry");
              }
              const ConvGeometry g{c.kernel, c.stride, c.pad, true};
              params = c.out_channels * c.kernel * c.kernel * s[2] + (c.bias ? c.out_channels : 0);
              return {conv_output_size(s[0], g), conv_output_size(s[1], g), c.out_channels};
            },
            [&](const TransposeConvSpec& c) -> Shape {
              require_sample_rank(s, 3, nm);
              if (c.kernel < 1 || c.stride < 1 || c.out_channels < 1) {
                fail(ErrorCode::ShapeMismatch, "layer '" + nm + "' has invalid geometry");
              }
              const ConvGeometry g{c.kernel, c.stride, c.pad, true};
              params = s[2] * c.kernel * c.kernel * c.out_channels + (c.bias ? c.out_channels : 0);
              return {transpose_conv_output_size(s[0], g), transpose_conv_output_size(s[1], g),
                      c.out_channels};
            },
            [&](const MaxPoolSpec& p) -> Shape {
              require_sample_rank(s, 3, nm);
              return {pool_output_size(s[0], p.kernel, p.stride),
                      pool_output_size(s[1], p.kernel, p.stride), s[2]};
            },
            [&](const MaxUnpoolSpec& u) -> Shape {
              require_sample_rank(s, 3, nm);
              if (u.output_height == 0 || u.output_width == 0) {
                fail(ErrorCode::ShapeMismatch, "layer '" + nm + "' has no output size");
              }
              return {u.output_height, u.output_width, s[2]};
            },
            [&](const DenseSpec& d) -> Shape {
              require_sample_rank(s, 1, nm);
              params = d.out_dim * s[0] + d.out_dim;
              return {d.out_dim};
            },
            [&](const BatchNormSpec&) -> Shape {
              params = 2 * s.back();
              return s;
            },
            [&](const ActivationSpec&) -> Shape { return s; },
            [&](const UnrollSpec&) -> Shape {
              require_sample_rank(s, 3, nm);
              return {s[0] * s[1] * s[2]};
            },
            [&](const RollSpec& r) -> Shape {
              require_sample_rank(s, 1, nm);
              if (s[0] != r.height * r.width * r.channels) {
                fail(ErrorCode::ShapeMismatch, "layer '" + nm + "' cannot roll " +
                                                   shape_string(s) + " into " +
                                                   std::to_string(r.height) + "x" +
                                                   std::to_string(r.width) + "x" +
                                                   std::to_string(r.channels));
              }
              return {r.height, r.width, r.channels};
            },
        },
        layer.spec);
    rows.push_back({nm, layer_kind(layer.spec), s, shape_size(s), params});
  }
  return rows;
}

std::size_t NetworkSpec::parameter_count() const {
  std::size_t total = 0;
  for (const auto& row : audit()) total += row.parameters;
  return total;
}

Shape NetworkSpec::output_shape() const {
  const auto rows = audit();
  return rows.empty() ? input_shape : rows.back().output_shape;
}

Network::Network(NetworkSpec spec, const InitConfig& init) : spec_(std::move(spec)) {
  const auto rows = spec_.audit();
  Rng rng(init.seed);
  Shape s = spec_.input_shape;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const auto& layer = spec_.layers[i];
    const std::string& nm = layer.name;
    std::unique_ptr<Layer> made = std::visit(
        Overloaded{
            [&](const ConvSpec& c) -> std::unique_ptr<Layer> {
              return std::make_unique<ConvLayer>(nm, c, s, rng, init.weight_std);
            },
            [&](const TransposeConvSpec& c) -> std::unique_ptr<Layer> {
              return std::make_unique<TransposeConvLayer>(nm, c, s, rng, init.weight_std);
            },
            [&](const MaxPoolSpec& p) -> std::unique_ptr<Layer> {
              return std::make_unique<MaxPoolLayer>(nm, p, s);
            },
            [&](const MaxUnpoolSpec& u) -> std::unique_ptr<Layer> {
              return std::make_unique<MaxUnpoolLayer>(nm, u, s);
            },
            [&](const DenseSpec& d) -> std::unique_ptr<Layer> {
              return std::make_unique<DenseLayer>(nm, d, s, rng, init.weight_std);
            },
            [&](const BatchNormSpec& b) -> std::unique_ptr<Layer> {
              return std::make_unique<BatchNormLayer>(nm, b, s);
            },
            [&](const ActivationSpec& a) -> std::unique_ptr<Layer> {
              return std::make_unique<ActivationLayer>(nm, a.kind, s);
            },
            [&](const UnrollSpec&) -> std::unique_ptr<Layer> {
              return std::make_unique<UnrollLayer>(nm, s);
            },
            [&](const RollSpec& r) -> std::unique_ptr<Layer> {
              return std::make_unique<RollLayer>(nm, r, s);
            },
        },
        layer.spec);
    layers_.push_back(std::move(made));
    s = rows[i].output_shape;
  }
  bind_unpooling();
}

Network::Network(Network&&) noexcept = default;
Network& Network::operator=(Network&&) noexcept = default;
Network::~Network() = default;

Tensor Network::forward(const Tensor& input, Mode mode) {
  if (input.rank() == 0) fail(ErrorCode::ShapeMismatch, "network input has no batch axis");
  require_batch_shape(input, spec_.input_shape, "input");
  Tensor x = input;
  for (auto& layer : layers_) x = layer->forward(x, mode);
  return x;
}

Tensor Network::backward(const Tensor& grad_output) {
  Tensor g = grad_output;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

std::vector<Parameter> Network::parameters() {
  std::vector<Parameter> out;
  for (auto& layer : layers_) {
    auto p = layer->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<Buffer> Network::buffers() {
  std::vector<Buffer> out;
  for (auto& layer : layers_) {
    auto b = layer->buffers();
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

void Network::zero_grad() {
  for (auto& p : parameters()) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

MaxPoolLayer* Network::find_pool(const std::string& name) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (spec_.layers[i].name == name) return dynamic_cast<MaxPoolLayer*>(layers_[i].get());
  }
  return nullptr;
}

void Network::bind_unpooling(Network* other) {
  for (auto& layer : layers_) {
    auto* unpool = dynamic_cast<MaxUnpoolLayer*>(layer.get());
    if (!unpool) continue;
    MaxPoolLayer* pool = find_pool(unpool->spec().pool);
    if (!pool && other) pool = other->find_pool(unpool->spec().pool);
    if (!pool) continue;
    const Shape& pin = pool->input_shape();
    if (pin[0] != unpool->spec().output_height || pin[1] != unpool->spec().output_width ||
        pin[2] != unpool->input_shape()[2]) {
      fail(ErrorCode::ShapeMismatch, "unpooling layer does not mirror pool '" +
                                         unpool->spec().pool + "'");
    }
    unpool->bind(pool->indices());
  }
}

std::vector<std::vector<double>> Network::snapshot() {
  std::vector<std::vector<double>> state;
  for (auto& p : parameters()) state.emplace_back(p.value.begin(), p.value.end());
  for (auto& b : buffers()) state.emplace_back(b.value.begin(), b.value.end());
  return state;
}

void Network::restore(const std::vector<std::vector<double>>& state) {
  auto params = parameters();
  auto bufs = buffers();
  if (state.size() != params.size() + bufs.size()) {
    fail(ErrorCode::ShapeMismatch, "snapshot does not match network");
  }
  std::size_t i = 0;
  for (auto& p : params) {
    if (state[i].size() != p.value.size()) fail(ErrorCode::ShapeMismatch, "snapshot size");
    std::copy(state[i].begin(), state[i].end(), p.value.begin());
    ++i;
  }
  for (auto& b : bufs) {
    if (state[i].size() != b.value.size()) fail(ErrorCode::ShapeMismatch, "snapshot size");
    std::copy(state[i].begin(), state[i].end(), b.value.begin());
    ++i;
  }
}

}  // namespace geoembed
