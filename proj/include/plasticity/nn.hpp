#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "plasticity/errors.hpp"
#include "plasticity/linalg.hpp"
#include "plasticity/rng.hpp"
#include "plasticity/tensor.hpp"

namespace plasticity {

enum class ArchKind { MLP, CNN };

/// Architecture description. Hidden layers are ReLU; when layer_norm is set,
/// every hidden pre-activation is normalized per sample before the ReLU.
struct NetworkSpec {
  ArchKind kind = ArchKind::MLP;
  Shape input_shape{784};                       // per sample
  std::vector<std::size_t> hidden_widths{100, 100};  // MLP
  std::vector<std::size_t> conv_channels{16, 16};    // CNN
  std::size_t kernel_size = 5;                       // CNN
  std::vector<std::size_t> fc_widths{10};            // CNN hidden fully-connected
  std::size_t num_classes = 10;
  bool layer_norm = false;
  double layer_norm_eps = 1e-12;

  static NetworkSpec mlp(std::size_t input_dim, std::vector<std::size_t> widths,
                         std::size_t classes = 10, bool layer_norm = false) {
    NetworkSpec s;
    s.kind = ArchKind::MLP;
    s.input_shape = {input_dim};
    s.hidden_widths = std::move(widths);
    s.num_classes = classes;
    s.layer_norm = layer_norm;
    return s;
  }

  static NetworkSpec cnn(Shape chw, std::vector<std::size_t> channels, std::vector<std::size_t> fc,
                         std::size_t classes = 10, bool layer_norm = false) {
    NetworkSpec s;
    s.kind = ArchKind::CNN;
    s.input_shape = std::move(chw);
    s.conv_channels = std::move(channels);
    s.fc_widths = std::move(fc);
    s.num_classes = classes;
    s.layer_norm = layer_norm;
    return s;
  }

  /// The MNIST MLP: 784 -> 100 -> 100 -> 10.
  static NetworkSpec mnist_mlp(bool layer_norm = false) { return mlp(784, {100, 100}, 10, layer_norm); }

  /// The CIFAR CNN: conv5x5(16) -> pool -> conv5x5(16) -> pool -> fc(10) -> fc(10).
  static NetworkSpec cifar_cnn(bool layer_norm = false) {
    return cnn({3, 32, 32}, {16, 16}, {10}, 10, layer_norm);
  }

  std::size_t input_volume() const { return shape_volume(input_shape); }
};

enum class ParamRole { Weight, Bias, NormGain, NormShift };

/// Distribution a parameter was drawn from at initialization: uniform(-bound, bound)
/// or a point mass (layer-norm affines).
struct InitDistribution {
  double bound = 0.0;
  double constant = 0.0;
  bool is_constant = false;

  static InitDistribution uniform(double bound) { return {bound, 0.0, false}; }
  static InitDistribution point(double value) { return {0.0, value, true}; }

  double sample(RngStream& rng) const { return is_constant ? constant : rng.uniform(-bound, bound); }

  friend bool operator==(const InitDistribution&, const InitDistribution&) = default;
};

struct ParamInfo {
  std::string name;
  ParamRole role = ParamRole::Weight;
  std::size_t fan_in = 0;
  InitDistribution init;

  friend bool operator==(const ParamInfo&, const ParamInfo&) = default;
};

/// Trainable tensors plus the frozen snapshot taken when the set was created.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(std::vector<ParamInfo> info, TensorList values)
      : info_(std::move(info)), values_(std::move(values)), initial_(values_) {
    if (info_.size() != values_.size()) {
      throw DimensionError("ParameterSet: " + std::to_string(info_.size()) + " descriptors for " +
                           std::to_string(values_.size()) + " tensors");
    }
  }

  std::size_t size() const noexcept { return values_.size(); }
  Tensor& operator[](std::size_t i) { return values_[i]; }
  const Tensor& operator[](std::size_t i) const { return values_[i]; }

  TensorList& values() noexcept { return values_; }
  const TensorList& values() const noexcept { return values_; }
  const TensorList& initial() const noexcept { return initial_; }
  const std::vector<ParamInfo>& info() const noexcept { return info_; }

  std::size_t scalar_count() const noexcept {
    std::size_t n = 0;
    for (const auto& t : values_) n += t.size();
    return n;
  }

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

 private:
  std::vector<ParamInfo> info_;
  TensorList values_;
  TensorList initial_;
};

/// Indices into a ParameterSet for one hidden block.
struct HiddenBlock {
  bool conv = false;
  std::size_t weight = 0;
  std::size_t bias = 0;
  std::optional<std::size_t> gain;
  std::optional<std::size_t> shift;
  Shape pre_shape;  // per-sample pre-activation shape
  Shape out_shape;  // per-sample block output (after pooling for conv blocks)
};

struct NetworkLayout {
  std::vector<HiddenBlock> hidden;
  std::size_t out_weight = 0;
  std::size_t out_bias = 0;
  std::size_t head_inputs = 0;
};

/// Parameter descriptors and shapes in storage order: for each hidden block
/// weight, bias, [gain, shift]; then the output weight and bias.
struct ParamPlan {
  NetworkLayout layout;
  std::vector<ParamInfo> info;
  std::vector<Shape> shapes;
};

inline ParamPlan plan_parameters(const NetworkSpec& spec) {
  ParamPlan plan;
  auto add = [&](std::string name, ParamRole role, std::size_t fan_in, Shape shape) {
    ParamInfo pi;
    pi.name = std::move(name);
    pi.role = role;
    pi.fan_in = fan_in;
    if (role == ParamRole::NormGain) {
      pi.init = InitDistribution::point(1.0);
    } else if (role == ParamRole::NormShift) {
      pi.init = InitDistribution::point(0.0);
    } else {
      pi.init = InitDistribution::uniform(1.0 / std::sqrt(static_cast<double>(fan_in)));
    }
    plan.info.push_back(std::move(pi));
    plan.shapes.push_back(std::move(shape));
    return plan.info.size() - 1;
  };
  auto add_norm = [&](HiddenBlock& block, const std::string& prefix) {
    if (!spec.layer_norm) return;
    block.gain = add(prefix + ".ln_gain", ParamRole::NormGain, 0, block.pre_shape);
    block.shift = add(prefix + ".ln_shift", ParamRole::NormShift, 0, block.pre_shape);
  };

  if (spec.num_classes == 0) throw ArgumentError("NetworkSpec: num_classes must be positive");
  std::size_t features = 0;
  if (spec.kind == ArchKind::MLP) {
    features = spec.input_volume();
    if (features == 0) throw ArgumentError("NetworkSpec: empty input shape");
    for (std::size_t l = 0; l < spec.hidden_widths.size(); ++l) {
      const std::size_t width = spec.hidden_widths[l];
      if (width == 0) throw ArgumentError("NetworkSpec: hidden width must be positive");
      const std::string prefix = "fc" + std::to_string(l);
      HiddenBlock block;
      block.weight = add(prefix + ".weight", ParamRole::Weight, features, {features, width});
      block.bias = add(prefix + ".bias", ParamRole::Bias, features, {width});
      block.pre_shape = {width};
      block.out_shape = {width};
      add_norm(block, prefix);
      plan.layout.hidden.push_back(block);
      features = width;
    }
  } else {
    if (spec.input_shape.size() != 3) {
      throw ArgumentError("NetworkSpec: CNN input shape must be CxHxW, got " + shape_string(spec.input_shape));
    }
    std::size_t c = spec.input_shape[0], h = spec.input_shape[1], w = spec.input_shape[2];
    const std::size_t k = spec.kernel_size;
    for (std::size_t l = 0; l < spec.conv_channels.size(); ++l) {
      const std::size_t f = spec.conv_channels[l];
      if (h < k || w < k || (h - k + 1) < 2 || (w - k + 1) < 2) {
        throw ArgumentError("NetworkSpec: conv layer " + std::to_string(l) + " input " +
                            std::to_string(h) + "x" + std::to_string(w) + " too small");
      }
      const std::string prefix = "conv" + std::to_string(l);
      HiddenBlock block;
      block.conv = true;
      const std::size_t fan_in = c * k * k;
      block.weight = add(prefix + ".weight", ParamRole::Weight, fan_in, {f, c, k, k});
      block.bias = add(prefix + ".bias", ParamRole::Bias, fan_in, {f});
      const std::size_t oh = h - k + 1, ow = w - k + 1;
      block.pre_shape = {f, oh, ow};
      block.out_shape = {f, oh / 2, ow / 2};
      add_norm(block, prefix);
      plan.layout.hidden.push_back(block);
      c = f;
      h = oh / 2;
      w = ow / 2;
    }
    features = c * h * w;
    for (std::size_t l = 0; l < spec.fc_widths.size(); ++l) {
      const std::size_t width = spec.fc_widths[l];
      const std::string prefix = "fc" + std::to_string(l);
      HiddenBlock block;
      block.weight = add(prefix + ".weight", ParamRole::Weight, features, {features, width});
      block.bias = add(prefix + ".bias", ParamRole::Bias, features, {width});
      block.pre_shape = {width};
      block.out_shape = {width};
      add_norm(block, prefix);
      plan.layout.hidden.push_back(block);
      features = width;
    }
  }
  plan.layout.head_inputs = features;
  plan.layout.out_weight = add("out.weight", ParamRole::Weight, features, {features, spec.num_classes});
  plan.layout.out_bias = add("out.bias", ParamRole::Bias, features, {spec.num_classes});
  return plan;
}

inline NetworkLayout layout_of(const NetworkSpec& spec) { return plan_parameters(spec).layout; }

/// Draws every tensor from its initialization distribution: weights and biases
/// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), layer-norm gain 1 and shift 0.
inline ParameterSet init_params(const NetworkSpec& spec, RngStream& rng) {
  ParamPlan plan = plan_parameters(spec);
  TensorList values;
  values.reserve(plan.shapes.size());
  for (std::size_t i = 0; i < plan.shapes.size(); ++i) {
    Tensor t(plan.shapes[i]);
    for (double& v : t.values()) v = plan.info[i].init.sample(rng);
    values.push_back(std::move(t));
  }
  return ParameterSet(std::move(plan.info), std::move(values));
}

struct HiddenCache {
  Tensor input;                 // block input, batch-major
  Tensor normalized;            // layer-norm output before gain/shift (empty without LN)
  std::vector<double> inv_std;  // per-sample 1/sqrt(var + eps) (empty without LN)
  Tensor activation;            // post-ReLU, pre-pool
  std::vector<std::size_t> pool_argmax;
  Tensor output;                // block output fed forward (pooled for conv blocks)
};

struct ForwardCache {
  std::vector<HiddenCache> hidden;
  Tensor head_input;  // B×features
  std::size_t batch = 0;

  /// Post-activation feature matrix (B×D) of hidden block l; conv maps are flattened per sample.
  Tensor features(std::size_t l) const {
    const Tensor& out = hidden.at(l).output;
    return out.reshaped({batch, out.size() / batch});
  }
};

struct ForwardResult {
  Tensor logits;
  ForwardCache cache;
};

namespace detail {

inline Shape batch_shape(std::size_t batch, const Shape& per_sample) {
  Shape s{batch};
  s.insert(s.end(), per_sample.begin(), per_sample.end());
  return s;
}

inline void add_row_bias(Tensor& z, const Tensor& bias) {
  const std::size_t rows = z.dim(0), cols = z.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = z.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) row[c] += bias[c];
  }
}

}  // namespace detail

inline ForwardResult forward(const NetworkSpec& spec, const ParameterSet& params, const Tensor& images) {
  const NetworkLayout layout = layout_of(spec);
  if (images.rank() < 2 || images.dim(0) == 0 || images.size() / images.dim(0) != spec.input_volume()) {
    throw DimensionError("forward: batch " + shape_string(images.shape()) +
                         " does not match per-sample input shape " + shape_string(spec.input_shape));
  }
  const std::size_t batch = images.dim(0);
  ForwardResult r;
  r.cache.batch = batch;
  Tensor x = images.reshaped(detail::batch_shape(batch, spec.input_shape));

  for (const HiddenBlock& block : layout.hidden) {
    HiddenCache hc;
    Tensor z;
    if (block.conv) {
      z = conv2d(x, params[block.weight], params[block.bias]);
    } else {
      if (x.rank() != 2) x = x.reshaped({batch, x.size() / batch});
      z = matmul(x, params[block.weight]);
      detail::add_row_bias(z, params[block.bias]);
    }
    hc.input = std::move(x);

    const std::size_t n = z.size() / batch;
    if (block.gain) {
      hc.normalized = Tensor(z.shape());
      hc.inv_std.resize(batch);
      const Tensor& gain = params[*block.gain];
      const Tensor& shift = params[*block.shift];
      for (std::size_t s = 0; s < batch; ++s) {
        const double* zs = z.data() + s * n;
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += zs[i];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += (zs[i] - mean) * (zs[i] - mean);
        var /= static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(var + spec.layer_norm_eps);
        hc.inv_std[s] = inv;
        double* zh = hc.normalized.data() + s * n;
        double* zo = z.data() + s * n;
        for (std::size_t i = 0; i < n; ++i) {
          zh[i] = (zs[i] - mean) * inv;
          zo[i] = gain[i] * zh[i] + shift[i];
        }
      }
    }
    for (double& v : z.values()) v = v > 0.0 ? v : 0.0;
    hc.activation = std::move(z);

    if (block.conv) {
      PoolResult pooled = maxpool2(hc.activation);
      hc.output = std::move(pooled.output);
      hc.pool_argmax = std::move(pooled.argmax);
    } else {
      hc.output = hc.activation;
    }
    x = hc.output;
    r.cache.hidden.push_back(std::move(hc));
  }

  r.cache.head_input = x.reshaped({batch, x.size() / batch});
  r.logits = matmul(r.cache.head_input, params[layout.out_weight]);
  detail::add_row_bias(r.logits, params[layout.out_bias]);
  return r;
}

struct CrossEntropy {
  double loss = 0.0;
  Tensor grad_logits;  // d(mean loss)/d(logits)
};

/// Mean over the batch of -log softmax(logits)[label].
inline CrossEntropy softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("softmax_cross_entropy: logits " + shape_string(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  CrossEntropy ce{0.0, Tensor(logits.shape())};
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t r = 0; r < b; ++r) {
    const int label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw ArgumentError("softmax_cross_entropy: label " + std::to_string(label) + " at row " +
                          std::to_string(r) + " outside [0, " + std::to_string(k) + ")");
    }
    const double* row = logits.data() + r * k;
    const double mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp(row[c] - mx);
    const double log_z = std::log(z) + mx;
    ce.loss += (log_z - row[label]) * inv_b;
    double* g = ce.grad_logits.data() + r * k;
    for (std::size_t c = 0; c < k; ++c) g[c] = std::exp(row[c] - log_z) * inv_b;
    g[label] -= inv_b;
  }
  return ce;
}

struct LossAndGrad {
  double loss = 0.0;
  TensorList grads;  // same layout as ParameterSet::values()
};

/// Cross-entropy loss and its exact gradient with respect to every trainable tensor.
inline LossAndGrad loss_and_grad(const NetworkSpec& spec, const ParameterSet& params,
                                 const ForwardCache& cache, const Tensor& logits,
                                 std::span<const int> labels) {
  const NetworkLayout layout = layout_of(spec);
  CrossEntropy ce = softmax_cross_entropy(logits, labels);
  const std::size_t batch = cache.batch;
  LossAndGrad out{ce.loss, zeros_like(params.values())};
  TensorList& g = out.grads;

  g[layout.out_weight] = matmul_tn(cache.head_input, ce.grad_logits);
  for (std::size_t r = 0; r < batch; ++r) {
    for (std::size_t c = 0; c < spec.num_classes; ++c) g[layout.out_bias][c] += ce.grad_logits.at(r, c);
  }
  if (layout.hidden.empty()) return out;
  Tensor upstream = matmul_nt(ce.grad_logits, params[layout.out_weight]);

  for (std::size_t li = layout.hidden.size(); li-- > 0;) {
    const HiddenBlock& block = layout.hidden[li];
    const HiddenCache& hc = cache.hidden[li];

    Tensor grad_act;
    if (block.conv) {
      grad_act = maxpool2_backward(upstream, hc.pool_argmax, hc.activation.shape());
    } else {
      grad_act = upstream.reshaped(hc.activation.shape());
    }
    for (std::size_t i = 0; i < grad_act.size(); ++i) {
      if (!(hc.activation[i] > 0.0)) grad_act[i] = 0.0;
    }

    Tensor grad_pre = std::move(grad_act);
    if (block.gain) {
      const std::size_t n = grad_pre.size() / batch;
      const Tensor& gain = params[*block.gain];
      Tensor& g_gain = g[*block.gain];
      Tensor& g_shift = g[*block.shift];
      std::vector<double> dzhat(n);
      for (std::size_t s = 0; s < batch; ++s) {
        double* du = grad_pre.data() + s * n;
        const double* zh = hc.normalized.data() + s * n;
        double mean_d = 0.0, mean_dz = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          g_gain[i] += du[i] * zh[i];
          g_shift[i] += du[i];
          dzhat[i] = du[i] * gain[i];
          mean_d += dzhat[i];
          mean_dz += dzhat[i] * zh[i];
        }
        mean_d /= static_cast<double>(n);
        mean_dz /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
          du[i] = hc.inv_std[s] * (dzhat[i] - mean_d - zh[i] * mean_dz);
        }
      }
    }

    if (block.conv) {
      Conv2dGrads cg = conv2d_backward(hc.input, params[block.weight], grad_pre);
      g[block.weight] = std::move(cg.kernels);
      g[block.bias] = std::move(cg.bias);
      upstream = std::move(cg.input);
    } else {
      g[block.weight] = matmul_tn(hc.input, grad_pre);
      Tensor& gb = g[block.bias];
      const std::size_t width = grad_pre.dim(1);
      for (std::size_t r = 0; r < batch; ++r) {
        for (std::size_t c = 0; c < width; ++c) gb[c] += grad_pre.at(r, c);
      }
      if (li > 0) upstream = matmul_nt(grad_pre, params[block.weight]);
    }
  }
  return out;
}

}  // namespace plasticity
