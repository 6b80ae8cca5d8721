#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "plasticity/errors.hpp"
#include "plasticity/nn.hpp"
#include "plasticity/rng.hpp"
#include "plasticity/tensor.hpp"

namespace plasticity {

enum class Method { Baseline, LayerNorm, L2Init, L2, ShrinkPerturb, ContinualBackprop, L2InitResample };

enum class UtilityKind { Contribution, AdaptiveContribution };

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::Baseline: return "baseline";
    case Method::LayerNorm: return "layer_norm";
    case Method::L2Init: return "l2_init";
    case Method::L2: return "l2";
    case Method::ShrinkPerturb: return "shrink_perturb";
    case Method::ContinualBackprop: return "continual_backprop";
    case Method::L2InitResample: return "l2_init_resample";
  }
  return "unknown";
}

inline std::optional<Method> parse_method(std::string_view name) {
  for (Method m : {Method::Baseline, Method::LayerNorm, Method::L2Init, Method::L2, Method::ShrinkPerturb,
                   Method::ContinualBackprop, Method::L2InitResample}) {
    if (method_name(m) == name) return m;
  }
  return std::nullopt;
}

/// Which plasticity intervention runs and its hyper-parameters. Only the
/// fields relevant to `method` are read.
struct MethodConfig {
  Method method = Method::Baseline;
  double lambda = 0.0;            // L2, L2Init, L2InitResample
  double shrink = 0.0;            // Shrink & Perturb: multiplier is 1 - shrink
  double noise = 0.0;             // Shrink & Perturb sigma
  double replacement_rate = 0.0;  // CBP
  std::size_t maturity = 100;     // CBP
  double utility_decay = 0.99;    // CBP
  UtilityKind utility = UtilityKind::AdaptiveContribution;

  void validate() const {
    auto check = [](double v, const char* name) {
      if (!(v >= 0.0) || !std::isfinite(v)) {
        throw ArgumentError(std::string("MethodConfig: ") + name + " must be finite and >= 0");
      }
    };
    check(lambda, "lambda");
    check(shrink, "shrink");
    check(noise, "noise");
    check(replacement_rate, "replacement_rate");
    if (shrink > 1.0) throw ArgumentError("MethodConfig: shrink must be <= 1");
    if (!(utility_decay >= 0.0 && utility_decay < 1.0)) {
      throw ArgumentError("MethodConfig: utility_decay must lie in [0, 1)");
    }
  }

  bool uses_layer_norm() const noexcept { return method == Method::LayerNorm; }
};

enum class OptimizerKind { SGD, Adam };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::SGD;
  double alpha = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;  // completed updates
  TensorList m;
  TensorList v;

  static OptimizerState sgd(double alpha) {
    OptimizerState s;
    s.kind = OptimizerKind::SGD;
    s.alpha = alpha;
    return s;
  }

  static OptimizerState adam(double alpha, const ParameterSet& params) {
    OptimizerState s;
    s.kind = OptimizerKind::Adam;
    s.alpha = alpha;
    s.m = zeros_like(params.values());
    s.v = zeros_like(params.values());
    return s;
  }
};

/// Gradient of the method's regularization term. L2Init: 2λ(θ - θ₀); L2: 2λθ;
/// L2InitResample: 2λ(θ - φ) with φ freshly drawn from each tensor's
/// initialization distribution. Zeros for every other method.
inline TensorList regularizer_gradient(const MethodConfig& config, const ParameterSet& params, RngStream& rng) {
  TensorList g = zeros_like(params.values());
  const double scale = 2.0 * config.lambda;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const Tensor& theta = params[p];
    Tensor& out = g[p];
    switch (config.method) {
      case Method::L2Init: {
        const Tensor& anchor = params.initial()[p];
        for (std::size_t i = 0; i < theta.size(); ++i) out[i] = scale * (theta[i] - anchor[i]);
        break;
      }
      case Method::L2:
        for (std::size_t i = 0; i < theta.size(); ++i) out[i] = scale * theta[i];
        break;
      case Method::L2InitResample: {
        const InitDistribution& dist = params.info()[p].init;
        for (std::size_t i = 0; i < theta.size(); ++i) out[i] = scale * (theta[i] - dist.sample(rng));
        break;
      }
      default:
        break;
    }
  }
  return g;
}

/// θ ← θ - α·g.
inline void sgd_step(OptimizerState& state, ParameterSet& params, const TensorList& grad) {
  if (state.kind != OptimizerKind::SGD) throw ArgumentError("sgd_step: optimizer is not SGD");
  require_same_shapes(params.values(), grad, "sgd_step");
  for (const auto& t : grad) {
    if (!t.all_finite()) throw NumericalError("sgd_step: non-finite gradient", state.step);
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& theta = params[p];
    const Tensor& g = grad[p];
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= state.alpha * g[i];
  }
  ++state.step;
}

/// Bias-corrected Adam: θ ← θ - α·m̂/(√v̂ + ε).
inline void adam_step(OptimizerState& state, ParameterSet& params, const TensorList& grad) {
  if (state.kind != OptimizerKind::Adam) throw ArgumentError("adam_step: optimizer is not Adam");
  require_same_shapes(params.values(), grad, "adam_step");
  require_same_shapes(params.values(), state.m, "adam_step moments");
  const std::size_t t = state.step + 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(t));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& theta = params[p];
    Tensor& m = state.m[p];
    Tensor& v = state.v[p];
    const Tensor& g = grad[p];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      const double update = state.alpha * m_hat / (std::sqrt(v_hat) + state.eps);
      if (!std::isfinite(update)) throw NumericalError("adam_step: non-finite update", state.step);
      theta[i] -= update;
    }
  }
  state.step = t;
}

inline void optimizer_step(OptimizerState& state, ParameterSet& params, const TensorList& grad) {
  if (state.kind == OptimizerKind::SGD) {
    sgd_step(state, params, grad);
  } else {
    adam_step(state, params, grad);
  }
}

/// θ ← (1 - s)·θ + σ·ε with ε drawn from each tensor's initialization distribution.
inline void shrink_perturb_apply(const MethodConfig& config, ParameterSet& params, RngStream& rng) {
  const double keep = 1.0 - config.shrink;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const InitDistribution& dist = params.info()[p].init;
    for (double& v : params[p].values()) v = keep * v + config.noise * dist.sample(rng);
  }
}

/// Per-hidden-neuron bookkeeping for Continual Backprop.
struct CbpState {
  std::vector<std::vector<double>> utility;     // [layer][unit], EMA
  std::vector<std::vector<std::size_t>> age;    // steps since init or reset
  std::vector<double> pending;                  // fractional replacement accumulator per layer

  static CbpState for_network(const NetworkSpec& spec) {
    if (spec.kind != ArchKind::MLP) {
      throw ArgumentError("Continual Backprop supports MLP networks only");
    }
    CbpState s;
    for (std::size_t w : spec.hidden_widths) {
      s.utility.emplace_back(w, 0.0);
      s.age.emplace_back(w, 0);
      s.pending.push_back(0.0);
    }
    return s;
  }
};

namespace detail {

inline std::vector<double> instantaneous_utility(UtilityKind kind, const Tensor& incoming,
                                                 const Tensor& activation, const Tensor& outgoing) {
  const std::size_t width = incoming.dim(1);
  std::vector<double> u(width, 0.0);
  if (kind == UtilityKind::Contribution) {
    const std::size_t fan_in = incoming.dim(0);
    for (std::size_t j = 0; j < width; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < fan_in; ++i) s += std::abs(incoming.at(i, j));
      const double mean = s / static_cast<double>(fan_in);
      u[j] = mean > 0.0 ? 1.0 / mean : 0.0;
    }
    return u;
  }
  const std::size_t batch = activation.dim(0);
  const std::size_t fan_out = outgoing.dim(1);
  for (std::size_t j = 0; j < width; ++j) {
    double act = 0.0;
    for (std::size_t r = 0; r < batch; ++r) act += std::abs(activation.at(r, j));
    double out = 0.0;
    for (std::size_t k = 0; k < fan_out; ++k) out += std::abs(outgoing.at(j, k));
    u[j] = (act / static_cast<double>(batch)) * (out / static_cast<double>(fan_out));
  }
  return u;
}

inline void zero_moment_column(OptimizerState* opt, std::size_t p, std::size_t col) {
  if (!opt || opt->kind != OptimizerKind::Adam) return;
  for (Tensor* t : {&opt->m[p], &opt->v[p]}) {
    for (std::size_t r = 0; r < t->dim(0); ++r) t->at(r, col) = 0.0;
  }
}

inline void zero_moment_row(OptimizerState* opt, std::size_t p, std::size_t row) {
  if (!opt || opt->kind != OptimizerKind::Adam) return;
  for (Tensor* t : {&opt->m[p], &opt->v[p]}) {
    for (std::size_t c = 0; c < t->dim(1); ++c) t->at(row, c) = 0.0;
  }
}

inline void zero_moment_entry(OptimizerState* opt, std::size_t p, std::size_t i) {
  if (!opt || opt->kind != OptimizerKind::Adam) return;
  opt->m[p][i] = 0.0;
  opt->v[p][i] = 0.0;
}

}  // namespace detail

/// Reinitializes hidden unit `unit` of hidden layer `layer`: fresh incoming
/// weights, zero bias and outgoing weights, layer-norm affines back to 1/0,
/// and the matching Adam moments cleared.
inline void reset_hidden_unit(const NetworkLayout& layout, std::size_t layer, std::size_t unit,
                              ParameterSet& params, OptimizerState* opt, RngStream& rng) {
  const HiddenBlock& block = layout.hidden[layer];
  const std::size_t out_w = layer + 1 < layout.hidden.size() ? layout.hidden[layer + 1].weight : layout.out_weight;
  Tensor& incoming = params[block.weight];
  const InitDistribution& dist = params.info()[block.weight].init;
  for (std::size_t i = 0; i < incoming.dim(0); ++i) incoming.at(i, unit) = dist.sample(rng);
  detail::zero_moment_column(opt, block.weight, unit);
  params[block.bias][unit] = 0.0;
  detail::zero_moment_entry(opt, block.bias, unit);
  if (block.gain) {
    params[*block.gain][unit] = 1.0;
    params[*block.shift][unit] = 0.0;
    detail::zero_moment_entry(opt, *block.gain, unit);
    detail::zero_moment_entry(opt, *block.shift, unit);
  }
  Tensor& outgoing = params[out_w];
  for (std::size_t k = 0; k < outgoing.dim(1); ++k) outgoing.at(unit, k) = 0.0;
  detail::zero_moment_row(opt, out_w, unit);
}

/// One Continual Backprop step: update utilities and ages from the current
/// batch, then replace the lowest-utility mature units at the configured rate.
/// Returns the number of units reset.
inline std::size_t cbp_step(CbpState& cbp, const MethodConfig& config, const NetworkSpec& spec,
                            ParameterSet& params, const ForwardCache& cache, OptimizerState* opt,
                            RngStream& rng) {
  if (spec.kind != ArchKind::MLP) throw ArgumentError("cbp_step: Continual Backprop supports MLP networks only");
  const NetworkLayout layout = layout_of(spec);
  if (cbp.utility.size() != layout.hidden.size()) throw DimensionError("cbp_step: state does not match network");
  std::size_t resets = 0;
  for (std::size_t l = 0; l < layout.hidden.size(); ++l) {
    const HiddenBlock& block = layout.hidden[l];
    const std::size_t out_w = l + 1 < layout.hidden.size() ? layout.hidden[l + 1].weight : layout.out_weight;
    const std::vector<double> inst = detail::instantaneous_utility(
        config.utility, params[block.weight], cache.hidden[l].activation, params[out_w]);
    auto& util = cbp.utility[l];
    auto& age = cbp.age[l];
    const std::size_t width = util.size();
    for (std::size_t j = 0; j < width; ++j) {
      util[j] = config.utility_decay * util[j] + (1.0 - config.utility_decay) * inst[j];
      ++age[j];
    }

    std::vector<std::size_t> eligible;
    for (std::size_t j = 0; j < width; ++j) {
      if (age[j] >= config.maturity) eligible.push_back(j);
    }
    // Replacement budget accrues only over mature units.
    cbp.pending[l] += config.replacement_rate * static_cast<double>(eligible.size());
    if (cbp.pending[l] < 1.0) continue;
    const auto wanted = static_cast<std::size_t>(std::floor(cbp.pending[l]));
    const std::size_t count = std::min(wanted, eligible.size());
    std::stable_sort(eligible.begin(), eligible.end(),
                     [&](std::size_t a, std::size_t b) { return util[a] < util[b]; });
    for (std::size_t n = 0; n < count; ++n) {
      const std::size_t j = eligible[n];
      reset_hidden_unit(layout, l, j, params, opt, rng);
      util[j] = 0.0;
      age[j] = 0;
    }
    cbp.pending[l] -= static_cast<double>(count);
    resets += count;
  }
  return resets;
}

/// Everything a run mutates on each step besides the data stream.
struct LearnerState {
  ParameterSet params;
  OptimizerState optimizer;
  std::optional<CbpState> cbp;
};

/// Applies one training update: regularizer gradient added to the training
/// gradient, an optimizer step, then Shrink & Perturb or Continual Backprop when
/// configured. Takes no task information.
inline void apply_method_step(const MethodConfig& config, const NetworkSpec& spec, LearnerState& learner,
                              const TensorList& grads, const ForwardCache& cache, RngStream& rng) {
  const bool regularized = (config.method == Method::L2Init || config.method == Method::L2 ||
                            config.method == Method::L2InitResample) &&
                           config.lambda != 0.0;
  if (regularized) {
    TensorList total = regularizer_gradient(config, learner.params, rng);
    for (std::size_t p = 0; p < total.size(); ++p) {
      for (std::size_t i = 0; i < total[p].size(); ++i) total[p][i] += grads[p][i];
    }
    optimizer_step(learner.optimizer, learner.params, total);
  } else {
    optimizer_step(learner.optimizer, learner.params, grads);
  }

  if (config.method == Method::ShrinkPerturb && (config.shrink != 0.0 || config.noise != 0.0)) {
    shrink_perturb_apply(config, learner.params, rng);
  } else if (config.method == Method::ContinualBackprop) {
    if (!learner.cbp) learner.cbp = CbpState::for_network(spec);
    cbp_step(*learner.cbp, config, spec, learner.params, cache, &learner.optimizer, rng);
  }
}

}  // namespace plasticity
