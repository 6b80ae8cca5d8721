#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "plasticity/nn.hpp"
#include "plasticity/problems.hpp"
#include "plasticity/rng.hpp"

namespace plasticity {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;  // stencil crossed a ReLU or max-pool switch
  std::string worst_param;
  std::size_t worst_index = 0;
};

struct GradCheckOptions {
  double step = 1e-5;
  // Below this absolute difference the stencil is inside round-off (about eps * loss / step).
  double abs_floor = 1e-10;
};

/// ReLU on/off pattern and max-pool selections of a forward pass.
inline std::vector<std::size_t> activation_pattern(const ForwardCache& cache) {
  std::vector<std::size_t> pattern;
  for (const HiddenCache& h : cache.hidden) {
    for (double a : h.activation.values()) pattern.push_back(a > 0.0 ? 1 : 0);
    pattern.insert(pattern.end(), h.pool_argmax.begin(), h.pool_argmax.end());
  }
  return pattern;
}

struct LossProbe {
  double loss = 0.0;
  std::vector<std::size_t> pattern;
};

inline LossProbe batch_loss(const NetworkSpec& spec, const ParameterSet& params, const Tensor& images,
                            std::span<const int> labels) {
  const ForwardResult fr = forward(spec, params, images);
  return {softmax_cross_entropy(fr.logits, labels).loss, activation_pattern(fr.cache)};
}

/// Compares analytic gradients with central finite differences on every
/// scalar parameter. Relative error is |a - n| / max(|a|, |n|). Coordinates
/// whose stencil changes the activation pattern are not differentiable over
/// the stencil and are skipped (counted in skipped_kinks).
inline GradCheckResult gradient_check(const NetworkSpec& spec, ParameterSet params, const Tensor& images,
                                      std::span<const int> labels, GradCheckOptions opts = {}) {
  const ForwardResult fr = forward(spec, params, images);
  const LossAndGrad lg = loss_and_grad(spec, params, fr.cache, fr.logits, labels);
  const std::vector<std::size_t> base_pattern = activation_pattern(fr.cache);
  GradCheckResult r;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double saved = params[p][i];
      params[p][i] = saved + opts.step;
      const LossProbe up = batch_loss(spec, params, images, labels);
      params[p][i] = saved - opts.step;
      const LossProbe down = batch_loss(spec, params, images, labels);
      params[p][i] = saved;
      if (up.pattern != base_pattern || down.pattern != base_pattern) {
        ++r.skipped_kinks;
        continue;
      }
      const double numeric = (up.loss - down.loss) / (2.0 * opts.step);
      const double analytic = lg.grads[p][i];
      const double diff = std::abs(numeric - analytic);
      ++r.checked;
      if (diff <= opts.abs_floor) continue;
      const double rel = diff / std::max(std::abs(numeric), std::abs(analytic));
      if (rel > r.max_rel_error) {
        r.max_rel_error = rel;
        r.worst_param = params.info()[p].name;
        r.worst_index = i;
      }
    }
  }
  return r;
}

/// Random parameters for a gradient check: initialization draws, with the
/// layer-norm affines moved off their 1/0 starting point.
inline ParameterSet random_check_params(const NetworkSpec& spec, RngStream& rng) {
  ParameterSet params = init_params(spec, rng);
  for (std::size_t p = 0; p < params.size(); ++p) {
    const ParamRole role = params.info()[p].role;
    if (role == ParamRole::NormGain) {
      for (double& v : params[p].values()) v = rng.uniform(0.5, 1.5);
    } else if (role == ParamRole::NormShift) {
      for (double& v : params[p].values()) v = rng.uniform(-0.5, 0.5);
    }
  }
  return ParameterSet(params.info(), params.values());
}

inline Batch random_check_batch(const NetworkSpec& spec, std::size_t batch, RngStream& rng) {
  Shape shape{batch};
  shape.insert(shape.end(), spec.input_shape.begin(), spec.input_shape.end());
  Batch b{sample_uniform(rng, 0.0, 1.0, shape), std::vector<int>(batch)};
  for (int& l : b.labels) l = static_cast<int>(rng.below(spec.num_classes));
  return b;
}

/// Small networks of both architectures, with and without layer norm.
inline std::vector<std::pair<std::string, NetworkSpec>> gradcheck_networks() {
  return {
      {"mlp", NetworkSpec::mlp(6, {5, 4}, 3, false)},
      {"mlp+ln", NetworkSpec::mlp(6, {5, 4}, 3, true)},
      {"cnn", NetworkSpec::cnn({2, 16, 16}, {3, 2}, {4}, 3, false)},
      {"cnn+ln", NetworkSpec::cnn({2, 16, 16}, {3, 2}, {4}, 3, true)},
  };
}

struct GradCheckSuiteRow {
  std::string network;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
};

/// Runs `draws` random (params, batch) draws per network; batch size 4.
inline std::vector<GradCheckSuiteRow> run_gradcheck_suite(std::size_t draws, std::uint64_t seed = 0,
                                                          GradCheckOptions opts = {}) {
  std::vector<GradCheckSuiteRow> rows;
  RngStream root(seed);
  for (const auto& [name, spec] : gradcheck_networks()) {
    GradCheckSuiteRow row{name, 0.0, 0};
    RngStream rng = root.split(name);
    for (std::size_t d = 0; d < draws; ++d) {
      const ParameterSet params = random_check_params(spec, rng);
      const Batch batch = random_check_batch(spec, 4, rng);
      const GradCheckResult r = gradient_check(spec, params, batch.images, batch.labels, opts);
      row.max_rel_error = std::max(row.max_rel_error, r.max_rel_error);
      row.checked += r.checked;
      row.skipped_kinks += r.skipped_kinks;
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace plasticity
