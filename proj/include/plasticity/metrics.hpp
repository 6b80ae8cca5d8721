#pragma once

#include <cmath>
#include <cstddef>
#include <iostream>
#include <span>
#include <string>
#include <vector>

#include "plasticity/errors.hpp"
#include "plasticity/linalg.hpp"
#include "plasticity/nn.hpp"
#include "plasticity/tensor.hpp"

namespace plasticity {

/// Fraction of rows whose argmax equals the label; ties go to the lowest class.
inline double batch_accuracy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size() || labels.empty()) {
    throw DimensionError("batch_accuracy: logits " + shape_string(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t k = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (logits.at(r, c) > logits.at(r, best)) best = c;
    }
    if (static_cast<int>(best) == labels[r]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

/// Mean of the M per-step accuracies a[t_i], ..., a[t_i + M - 1].
inline double avg_online_task_accuracy(std::span<const double> accuracies, std::size_t start, std::size_t steps) {
  if (steps == 0 || start + steps > accuracies.size()) {
    throw ArgumentError("avg_online_task_accuracy: window [" + std::to_string(start) + ", " +
                        std::to_string(start + steps) + ") exceeds " + std::to_string(accuracies.size()) +
                        " recorded steps");
  }
  double sum = 0.0;
  for (std::size_t t = start; t < start + steps; ++t) sum += accuracies[t];
  return sum / static_cast<double>(steps);
}

/// Mean accuracy over one task's accuracies; the span must hold exactly M values.
inline double avg_online_task_accuracy(std::span<const double> task_accuracies, std::size_t steps) {
  if (task_accuracies.size() != steps) {
    throw ArgumentError("avg_online_task_accuracy: expected " + std::to_string(steps) + " values, got " +
                        std::to_string(task_accuracies.size()));
  }
  return avg_online_task_accuracy(task_accuracies, 0, steps);
}

inline double total_avg_online_accuracy(std::span<const double> accuracies) {
  if (accuracies.empty()) throw ArgumentError("total_avg_online_accuracy: empty accuracy sequence");
  double sum = 0.0;
  for (double a : accuracies) sum += a;
  return sum / static_cast<double>(accuracies.size());
}

/// Mean |θ| over every trainable scalar.
inline double mean_param_magnitude(const ParameterSet& params) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const Tensor& t : params.values()) {
    for (double v : t.values()) sum += std::abs(v);
    count += t.size();
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

/// Smallest k whose top-k singular values reach a (1 - delta) share of the
/// spectrum sum. An all-zero spectrum yields 0.
inline std::size_t srank(std::span<const double> singular_values, double delta = 0.01) {
  double total = 0.0;
  for (double s : singular_values) {
    if (!(s >= 0.0)) throw ArgumentError("srank: singular values must be non-negative");
    total += s;
  }
  if (total == 0.0) return 0;
  const double target = (1.0 - delta) * total;
  double partial = 0.0;
  for (std::size_t k = 0; k < singular_values.size(); ++k) {
    partial += singular_values[k];
    if (partial >= target) return k + 1;
  }
  return singular_values.size();
}

struct SrankProbe {
  std::vector<std::size_t> per_layer;
  double mean = 0.0;
  bool degenerate = false;  // some layer produced an all-zero feature matrix
};

/// srank of each hidden layer's post-activation matrix on a probe batch, and
/// their mean.
inline SrankProbe feature_srank_probe(const NetworkSpec& spec, const ParameterSet& params, const Tensor& probe,
                                      double delta = 0.01) {
  const ForwardResult fr = forward(spec, params, probe);
  SrankProbe out;
  if (fr.cache.hidden.empty()) return out;
  double sum = 0.0;
  for (std::size_t l = 0; l < fr.cache.hidden.size(); ++l) {
    const std::vector<double> sv = singular_values(fr.cache.features(l));
    const std::size_t r = srank(sv, delta);
    if (r == 0) out.degenerate = true;
    out.per_layer.push_back(r);
    sum += static_cast<double>(r);
  }
  out.mean = sum / static_cast<double>(out.per_layer.size());
  return out;
}

}  // namespace plasticity
