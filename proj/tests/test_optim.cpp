#include <gtest/gtest.h>

#include <cmath>

#include "plasticity/optim.hpp"

namespace {

using namespace plasticity;

ParameterSet scalar_params(std::vector<double> values) {
  ParamInfo info{"x", ParamRole::Weight, 1, InitDistribution::uniform(1.0)};
  const std::size_t n = values.size();
  return ParameterSet({info}, {Tensor({n}, std::move(values))});
}

// Gradient of 0.5 * Σ c_i (x_i - t_i)².
TensorList quadratic_grad(const ParameterSet& p, const std::vector<double>& c, const std::vector<double>& t) {
  TensorList g{Tensor(p[0].shape())};
  for (std::size_t i = 0; i < c.size(); ++i) g[0][i] = c[i] * (p[0][i] - t[i]);
  return g;
}

// Straight-line Adam written from the update equations, one coordinate at a time.
std::vector<double> reference_adam(std::vector<double> x, const std::vector<double>& c, const std::vector<double>& t,
                                   double lr, int steps) {
  std::vector<double> m(x.size(), 0.0), v(x.size(), 0.0);
  for (int k = 1; k <= steps; ++k) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double g = c[i] * (x[i] - t[i]);
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1.0 - std::pow(0.9, k));
      const double vh = v[i] / (1.0 - std::pow(0.999, k));
      x[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  return x;
}

const std::vector<double> kC{3.0, 0.5, 10.0};
const std::vector<double> kT{0.2, 0.7, -1.0};

TEST(Adam, TenStepsMatchIndependentReference) {
  ParameterSet p = scalar_params({1.0, -2.0, 0.5});
  OptimizerState opt = OptimizerState::adam(0.1, p);
  for (int k = 0; k < 10; ++k) adam_step(opt, p, quadratic_grad(p, kC, kT));
  const auto ref = reference_adam({1.0, -2.0, 0.5}, kC, kT, 0.1, 10);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(p[0][i], ref[i], 1e-12);
  EXPECT_EQ(opt.step, 10u);
}

TEST(Adam, TenStepsMatchFrameworkTrajectory) {
  // Same problem run through a widely used framework's Adam in float64.
  ParameterSet p = scalar_params({1.0, -2.0, 0.5});
  OptimizerState opt = OptimizerState::adam(0.1, p);
  for (int k = 0; k < 10; ++k) adam_step(opt, p, quadratic_grad(p, kC, kT));
  EXPECT_NEAR(p[0][0], 0.11729812868621294, 1e-12);
  EXPECT_NEAR(p[0][1], -1.0162747289120502, 1e-12);
  EXPECT_NEAR(p[0][2], -0.46204658848636276, 1e-12);
}

TEST(Adam, FirstStepMovesEachCoordinateByAlpha) {
  ParameterSet p = scalar_params({1.0, -2.0, 0.5});
  OptimizerState opt = OptimizerState::adam(0.01, p);
  adam_step(opt, p, quadratic_grad(p, kC, kT));
  EXPECT_NEAR(p[0][0], 1.0 - 0.01, 1e-9);
  EXPECT_NEAR(p[0][1], -2.0 + 0.01, 1e-9);
  EXPECT_NEAR(p[0][2], 0.5 - 0.01, 1e-9);
}

TEST(Adam, NonFiniteUpdateRaisesWithStep) {
  ParameterSet p = scalar_params({1.0});
  OptimizerState opt = OptimizerState::adam(0.1, p);
  adam_step(opt, p, {Tensor({1}, {1.0})});
  try {
    adam_step(opt, p, {Tensor({1}, {std::nan("")})});
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_EQ(e.step(), 1u);
  }
}

TEST(Sgd, StepAndShapeChecks) {
  ParameterSet p = scalar_params({1.0, 2.0});
  OptimizerState opt = OptimizerState::sgd(0.5);
  sgd_step(opt, p, {Tensor({2}, {2.0, -4.0})});
  EXPECT_EQ(p[0], Tensor({2}, {0.0, 4.0}));
  EXPECT_THROW(sgd_step(opt, p, {Tensor({3})}), DimensionError);
  EXPECT_THROW(sgd_step(opt, p, {Tensor({2}, {INFINITY, 0.0})}), NumericalError);
  EXPECT_THROW(adam_step(opt, p, {Tensor({2})}), ArgumentError);
}

NetworkSpec small_mlp(bool ln = false) { return NetworkSpec::mlp(5, {4, 3}, 3, ln); }

TEST(Regularizers, GradientFormulas) {
  RngStream rng(3);
  ParameterSet p = init_params(small_mlp(), rng);
  const TensorList theta0 = p.values();
  for (auto& t : p.values()) {
    for (double& v : t.values()) v += 0.25;
  }
  MethodConfig cfg;
  cfg.lambda = 0.3;
  cfg.method = Method::L2Init;
  const TensorList l2init = regularizer_gradient(cfg, p, rng);
  cfg.method = Method::L2;
  const TensorList l2 = regularizer_gradient(cfg, p, rng);
  cfg.method = Method::Baseline;
  const TensorList none = regularizer_gradient(cfg, p, rng);
  for (std::size_t k = 0; k < p.size(); ++k) {
    for (std::size_t i = 0; i < p[k].size(); ++i) {
      EXPECT_NEAR(l2init[k][i], 2 * 0.3 * (p[k][i] - theta0[k][i]), 1e-15);
      EXPECT_DOUBLE_EQ(l2[k][i], 2 * 0.3 * p[k][i]);
      EXPECT_EQ(none[k][i], 0.0);
    }
  }
}

TEST(Regularizers, ResampleAnchorIsFreshEachCall) {
  RngStream rng(3);
  const ParameterSet p = init_params(NetworkSpec::mlp(50, {40}, 3), rng);
  MethodConfig cfg{Method::L2InitResample, 0.5};
  const TensorList a = regularizer_gradient(cfg, p, rng);
  const TensorList b = regularizer_gradient(cfg, p, rng);
  EXPECT_NE(a[0], b[0]);
  // φ has mean zero, so on average the gradient is 2λθ; each φ stays in the init bounds.
  const double bound = p.info()[0].init.bound;
  double mean_diff = 0.0;
  for (std::size_t i = 0; i < p[0].size(); ++i) {
    const double phi = p[0][i] - a[0][i] / (2 * 0.5);
    EXPECT_LE(std::abs(phi), bound + 1e-12);
    mean_diff += a[0][i] - 2 * 0.5 * p[0][i];
  }
  EXPECT_NEAR(mean_diff / static_cast<double>(p[0].size()), 0.0, 0.01);
}

TEST(Regularizers, SgdL2InitClosedForm) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    RngStream rng(seed);
    const double alpha = rng.uniform(1e-4, 0.1), lambda = rng.uniform(1e-4, 1.0);
    LearnerState learner;
    learner.params = init_params(small_mlp(), rng);
    for (auto& t : learner.params.values()) {
      for (double& v : t.values()) v += rng.uniform(-1, 1);
    }
    learner.optimizer = OptimizerState::sgd(alpha);
    TensorList g = zeros_like(learner.params.values());
    for (auto& t : g) {
      for (double& v : t.values()) v = rng.uniform(-2, 2);
    }
    const TensorList before = learner.params.values();
    MethodConfig cfg{Method::L2Init, lambda};
    apply_method_step(cfg, small_mlp(), learner, g, ForwardCache{}, rng);
    for (std::size_t k = 0; k < g.size(); ++k) {
      for (std::size_t i = 0; i < g[k].size(); ++i) {
        const double expected = (1 - 2 * alpha * lambda) * before[k][i] +
                                2 * alpha * lambda * learner.params.initial()[k][i] - alpha * g[k][i];
        EXPECT_NEAR(learner.params[k][i], expected, 1e-12);
      }
    }
  }
}

TEST(ShrinkPerturb, ZeroSettingsLeaveParametersUntouched) {
  RngStream rng(1);
  ParameterSet p = init_params(small_mlp(true), rng);
  const ParameterSet before = p;
  shrink_perturb_apply(MethodConfig{Method::ShrinkPerturb}, p, rng);
  EXPECT_EQ(p.values(), before.values());
}

TEST(ShrinkPerturb, ShrinksAndAddsInitScaledNoise) {
  RngStream rng(1);
  ParameterSet p = init_params(small_mlp(true), rng);
  const ParameterSet before = p;
  MethodConfig cfg{Method::ShrinkPerturb};
  cfg.shrink = 0.2;
  cfg.noise = 0.1;
  shrink_perturb_apply(cfg, p, rng);
  for (std::size_t k = 0; k < p.size(); ++k) {
    const InitDistribution& d = p.info()[k].init;
    for (std::size_t i = 0; i < p[k].size(); ++i) {
      const double eps = (p[k][i] - 0.8 * before[k][i]) / 0.1;
      if (d.is_constant) {
        EXPECT_NEAR(eps, d.constant, 1e-12);
      } else {
        EXPECT_LE(std::abs(eps), d.bound + 1e-12);
      }
    }
  }
}

TEST(ContinualBackprop, ResetUnitSemantics) {
  const NetworkSpec spec = small_mlp(true);
  RngStream rng(2);
  ParameterSet p = init_params(spec, rng);
  OptimizerState opt = OptimizerState::adam(1e-3, p);
  for (auto& t : opt.m) t.fill(1.0);
  for (auto& t : opt.v) t.fill(1.0);
  const NetworkLayout layout = layout_of(spec);
  const HiddenBlock& b = layout.hidden[0];
  p[*b.gain][1] = 3.0;
  p[*b.shift][1] = -2.0;
  const ParameterSet before = p;
  reset_hidden_unit(layout, 0, 1, p, &opt, rng);
  const std::size_t out_w = layout.hidden[1].weight;
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_NE(p[b.weight].at(i, 1), before[b.weight].at(i, 1));
    EXPECT_LT(std::abs(p[b.weight].at(i, 1)), p.info()[b.weight].init.bound);
    EXPECT_EQ(p[b.weight].at(i, 0), before[b.weight].at(i, 0));
    EXPECT_EQ(opt.m[b.weight].at(i, 1), 0.0);
    EXPECT_EQ(opt.v[b.weight].at(i, 1), 0.0);
    EXPECT_EQ(opt.m[b.weight].at(i, 0), 1.0);
  }
  EXPECT_EQ(p[b.bias][1], 0.0);
  EXPECT_EQ(p[*b.gain][1], 1.0);
  EXPECT_EQ(p[*b.shift][1], 0.0);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(p[out_w].at(1, k), 0.0);
    EXPECT_EQ(opt.m[out_w].at(1, k), 0.0);
    EXPECT_EQ(p[out_w].at(0, k), before[out_w].at(0, k));
  }
}

TEST(ContinualBackprop, MaturityAndReplacementRate) {
  const NetworkSpec spec = NetworkSpec::mlp(6, {100}, 3);
  RngStream rng(4);
  LearnerState learner;
  learner.params = init_params(spec, rng);
  learner.optimizer = OptimizerState::sgd(0.0);
  CbpState cbp = CbpState::for_network(spec);
  MethodConfig cfg{Method::ContinualBackprop};
  cfg.replacement_rate = 0.01;  // one unit per step at width 100
  const Tensor images = sample_uniform(rng, 0, 1, {8, 6});
  const ForwardResult fr = forward(spec, learner.params, images);
  std::size_t total = 0;
  for (std::size_t step = 1; step <= 99; ++step) {
    total += cbp_step(cbp, cfg, spec, learner.params, fr.cache, nullptr, rng);
  }
  EXPECT_EQ(total, 0u);  // nobody is mature before age 100
  EXPECT_EQ(cbp_step(cbp, cfg, spec, learner.params, fr.cache, nullptr, rng), 1u);
  // 99 mature units now accrue 0.99 per step.
  EXPECT_EQ(cbp_step(cbp, cfg, spec, learner.params, fr.cache, nullptr, rng), 0u);
  EXPECT_EQ(cbp_step(cbp, cfg, spec, learner.params, fr.cache, nullptr, rng), 1u);
  std::size_t young = 0;
  for (std::size_t a : cbp.age[0]) young += a < 100 ? 1 : 0;
  EXPECT_EQ(young, 2u);
}

TEST(ContinualBackprop, ReplacesLowestUtilityUnit) {
  const NetworkSpec spec = NetworkSpec::mlp(4, {10}, 2);
  RngStream rng(6);
  ParameterSet p = init_params(spec, rng);
  CbpState cbp = CbpState::for_network(spec);
  for (std::size_t j = 0; j < 10; ++j) {
    cbp.utility[0][j] = 1.0 + static_cast<double>(j);
    cbp.age[0][j] = 500;
  }
  cbp.utility[0][7] = 1e-9;
  MethodConfig cfg{Method::ContinualBackprop};
  cfg.replacement_rate = 0.1;
  cfg.utility_decay = 0.999999;  // keep the seeded ordering
  const ForwardResult fr = forward(spec, p, sample_uniform(rng, 0, 1, {4, 4}));
  ASSERT_EQ(cbp_step(cbp, cfg, spec, p, fr.cache, nullptr, rng), 1u);
  EXPECT_EQ(cbp.age[0][7], 0u);
  EXPECT_EQ(cbp.utility[0][7], 0.0);
}

TEST(ContinualBackprop, FractionalRateAccumulates) {
  const NetworkSpec spec = NetworkSpec::mlp(4, {10}, 2);
  RngStream rng(6);
  ParameterSet p = init_params(spec, rng);
  CbpState cbp = CbpState::for_network(spec);
  for (auto& a : cbp.age[0]) a = 1000;
  MethodConfig cfg{Method::ContinualBackprop};
  cfg.replacement_rate = 0.025;  // 0.25 units per step
  cfg.maturity = 0;
  const ForwardResult fr = forward(spec, p, sample_uniform(rng, 0, 1, {4, 4}));
  std::vector<std::size_t> resets;
  for (int s = 0; s < 8; ++s) resets.push_back(cbp_step(cbp, cfg, spec, p, fr.cache, nullptr, rng));
  EXPECT_EQ(resets, (std::vector<std::size_t>{0, 0, 0, 1, 0, 0, 0, 1}));
}

TEST(ContinualBackprop, UtilityFormulas) {
  const Tensor incoming({2, 2}, {1.0, -4.0, 3.0, 2.0});
  const Tensor activation({2, 2}, {1.0, 0.0, 3.0, 2.0});
  const Tensor outgoing({2, 3}, {1.0, 2.0, 3.0, -6.0, 0.0, 0.0});
  const auto contribution = detail::instantaneous_utility(UtilityKind::Contribution, incoming, activation, outgoing);
  EXPECT_DOUBLE_EQ(contribution[0], 1.0 / 2.0);
  EXPECT_DOUBLE_EQ(contribution[1], 1.0 / 3.0);
  const auto adaptive =
      detail::instantaneous_utility(UtilityKind::AdaptiveContribution, incoming, activation, outgoing);
  EXPECT_DOUBLE_EQ(adaptive[0], 2.0 * 2.0);
  EXPECT_DOUBLE_EQ(adaptive[1], 1.0 * 2.0);
}

TEST(ContinualBackprop, RejectsConvolutionalNetworks) {
  EXPECT_THROW(CbpState::for_network(NetworkSpec::cifar_cnn()), ArgumentError);
}

// One full training step per method, starting from identical state.
LearnerState step_with(const MethodConfig& cfg, std::uint64_t seed) {
  const NetworkSpec spec = small_mlp();
  RngStream rng(seed);
  LearnerState learner;
  learner.params = init_params(spec, rng);
  learner.optimizer = OptimizerState::adam(1e-2, learner.params);
  if (cfg.method == Method::ContinualBackprop) learner.cbp = CbpState::for_network(spec);
  RngStream method_rng = rng.split("method");
  for (int s = 0; s < 150; ++s) {
    const Tensor x = sample_uniform(rng, 0, 1, {4, 5});
    const std::vector<int> y{0, 1, 2, static_cast<int>(s % 3)};
    const ForwardResult fr = forward(spec, learner.params, x);
    const LossAndGrad lg = loss_and_grad(spec, learner.params, fr.cache, fr.logits, y);
    apply_method_step(cfg, spec, learner, lg.grads, fr.cache, method_rng);
  }
  return learner;
}

TEST(MethodStep, ZeroStrengthMethodsReduceToBaseline) {
  const LearnerState base = step_with(MethodConfig{Method::Baseline}, 5);
  EXPECT_EQ(step_with(MethodConfig{Method::L2Init, 0.0}, 5).params.values(), base.params.values());
  EXPECT_EQ(step_with(MethodConfig{Method::ShrinkPerturb}, 5).params.values(), base.params.values());
  EXPECT_EQ(step_with(MethodConfig{Method::ContinualBackprop}, 5).params.values(), base.params.values());
  EXPECT_NE(step_with(MethodConfig{Method::L2Init, 0.1}, 5).params.values(), base.params.values());
}

TEST(MethodConfig, ValidationRejectsBadValues) {
  MethodConfig c;
  c.lambda = -1;
  EXPECT_THROW(c.validate(), ArgumentError);
  c = {};
  c.shrink = 1.5;
  EXPECT_THROW(c.validate(), ArgumentError);
  c = {};
  c.utility_decay = 1.0;
  EXPECT_THROW(c.validate(), ArgumentError);
  EXPECT_EQ(parse_method("l2_init_resample"), Method::L2InitResample);
  EXPECT_FALSE(parse_method("l2init").has_value());
}

}  // namespace
