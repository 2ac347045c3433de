#pragma once

// Numerically stable primitives, the first-order optimizer, seeded tensor
// initialization, and the finite-difference gradient check that backs every
// hand-derived backprop in the project.

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "dgdpo/common.hpp"
#include "dgdpo/tensor.hpp"

namespace dgdpo {

inline std::vector<double> log_softmax(std::span<const double> logits) {
  require(logits.size() >= 2, "log_softmax: need at least 2 logits");
  double mx = logits[0];
  for (double v : logits) {
    require_finite(v, "log_softmax input");
    if (v > mx) mx = v;
  }
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

// log sigma(x), stable for large |x|.
inline double log_sigmoid(double x) {
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

enum class OptimRule { sgd, adam };

struct OptimConfig {
  double lr = 0.1;
  double momentum = 0.0;  // sgd only
  OptimRule rule = OptimRule::sgd;
  double beta1 = 0.9;  // adam only
  double beta2 = 0.999;
  double adam_eps = 1e-8;
};

struct OptimState {
  OptimConfig cfg;
  GradStore first_moment;   // sgd velocity or adam m
  GradStore second_moment;  // adam v
  long step = 0;
};

inline OptimState make_optim_state(const ParamStore& params, OptimConfig cfg) {
  return OptimState{cfg, params.zeros_like(), params.zeros_like(), 0};
}

// sgd: v <- mu*v + g; theta <- theta - lr*v
// adam: bias-corrected first/second moments, theta <- theta - lr*m^/(sqrt(v^)+eps)
inline void optimizer_step(ParamStore& params, const GradStore& grads, OptimState& state) {
  require(params.same_layout(grads), "optimizer_step: grad layout mismatch");
  require(params.same_layout(state.first_moment), "optimizer_step: state layout mismatch");
  long t = state.step + 1;
  for (size_t ti = 0; ti < params.tensors().size(); ++ti) {
    auto& p = params.tensors()[ti].data;
    const auto& g = grads.tensors()[ti].data;
    auto& m1 = state.first_moment.tensors()[ti].data;
    auto& m2 = state.second_moment.tensors()[ti].data;
    for (size_t i = 0; i < p.size(); ++i) {
      require_finite(g[i], "optimizer_step gradient");
      if (state.cfg.rule == OptimRule::sgd) {
        m1[i] = state.cfg.momentum * m1[i] + g[i];
        p[i] -= state.cfg.lr * m1[i];
      } else {
        m1[i] = state.cfg.beta1 * m1[i] + (1.0 - state.cfg.beta1) * g[i];
        m2[i] = state.cfg.beta2 * m2[i] + (1.0 - state.cfg.beta2) * g[i] * g[i];
        double mhat = m1[i] / (1.0 - std::pow(state.cfg.beta1, static_cast<double>(t)));
        double vhat = m2[i] / (1.0 - std::pow(state.cfg.beta2, static_cast<double>(t)));
        p[i] -= state.cfg.lr * mhat / (std::sqrt(vhat) + state.cfg.adam_eps);
      }
    }
  }
  state.step = t;
}

// Central-difference check of an analytic gradient. Returns the max relative
// error over all coordinates with denominator max(|analytic|, |numeric|, 1e-8).
inline double grad_check(const std::function<double(const ParamStore&)>& loss_fn,
                         const ParamStore& params, const GradStore& analytic, double eps) {
  require(eps >= 1e-6 && eps <= 1e-3, "grad_check: eps out of [1e-6, 1e-3]");
  require(params.same_layout(analytic), "grad_check: layout mismatch");
  ParamStore probe = params;
  std::vector<double> flat = params.flatten();
  std::vector<double> aflat = analytic.flatten();
  double max_rel = 0.0;
  for (size_t i = 0; i < flat.size(); ++i) {
    double orig = flat[i];
    flat[i] = orig + eps;
    probe.unflatten(flat);
    double f_plus = loss_fn(probe);
    flat[i] = orig - eps;
    probe.unflatten(flat);
    double f_minus = loss_fn(probe);
    flat[i] = orig;
    require_finite(f_plus, "grad_check loss probe");
    require_finite(f_minus, "grad_check loss probe");
    double numeric = (f_plus - f_minus) / (2.0 * eps);
    double denom = std::max({std::fabs(aflat[i]), std::fabs(numeric), 1e-8});
    double rel = std::fabs(aflat[i] - numeric) / denom;
    if (rel > max_rel) max_rel = rel;
  }
  return max_rel;
}

inline void fill_gaussian(Tensor& t, Rng& rng, double scale) {
  for (auto& v : t.data) v = scale * rng.gaussian();
}

}  // namespace dgdpo
