// SPDX-License-Identifier: Apache-2.0
//
// Deterministic DDIM step arithmetic with a pluggable noise predictor.
//
//   denoise:  z_{t-1} = sqrt(a_{t-1}/a_t) z_t + (sqrt(1/a_{t-1} - 1) - sqrt(1/a_t - 1)) eps
//   invert:   z_t     = sqrt(a_t/a_{t-1}) (z_{t-1} + (sqrt(1/a_t - 1) - sqrt(1/a_{t-1} - 1)) eps)
//
// invert is the exact algebraic inverse of denoise for a shared eps. Both
// directions query the predictor with the timestep label t of the transition
// t-1 <-> t; inversion evaluates it on the less noisy state z_{t-1}.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "vala/error.hpp"
#include "vala/tokens.hpp"

namespace vala::ddim {

/// alpha_0 .. alpha_T, strictly decreasing, all in (0, 1].
class DiffusionSchedule {
 public:
  explicit DiffusionSchedule(std::vector<double> alphas) : alphas_(std::move(alphas)) {
    if (alphas_.size() < 2) throw ConfigError("schedule needs at least alpha_0 and alpha_1");
    for (std::size_t t = 0; t < alphas_.size(); ++t) {
      if (!(alphas_[t] > 0.0 && alphas_[t] <= 1.0)) {
        throw ConfigError("alpha_" + std::to_string(t) + " must lie in (0, 1]");
      }
      if (t > 0 && !(alphas_[t] < alphas_[t - 1])) {
        throw ConfigError("alphas must be strictly decreasing (alpha_" + std::to_string(t) + ")");
      }
    }
  }

  int steps() const noexcept { return static_cast<int>(alphas_.size()) - 1; }
  double alpha(int t) const { return alphas_.at(static_cast<std::size_t>(t)); }
  const std::vector<double>& alphas() const noexcept { return alphas_; }

 private:
  std::vector<double> alphas_;
};

/// alpha_0 = 1, alpha_t = prod_{s<=t} (1 - beta_s), beta linear in s from beta_start to beta_end.
inline DiffusionSchedule linear_schedule(int steps, double beta_start = 1e-4,
                                         double beta_end = 2e-2) {
  if (steps < 1) throw ConfigError("schedule needs T >= 1");
  if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end)) {
    throw ConfigError("betas must satisfy 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> alphas{1.0};
  for (int s = 1; s <= steps; ++s) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(s - 1) / (steps - 1);
    const double beta = beta_start + (beta_end - beta_start) * frac;
    alphas.push_back(alphas.back() * (1.0 - beta));
  }
  return DiffusionSchedule(std::move(alphas));
}

using Latent = Vector;

/// Condition tag handed to the predictor; 0 is the null (unconditional) prompt.
using ConditionTag = int;
inline constexpr ConditionTag kNullCondition = 0;
inline constexpr ConditionTag kSourceCondition = 1;
inline constexpr ConditionTag kTargetCondition = 2;

/// (state, timestep, condition) -> predicted noise of the same shape.
using NoisePredictor = std::function<Latent(const Latent&, int, ConditionTag)>;

inline NoisePredictor zero_predictor() {
  return [](const Latent& z, int, ConditionTag) { return Latent::Zero(z.size()).eval(); };
}

/// Depends on the timestep (and condition) only: eps_i = scale * sin(0.37 t + 0.11 i + cond).
inline NoisePredictor timestep_predictor(double scale = 1.0) {
  return [scale](const Latent& z, int t, ConditionTag cond) {
    Latent out(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      out(i) = scale * std::sin(0.37 * t + 0.11 * static_cast<double>(i) + cond);
    }
    return out;
  };
}

/// eps = gain * z + offset(t); z-dependent, so round trips only approximately invert.
inline NoisePredictor linear_predictor(double gain = 0.05, double offset_scale = 0.1) {
  return [gain, offset_scale](const Latent& z, int t, ConditionTag cond) {
    Latent out = gain * z;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      out(i) += offset_scale * std::cos(0.21 * t + 0.05 * static_cast<double>(i) + cond);
    }
    return out;
  };
}

inline NoisePredictor make_predictor(const std::string& name) {
  if (name == "zero") return zero_predictor();
  if (name == "t-only" || name == "timestep") return timestep_predictor();
  if (name == "linear") return linear_predictor();
  throw ConfigError("unknown predictor '" + name + "' (expected zero|t-only|linear)");
}

/// Classifier-free guidance: w * eps_cond + (1 - w) * eps_uncond.
inline Latent cfg_combine(const Latent& eps_cond, const Latent& eps_uncond, double w) {
  if (eps_cond.size() != eps_uncond.size()) throw DimensionError("cfg_combine: shape mismatch");
  return w * eps_cond + (1.0 - w) * eps_uncond;
}

struct GuidanceConfig {
  double scale = 7.5;
  ConditionTag conditional = kSourceCondition;
  ConditionTag unconditional = kNullCondition;
};

/// Wraps a predictor so every query returns the guided combination; the
/// condition argument is ignored in favour of the guidance tags.
inline NoisePredictor guided(NoisePredictor base, GuidanceConfig guidance) {
  if (!std::isfinite(guidance.scale)) throw ConfigError("guidance scale must be finite");
  return [base = std::move(base), guidance](const Latent& z, int t, ConditionTag) {
    return cfg_combine(base(z, t, guidance.conditional), base(z, t, guidance.unconditional),
                       guidance.scale);
  };
}

namespace detail {

inline void check_step(int t, const DiffusionSchedule& sched) {
  if (t < 1 || t > sched.steps()) {
    throw ConfigError("timestep " + std::to_string(t) + " outside [1, " +
                      std::to_string(sched.steps()) + "]");
  }
}

inline double noise_gap(const DiffusionSchedule& sched, int t) {
  return std::sqrt(1.0 / sched.alpha(t) - 1.0) - std::sqrt(1.0 / sched.alpha(t - 1) - 1.0);
}

inline void check_shape(const Latent& z, const Latent& eps) {
  if (z.size() != eps.size()) throw DimensionError("noise prediction shape differs from latent");
}

}  // namespace detail

inline Latent denoise_step_with(const Latent& z_t, int t, const DiffusionSchedule& sched,
                                const Latent& eps) {
  detail::check_step(t, sched);
  detail::check_shape(z_t, eps);
  return std::sqrt(sched.alpha(t - 1) / sched.alpha(t)) * z_t - detail::noise_gap(sched, t) * eps;
}

inline Latent invert_step_with(const Latent& z_prev, int t, const DiffusionSchedule& sched,
                               const Latent& eps) {
  detail::check_step(t, sched);
  detail::check_shape(z_prev, eps);
  return std::sqrt(sched.alpha(t) / sched.alpha(t - 1)) *
         (z_prev + detail::noise_gap(sched, t) * eps);
}

/// z_t -> z_{t-1} with eps = pred(z_t, t, cond).
inline Latent denoise_step(const Latent& z_t, int t, const DiffusionSchedule& sched,
                           const NoisePredictor& pred, ConditionTag cond = kTargetCondition) {
  detail::check_step(t, sched);
  return denoise_step_with(z_t, t, sched, pred(z_t, t, cond));
}

/// z_{t-1} -> z_t with eps = pred(z_{t-1}, t, cond).
inline Latent invert_step(const Latent& z_prev, int t, const DiffusionSchedule& sched,
                          const NoisePredictor& pred, ConditionTag cond = kSourceCondition) {
  detail::check_step(t, sched);
  return invert_step_with(z_prev, t, sched, pred(z_prev, t, cond));
}

enum class Direction { invert, denoise };

/// Every intermediate state, starting with `start`: T+1 entries. invert walks
/// t = 1..T from z_0, denoise walks t = T..1 from z_T.
inline std::vector<Latent> run_trajectory(const Latent& start, const DiffusionSchedule& sched,
                                          const NoisePredictor& pred, Direction direction,
                                          ConditionTag cond) {
  std::vector<Latent> states;
  states.reserve(static_cast<std::size_t>(sched.steps()) + 1);
  states.push_back(start);
  if (direction == Direction::invert) {
    for (int t = 1; t <= sched.steps(); ++t) {
      states.push_back(invert_step(states.back(), t, sched, pred, cond));
    }
  } else {
    for (int t = sched.steps(); t >= 1; --t) {
      states.push_back(denoise_step(states.back(), t, sched, pred, cond));
    }
  }
  return states;
}

inline std::vector<Latent> run_trajectory(const Latent& start, const DiffusionSchedule& sched,
                                          const NoisePredictor& pred, Direction direction) {
  return run_trajectory(start, sched, pred, direction,
                        direction == Direction::invert ? kSourceCondition : kTargetCondition);
}

}  // namespace vala::ddim
