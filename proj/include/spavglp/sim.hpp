/*
 Copyright 2026 The spavglp Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#pragma once

/**
 * @file
 * @brief Associated, averaged and singularly perturbed trajectories.
 *
 * All integrators are fixed-step RK4 with the control sampled at the start of
 * each step and held through it. Step n stores the state x_n, the held
 * control u_n, and G(u_n, x_n); cost_end[n] = G(u_n, x_{n+1}). Every time
 * average is the trapezoid rule over these pairs, so an average of the exact
 * derivative of a function of the state telescopes up to RK4 error.
 */

#include "averaging.hpp"
#include "basis.hpp"
#include "control.hpp"
#include "model.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <shared_mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace spavglp {

class ViabilityViolation : public std::runtime_error {
 public:
  ViabilityViolation(const std::string& what, double time) : std::runtime_error(what), time_(time) {}
  double time() const { return time_; }

 private:
  double time_;
};

class ScheduleExhausted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NoPeriodDetected : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// States leaving their box by more than this end the run.
inline constexpr double kViabilityTolerance = 1e-6;

/// Rows are time points; state columns are [y, z].
struct Trajectory {
  int dim_y = 0;
  int dim_z = 0;
  int dim_u = 0;
  Vector times;
  Matrix states;
  Matrix controls;
  Vector cost;
  Vector cost_end;
  Vector running_cost_avg;
  bool viable = true;
  double exit_time = std::numeric_limits<double>::quiet_NaN();
  std::string exit_message;

  Eigen::Index size() const { return times.size(); }
  double horizon() const { return times.size() ? times[times.size() - 1] : 0.0; }
  double step() const { return times.size() > 1 ? times[1] - times[0] : 0.0; }
  Eigen::Index state_dim() const { return dim_y + dim_z; }
  auto y(Eigen::Index k) const { return states.row(k).head(dim_y).transpose(); }
  auto z(Eigen::Index k) const { return states.row(k).tail(dim_z).transpose(); }
  auto u(Eigen::Index k) const { return controls.row(k).transpose(); }
  /// G at the end of step k; falls back to cost[k + 1] when not recorded.
  double step_end_cost(Eigen::Index k) const {
    return k < cost_end.size() && !std::isnan(cost_end[k]) ? cost_end[k] : cost[k + 1];
  }

  /// First index with times[k] >= t (up to round-off).
  Eigen::Index index_at(double t) const {
    const double h = step();
    if (h <= 0.0) return 0;
    auto k = static_cast<Eigen::Index>(std::ceil((t - times[0]) / h - 1e-9));
    return std::clamp<Eigen::Index>(k, 0, size() - 1);
  }

  /// z(t) by linear interpolation between samples.
  Vector z_at(double t) const {
    const double h = step();
    if (size() == 0) throw ScheduleExhausted("empty trajectory");
    if (t > horizon() + 1e-9 * std::max(1.0, horizon()))
      throw ScheduleExhausted("time " + std::to_string(t) + " is past the trajectory horizon " +
                              std::to_string(horizon()));
    if (size() == 1 || t <= times[0]) return z(0);
    const double s = (t - times[0]) / h;
    auto k = static_cast<Eigen::Index>(std::floor(s));
    if (k >= size() - 1) return z(size() - 1);
    const double w = s - static_cast<double>(k);
    if (w <= 1e-9) return z(k);
    if (w >= 1.0 - 1e-9) return z(k + 1);
    return (1.0 - w) * z(k) + w * z(k + 1);
  }

  /// Samples with times >= t0, re-timed from zero.
  Trajectory after(double t0) const;
};

namespace detail {

/// Accumulates samples, then packs them into a Trajectory.
class Recorder {
 public:
  Recorder(int dim_y, int dim_z, int dim_u, Eigen::Index reserve) : dy_(dim_y), dz_(dim_z), du_(dim_u) {
    const auto r = static_cast<std::size_t>(std::max<Eigen::Index>(reserve, 1));
    times_.reserve(r);
    states_.reserve(r * static_cast<std::size_t>(dy_ + dz_));
    controls_.reserve(r * static_cast<std::size_t>(du_));
    cost_.reserve(r);
    cost_end_.reserve(r);
  }

  void push(double t, ConstVecRef x, ConstVecRef u, double cost) {
    times_.push_back(t);
    states_.insert(states_.end(), x.data(), x.data() + x.size());
    controls_.insert(controls_.end(), u.data(), u.data() + u.size());
    cost_.push_back(cost);
  }
  void push_end_cost(double c) { cost_end_.push_back(c); }

  Trajectory finish(bool viable, double exit_time, std::string message) {
    Trajectory tr;
    tr.dim_y = dy_;
    tr.dim_z = dz_;
    tr.dim_u = du_;
    const auto n = static_cast<Eigen::Index>(times_.size());
    tr.times = Eigen::Map<const Vector>(times_.data(), n);
    tr.states = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        states_.data(), n, dy_ + dz_);
    tr.controls = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        controls_.data(), n, du_);
    tr.cost = Eigen::Map<const Vector>(cost_.data(), n);
    tr.cost_end = Vector::Constant(n, std::numeric_limits<double>::quiet_NaN());
    for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(cost_end_.size()) && k < n; ++k)
      tr.cost_end[k] = cost_end_[static_cast<std::size_t>(k)];
    tr.running_cost_avg.resize(n);
    double integral = 0.0;
    if (n > 0) tr.running_cost_avg[0] = tr.cost[0];
    for (Eigen::Index k = 1; k < n; ++k) {
      integral += 0.5 * (tr.times[k] - tr.times[k - 1]) * (tr.cost[k - 1] + tr.cost_end[k - 1]);
      tr.running_cost_avg[k] = integral / (tr.times[k] - tr.times[0]);
    }
    tr.viable = viable;
    tr.exit_time = exit_time;
    tr.exit_message = std::move(message);
    return tr;
  }

 private:
  int dy_, dz_, du_;
  std::vector<double> times_, states_, controls_, cost_, cost_end_;
};

inline Eigen::Index step_count(double horizon, double dt) {
  if (!(dt > 0.0) || !(horizon >= 0.0)) throw std::invalid_argument("integration: need dt > 0 and horizon >= 0");
  return static_cast<Eigen::Index>(std::llround(horizon / dt));
}

/// Nonzero when x leaves box by more than the viability tolerance.
inline double box_exit(const Box& box, ConstVecRef x) { return box.excess(x) > kViabilityTolerance ? box.excess(x) : 0.0; }

}  // namespace detail

inline Trajectory Trajectory::after(double t0) const {
  const Eigen::Index k0 = index_at(t0);
  const Eigen::Index n = size() - k0;
  Trajectory tr = *this;
  tr.times = (times.tail(n).array() - times[k0]).matrix();
  tr.states = states.bottomRows(n);
  tr.controls = controls.bottomRows(n);
  tr.cost = cost.tail(n);
  tr.cost_end = cost_end.tail(n);
  tr.running_cost_avg.resize(n);
  double integral = 0.0;
  if (n > 0) tr.running_cost_avg[0] = tr.cost[0];
  for (Eigen::Index k = 1; k < n; ++k) {
    integral += 0.5 * (tr.times[k] - tr.times[k - 1]) * (tr.cost[k - 1] + tr.step_end_cost(k - 1));
    tr.running_cost_avg[k] = integral / tr.times[k];
  }
  return tr;
}

// ---------------------------------------------------------------------------
// Associated system y' = f(u(y), y, z) with z frozen.

namespace detail {

/// Streams RK4 steps of the associated system to visit(tau, y, u, y_next).
/// Returns the exit time, or NaN when the run stays in Y.
template <class Visit>
double run_associated(const ControlProblem& p, const ControlLaw& law, ConstVecRef z, ConstVecRef y0,
                      double tau_max, double dtau, Visit&& visit) {
  const Eigen::Index steps = step_count(tau_max, dtau);
  Vector y = y0, u(p.dim_u), k1(p.dim_y), k2(p.dim_y), k3(p.dim_y), k4(p.dim_y), tmp(p.dim_y), next(p.dim_y);
  for (Eigen::Index n = 0; n < steps; ++n) {
    const double tau = static_cast<double>(n) * dtau;
    law(p.y_box.clamp(y), z, u);
    p.fast(u, y, z, k1);
    tmp = y + 0.5 * dtau * k1;
    p.fast(u, tmp, z, k2);
    tmp = y + 0.5 * dtau * k2;
    p.fast(u, tmp, z, k3);
    tmp = y + dtau * k3;
    p.fast(u, tmp, z, k4);
    next = y + (dtau / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    visit(tau, y, u, next);
    y = next;
    if (box_exit(p.y_box, y) > 0.0) return static_cast<double>(n + 1) * dtau;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

}  // namespace detail

inline Trajectory integrate_associated(const ControlProblem& p, const ControlLaw& law, ConstVecRef z,
                                       ConstVecRef y0, double tau_max, double dtau) {
  require_in_box(p.z_box, z, "z");
  require_in_box(p.y_box, y0, "y0");
  if (!(dtau > 0.0) || dtau > 0.05 + 1e-15)
    throw std::invalid_argument("integrate_associated: need 0 < dtau <= 0.05");
  const Eigen::Index steps = detail::step_count(tau_max, dtau);
  detail::Recorder rec(p.dim_y, p.dim_z, p.dim_u, steps + 1);
  Vector x(p.dim_y + p.dim_z);
  x.tail(p.dim_z) = z;
  Vector last = y0;
  Eigen::Index done = 0;
  const double exit = detail::run_associated(
      p, law, z, y0, tau_max, dtau, [&](double tau, ConstVecRef y, ConstVecRef u, ConstVecRef next) {
        x.head(p.dim_y) = y;
        rec.push(tau, x, u, p.cost(u, y, z));
        rec.push_end_cost(p.cost(u, next, z));
        last = next;
        ++done;
      });
  Vector u(p.dim_u);
  law(p.y_box.clamp(last), z, u);
  x.head(p.dim_y) = last;
  rec.push(static_cast<double>(done) * dtau, x, u, p.cost(u, last, z));
  const bool viable = std::isnan(exit);
  return rec.finish(viable, exit, viable ? "" : "fast state left Y");
}

struct AssociatedSettings {
  double horizon = 200.0;
  double warmup = 20.0;
  double dtau = 0.05;

  void validate() const {
    if (!(dtau > 0.0) || dtau > 0.05 + 1e-15) throw std::invalid_argument("AssociatedSettings: need 0 < dtau <= 0.05");
    if (!(warmup >= 0.0) || !(horizon > warmup))
      throw std::invalid_argument("AssociatedSettings: need 0 <= warmup < horizon");
  }
};

/// Long-run averages of g and G along one closed-loop associated run.
struct AssociatedAverage {
  Vector g;
  double G = 0.0;
  /// Fast state at the end of the run.
  Vector y_end;
};

inline AssociatedAverage associated_average(const ControlProblem& p, const ControlLaw& law, ConstVecRef z,
                                            ConstVecRef y0, const AssociatedSettings& s) {
  require_in_box(p.z_box, z, "z");
  s.validate();
  AssociatedAverage out;
  out.g = Vector::Zero(p.dim_z);
  Vector g0(p.dim_z), g1(p.dim_z);
  double span = 0.0;
  const double exit = detail::run_associated(
      p, law, z, y0, s.horizon, s.dtau, [&](double tau, ConstVecRef y, ConstVecRef u, ConstVecRef next) {
        out.y_end = next;
        if (tau < s.warmup - 1e-9 * s.dtau) return;
        p.slow(u, y, z, g0);
        p.slow(u, next, z, g1);
        out.g += 0.5 * s.dtau * (g0 + g1);
        out.G += 0.5 * s.dtau * (p.cost(u, y, z) + p.cost(u, next, z));
        span += s.dtau;
      });
  if (!std::isnan(exit)) throw ViabilityViolation("associated run left Y", exit);
  out.g /= span;
  out.G /= span;
  return out;
}

/// Initial fast state of the associated run at z.
using InitialFastState = std::function<Vector(ConstVecRef z)>;

/**
 * Right-hand side z' = g_tilde(z) of the averaged system, realized by
 * closed-loop associated runs and memoized on z rounded to 1e-4. The run for
 * a cell is made at the rounded point itself, so results do not depend on
 * query order. Concurrent reads are shared; insertion is exclusive.
 */
class AveragedSystem {
 public:
  static constexpr double kQuantum = 1e-4;

  AveragedSystem(ControlProblem problem, ControlLaw law, InitialFastState initial = {},
                 AssociatedSettings settings = {})
      : problem_(std::move(problem)), law_(std::move(law)), initial_(std::move(initial)), settings_(settings) {
    settings_.validate();
    if (!initial_) {
      const Vector c = problem_.y_box.center();
      initial_ = [c](ConstVecRef) { return c; };
    }
  }

  AveragedSystem(const FeedbackLaw& law, AssociatedSettings settings = {})
      : AveragedSystem(law.problem(), law.as_law(), [law](ConstVecRef z) { return law.initial_fast_state(z); },
                       settings) {}

  const ControlProblem& problem() const { return problem_; }
  const ControlLaw& law() const { return law_; }
  const AssociatedSettings& settings() const { return settings_; }

  Vector quantize(ConstVecRef z) const {
    Vector q(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) q[i] = std::round(z[i] / kQuantum) * kQuantum;
    return problem_.z_box.clamp(q);
  }

  std::shared_ptr<const AssociatedAverage> rates(ConstVecRef z) const {
    require_in_box(problem_.z_box, z, "z");
    std::vector<long long> key(static_cast<std::size_t>(z.size()));
    for (Eigen::Index i = 0; i < z.size(); ++i) key[static_cast<std::size_t>(i)] = std::llround(z[i] / kQuantum);
    {
      std::shared_lock lock(mutex_);
      auto it = cache_.find(key);
      if (it != cache_.end()) return it->second;
    }
    const Vector zq = quantize(z);
    auto fresh = std::make_shared<AssociatedAverage>(associated_average(problem_, law_, zq, initial_(zq), settings_));
    std::unique_lock lock(mutex_);
    return cache_.emplace(key, std::move(fresh)).first->second;
  }

  Vector g_tilde(ConstVecRef z) const { return rates(z)->g; }
  double G_tilde(ConstVecRef z) const { return rates(z)->G; }
  std::size_t cache_size() const {
    std::shared_lock lock(mutex_);
    return cache_.size();
  }

 private:
  ControlProblem problem_;
  ControlLaw law_;
  InitialFastState initial_;
  AssociatedSettings settings_;
  mutable std::shared_mutex mutex_;
  mutable std::map<std::vector<long long>, std::shared_ptr<const AssociatedAverage>> cache_;
};

/// Time average of g after warmup of one associated run of length S from the center of Y.
inline Vector g_tilde(const ControlProblem& p, const ControlLaw& law, ConstVecRef z, double S, double warmup) {
  AssociatedSettings s;
  s.horizon = S;
  s.warmup = warmup;
  return associated_average(p, law, z, p.y_box.center(), s).g;
}

inline Vector g_tilde(const FeedbackLaw& law, ConstVecRef z, double S, double warmup) {
  AssociatedSettings s;
  s.horizon = S;
  s.warmup = warmup;
  return associated_average(law.problem(), law.as_law(), z, law.initial_fast_state(z), s).g;
}

// ---------------------------------------------------------------------------
// Averaged system z' = g_tilde(z).

/// RK4 on the averaged system. cost[n] is G_tilde(z_n). Stops at a Z exit.
inline Trajectory integrate_averaged(const AveragedSystem& sys, ConstVecRef z0, double t_max, double dt) {
  const auto& p = sys.problem();
  require_in_box(p.z_box, z0, "z0");
  const Eigen::Index steps = detail::step_count(t_max, dt);
  detail::Recorder rec(0, p.dim_z, 0, steps + 1);
  const Vector none(0);
  Vector z = z0;
  auto rhs = [&](ConstVecRef x) { return sys.g_tilde(p.z_box.clamp(x)); };
  double exit = std::numeric_limits<double>::quiet_NaN();
  double prev_cost = sys.G_tilde(z);
  for (Eigen::Index n = 0; n < steps; ++n) {
    rec.push(static_cast<double>(n) * dt, z, none, prev_cost);
    const Vector k1 = rhs(z);
    const Vector k2 = rhs(z + 0.5 * dt * k1);
    const Vector k3 = rhs(z + 0.5 * dt * k2);
    const Vector k4 = rhs(z + dt * k3);
    z += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (detail::box_exit(p.z_box, z) > 0.0) {
      exit = static_cast<double>(n + 1) * dt;
      rec.push_end_cost(prev_cost);
      break;
    }
    prev_cost = sys.G_tilde(z);
    rec.push_end_cost(prev_cost);
    if (n + 1 == steps) rec.push(static_cast<double>(n + 1) * dt, z, none, prev_cost);
  }
  if (steps == 0) rec.push(0.0, z, none, prev_cost);
  const bool viable = std::isnan(exit);
  if (!viable) {
    // The exiting state is recorded so the violation is visible.
    rec.push(exit, z, none, prev_cost);
  }
  return rec.finish(viable, exit, viable ? "" : "averaged state left Z");
}

inline Trajectory integrate_averaged(const FeedbackLaw& law, ConstVecRef z0, double t_max, double dt,
                                     AssociatedSettings settings = {}) {
  return integrate_averaged(AveragedSystem(law, settings), z0, t_max, dt);
}

// ---------------------------------------------------------------------------
// Singularly perturbed system with the two-timescale schedule.

struct ScheduleParams {
  double epsilon = 0.01;
  /// Slow partition step.
  double delta = 0.1;
  double dt = 5e-4;

  /// delta = max(sqrt(eps), 10 eps) and dt = min(eps / 20, 1e-3).
  static ScheduleParams defaults(double epsilon) {
    ScheduleParams s;
    s.epsilon = epsilon;
    s.delta = std::max(std::sqrt(epsilon), 10.0 * epsilon);
    s.dt = std::min(epsilon / 20.0, 1e-3);
    return s;
  }

  void validate() const {
    if (!(epsilon > 0.0) || !(delta > 0.0) || !(dt > 0.0))
      throw std::invalid_argument("ScheduleParams: epsilon, delta and dt must be positive");
    if (delta / epsilon < 10.0 * (1.0 - 1e-12))
      throw std::invalid_argument("ScheduleParams: delta / epsilon must be at least 10");
    if (delta > 0.5 * (1.0 + 1e-12)) throw std::invalid_argument("ScheduleParams: delta must not exceed 0.5");
    if (dt > epsilon / 20.0 * (1.0 + 1e-12)) throw std::invalid_argument("ScheduleParams: dt must not exceed epsilon / 20");
  }
};

/// Start t_l of the partition interval containing t, right-continuous.
inline double schedule_start(double t, double delta) {
  if (t < 0.0) throw std::invalid_argument("schedule: t must be nonnegative");
  const double l = std::floor(t / delta + 1e-9);
  return l * delta;
}

/// feedback(y, z(t_l)) with z(t_l) read from the stored averaged trajectory.
inline void sp_schedule_control(const ControlLaw& law, const Trajectory& averaged, const ScheduleParams& params,
                                double t, ConstVecRef y, VecRef u) {
  const double tl = schedule_start(t, params.delta);
  law(y, averaged.z_at(tl), u);
}

inline Vector sp_schedule_control(const FeedbackLaw& law, const Trajectory& averaged, const ScheduleParams& params,
                                  double t, ConstVecRef y) {
  Vector u(law.problem().dim_u);
  sp_schedule_control(law.as_law(), averaged, params, t, y, u);
  return u;
}

/// RK4 on eps y' = f, z' = g with the scheduled control. Stops at a box exit.
inline Trajectory integrate_sp(const ControlProblem& p, const ControlLaw& law, const Trajectory& averaged,
                               const ScheduleParams& params, ConstVecRef y0, ConstVecRef z0, double T) {
  params.validate();
  require_in_box(p.y_box, y0, "y0");
  require_in_box(p.z_box, z0, "z0");
  const Eigen::Index steps = detail::step_count(T, params.dt);
  const double h = params.dt;
  const int dy = p.dim_y, dz = p.dim_z;
  detail::Recorder rec(dy, dz, p.dim_u, steps + 1);
  Vector x(dy + dz), u(p.dim_u), tmp(dy + dz), k1(dy + dz), k2(dy + dz), k3(dy + dz), k4(dy + dz);
  Vector fy(dy), gz(dz);
  x << y0, z0;
  auto rhs = [&](ConstVecRef s, VecRef out) {
    p.fast(u, s.head(dy), s.tail(dz), fy);
    p.slow(u, s.head(dy), s.tail(dz), gz);
    out.head(dy) = fy / params.epsilon;
    out.tail(dz) = gz;
  };
  double exit = std::numeric_limits<double>::quiet_NaN();
  std::string message;
  Eigen::Index n = 0;
  for (; n < steps; ++n) {
    const double t = static_cast<double>(n) * h;
    sp_schedule_control(law, averaged, params, t, p.y_box.clamp(x.head(dy)), u);
    rec.push(t, x, u, p.cost(u, x.head(dy), x.tail(dz)));
    rhs(x, k1);
    tmp = x + 0.5 * h * k1;
    rhs(tmp, k2);
    tmp = x + 0.5 * h * k2;
    rhs(tmp, k3);
    tmp = x + h * k3;
    rhs(tmp, k4);
    x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    rec.push_end_cost(p.cost(u, x.head(dy), x.tail(dz)));
    if (detail::box_exit(p.y_box, x.head(dy)) > 0.0 || detail::box_exit(p.z_box, x.tail(dz)) > 0.0) {
      exit = static_cast<double>(n + 1) * h;
      message = detail::box_exit(p.y_box, x.head(dy)) > 0.0 ? "fast state left Y" : "slow state left Z";
      ++n;
      break;
    }
  }
  const double tN = static_cast<double>(n) * h;
  if (std::isnan(exit) && tN <= averaged.horizon() + 1e-9)
    sp_schedule_control(law, averaged, params, tN, p.y_box.clamp(x.head(dy)), u);
  rec.push(tN, x, u, p.cost(u, x.head(dy), x.tail(dz)));
  return rec.finish(std::isnan(exit), exit, message);
}

// ---------------------------------------------------------------------------
// Averages, occupational measures and periods.

/// Trapezoidal time average of the recorded cost over [warmup, horizon].
inline double long_run_average(const Trajectory& tr, double warmup) {
  if (tr.size() < 2) throw std::invalid_argument("long_run_average: need at least 2 samples");
  if (!(warmup < tr.horizon())) throw std::invalid_argument("long_run_average: warmup must be below the horizon");
  const Eigen::Index k0 = tr.index_at(warmup);
  double integral = 0.0;
  for (Eigen::Index k = k0; k + 1 < tr.size(); ++k)
    integral += 0.5 * (tr.times[k + 1] - tr.times[k]) * (tr.cost[k] + tr.step_end_cost(k));
  return integral / (tr.horizon() - tr.times[k0]);
}

/// h(u, y, z).
using StateFunction = std::function<double(ConstVecRef u, ConstVecRef y, ConstVecRef z)>;

struct OccupationalEstimate {
  Vector moments;
  double horizon = 0.0;
  double warmup = 0.0;
};

/// Trapezoidal time averages of each h over [warmup, horizon].
inline OccupationalEstimate occupational_measure(const Trajectory& tr, const std::vector<StateFunction>& h,
                                                 double warmup = 0.0) {
  if (tr.size() < 2) throw std::invalid_argument("occupational_measure: need at least 2 samples");
  if (!(warmup < tr.horizon())) throw std::invalid_argument("occupational_measure: warmup must be below the horizon");
  OccupationalEstimate est;
  est.horizon = tr.horizon();
  est.warmup = warmup;
  est.moments = Vector::Zero(static_cast<Eigen::Index>(h.size()));
  const Eigen::Index k0 = tr.index_at(warmup);
  for (Eigen::Index k = k0; k + 1 < tr.size(); ++k) {
    const double w = 0.5 * (tr.times[k + 1] - tr.times[k]);
    const Vector u = tr.u(k);
    const Vector y0 = tr.y(k), y1 = tr.y(k + 1);
    const Vector z0 = tr.z(k), z1 = tr.z(k + 1);
    for (std::size_t i = 0; i < h.size(); ++i)
      est.moments[static_cast<Eigen::Index>(i)] += w * (h[i](u, y0, z0) + h[i](u, y1, z1));
  }
  est.moments /= tr.horizon() - tr.times[k0];
  return est;
}

/// h_i = grad phi_i(y)^T f(u, y, z) for each fast test function.
inline std::vector<StateFunction> fast_moment_functions(const ControlProblem& p, const MonomialBasis& basis_y) {
  std::vector<StateFunction> out;
  for (int i = 0; i < basis_y.count(); ++i)
    out.push_back([p, basis_y, i](ConstVecRef u, ConstVecRef y, ConstVecRef z) {
      Vector f(p.dim_y);
      p.fast(u, y, z, f);
      return basis_y.gradient(i, y).dot(f);
    });
  return out;
}

/// Mean gap between upward crossings of the mean by state column `component`.
inline double estimate_period(const Trajectory& tr, int component) {
  if (component < 0 || component >= tr.state_dim()) throw std::out_of_range("estimate_period: bad component");
  const Vector x = tr.states.col(component);
  const double mean = x.mean();
  std::vector<double> crossings;
  for (Eigen::Index k = 0; k + 1 < x.size(); ++k) {
    const double a = x[k] - mean, b = x[k + 1] - mean;
    if (a < 0.0 && b >= 0.0) crossings.push_back(tr.times[k] + (tr.times[k + 1] - tr.times[k]) * (-a) / (b - a));
  }
  if (crossings.size() < 3)
    throw NoPeriodDetected("estimate_period: found " + std::to_string(crossings.size()) + " upward crossings, need 3");
  return (crossings.back() - crossings.front()) / static_cast<double>(crossings.size() - 1);
}

/// sup over samples of `sp` with t <= t_max of |z_sp(t) - z_averaged(t)|.
inline double max_slow_gap(const Trajectory& sp, const Trajectory& averaged,
                           double t_max = std::numeric_limits<double>::infinity()) {
  double gap = 0.0;
  const double end = std::min(t_max, averaged.horizon());
  for (Eigen::Index k = 0; k < sp.size() && sp.times[k] <= end + 1e-9; ++k)
    gap = std::max(gap, (sp.z(k) - averaged.z_at(std::min(sp.times[k], averaged.horizon()))).norm());
  return gap;
}

/// Poincare return map on upward crossings of the mean by state column
/// `component`, using samples after `warmup`.
struct OrbitClosure {
  double period = 0.0;
  /// max over successive crossings of the sup-norm distance between the
  /// interpolated states.
  double max_gap = 0.0;
  int crossings = 0;
};

inline OrbitClosure orbit_closure(const Trajectory& tr, int component, double warmup) {
  if (component < 0 || component >= tr.state_dim()) throw std::out_of_range("orbit_closure: bad component");
  const Trajectory tail = tr.after(warmup);
  const Vector x = tail.states.col(component);
  const double mean = x.mean();
  std::vector<double> times;
  std::vector<Vector> states;
  for (Eigen::Index k = 0; k + 1 < x.size(); ++k) {
    const double a = x[k] - mean, b = x[k + 1] - mean;
    if (!(a < 0.0 && b >= 0.0)) continue;
    const double w = -a / (b - a);
    times.push_back(tail.times[k] + w * (tail.times[k + 1] - tail.times[k]));
    states.push_back((1.0 - w) * tail.states.row(k).transpose() + w * tail.states.row(k + 1).transpose());
  }
  if (times.size() < 3)
    throw NoPeriodDetected("orbit_closure: found " + std::to_string(times.size()) + " upward crossings, need 3");
  OrbitClosure out;
  out.crossings = static_cast<int>(times.size());
  out.period = (times.back() - times.front()) / static_cast<double>(times.size() - 1);
  for (std::size_t i = 1; i < states.size(); ++i)
    out.max_gap = std::max(out.max_gap, (states[i] - states[i - 1]).cwiseAbs().maxCoeff());
  return out;
}

/// Moments of a monomial dictionary in (u, y, z) along a trajectory and under
/// the structured solution sum_k p_k q_j^k delta(u_j^k, y_j^k, z_k).
struct MomentReport {
  std::vector<MonomialBasis::MultiIndex> exponents;
  Vector trajectory;
  Vector structured;
  double max_difference = 0.0;
};

inline MomentReport sp_occupational_measure(const Trajectory& tr, const StructuredSolution& sol, int max_degree,
                                           double warmup = 0.0) {
  MomentReport rep;
  if (max_degree < 1) return rep;
  const int du = tr.dim_u, dy = tr.dim_y, dz = tr.dim_z;
  const MonomialBasis dict(du + dy + dz, max_degree);
  rep.exponents = dict.multi_indices();
  auto joint = [&](ConstVecRef u, ConstVecRef y, ConstVecRef z) {
    Vector v(du + dy + dz);
    v << u, y, z;
    return v;
  };
  std::vector<StateFunction> h;
  for (int i = 0; i < dict.count(); ++i)
    h.push_back([&, i](ConstVecRef u, ConstVecRef y, ConstVecRef z) { return dict.value(i, joint(u, y, z)); });
  rep.trajectory = occupational_measure(tr, h, warmup).moments;
  rep.structured = Vector::Zero(dict.count());
  const DiscreteMeasure m = sol.flattened();
  for (Eigen::Index a = 0; a < m.size(); ++a) {
    const Vector v = joint(m.u.col(a), m.y.col(a), m.z.col(a));
    for (int i = 0; i < dict.count(); ++i) rep.structured[i] += m.weights[a] * dict.value(i, v);
  }
  rep.max_difference = dict.count() ? (rep.trajectory - rep.structured).cwiseAbs().maxCoeff() : 0.0;
  return rep;
}

// ---------------------------------------------------------------------------
// CSV.

/// Header t,y1..,z1..,u1..,G,run_avg; 17 significant digits.
inline void write_csv(std::ostream& out, const Trajectory& tr) {
  out << "t";
  for (int i = 0; i < tr.dim_y; ++i) out << ",y" << i + 1;
  for (int i = 0; i < tr.dim_z; ++i) out << ",z" << i + 1;
  for (int i = 0; i < tr.dim_u; ++i) out << ",u" << i + 1;
  out << ",G,run_avg\n";
  out << std::setprecision(17);
  for (Eigen::Index k = 0; k < tr.size(); ++k) {
    out << tr.times[k];
    for (Eigen::Index c = 0; c < tr.states.cols(); ++c) out << ',' << tr.states(k, c);
    for (Eigen::Index c = 0; c < tr.controls.cols(); ++c) out << ',' << tr.controls(k, c);
    out << ',' << tr.cost[k] << ',' << tr.running_cost_avg[k] << '\n';
  }
}

inline void write_csv(const std::string& path, const Trajectory& tr) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  write_csv(f, tr);
  if (!f) throw std::runtime_error("error writing " + path);
}

/// Inverse of write_csv. cost_end and viability are not stored and are left
/// as NaN and true.
inline Trajectory read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("read_csv: empty input");
  std::vector<std::string> names;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) names.push_back(cell);
  }
  Trajectory tr;
  for (const auto& n : names) {
    if (n.size() > 1 && n[0] == 'y') ++tr.dim_y;
    if (n.size() > 1 && n[0] == 'z') ++tr.dim_z;
    if (n.size() > 1 && n[0] == 'u') ++tr.dim_u;
  }
  const std::size_t width = names.size();
  if (width != static_cast<std::size_t>(3 + tr.dim_y + tr.dim_z + tr.dim_u) || names.front() != "t")
    throw std::runtime_error("read_csv: unexpected header");
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (row.size() != width) throw std::runtime_error("read_csv: ragged row");
    rows.push_back(std::move(row));
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  const int ds = tr.dim_y + tr.dim_z;
  tr.times.resize(n);
  tr.states.resize(n, ds);
  tr.controls.resize(n, tr.dim_u);
  tr.cost.resize(n);
  tr.running_cost_avg.resize(n);
  tr.cost_end = Vector::Constant(n, std::numeric_limits<double>::quiet_NaN());
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto& r = rows[static_cast<std::size_t>(k)];
    tr.times[k] = r[0];
    for (int c = 0; c < ds; ++c) tr.states(k, c) = r[static_cast<std::size_t>(1 + c)];
    for (int c = 0; c < tr.dim_u; ++c) tr.controls(k, c) = r[static_cast<std::size_t>(1 + ds + c)];
    tr.cost[k] = r[width - 2];
    tr.running_cost_avg[k] = r[width - 1];
  }
  return tr;
}

inline Trajectory read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  return read_csv(f);
}

}  // namespace spavglp
