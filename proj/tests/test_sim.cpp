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

#include <spavglp/sim.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace spavglp;

namespace {

const double kPi = std::acos(-1.0);

ControlLaw constant_law(Vector u) {
  return [u](ConstVecRef, ConstVecRef, VecRef out) { out = u; };
}

/// Slow dynamics independent of (u, y); the fast part is the example's.
ControlProblem linear_oscillator() {
  ControlProblem p = make_gr_example();
  p.name = "oscillator";
  p.slow = [](ConstVecRef, ConstVecRef, ConstVecRef z, VecRef out) {
    out[0] = z[1];
    out[1] = -4.0 * z[0];
  };
  return p;
}

ControlProblem frozen_slow() {
  ControlProblem p = make_gr_example();
  p.slow = [](ConstVecRef, ConstVecRef, ConstVecRef, VecRef out) { out.setZero(); };
  return p;
}

/// Builds a trajectory from a time grid and a cost function of time.
Trajectory synthetic(double T, double dt, const std::function<double(double)>& cost) {
  Trajectory tr;
  tr.dim_z = 1;
  const auto n = static_cast<Eigen::Index>(std::llround(T / dt)) + 1;
  tr.times = Vector::LinSpaced(n, 0.0, T);
  tr.states = Matrix::Zero(n, 1);
  tr.controls = Matrix::Zero(n, 0);
  tr.cost.resize(n);
  tr.cost_end.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    tr.cost[k] = cost(tr.times[k]);
    tr.cost_end[k] = k + 1 < n ? cost(tr.times[k + 1]) : std::nan("");
  }
  tr.running_cost_avg = Vector::Zero(n);
  return tr;
}

}  // namespace

TEST(Associated, ZeroControlDecaysExponentially) {
  const auto p = make_gr_example();
  const auto tr = integrate_associated(p, constant_law(Vector::Zero(2)), Vector::Zero(2), Vector{{1.0, 1.0}}, 5.0, 0.01);
  EXPECT_TRUE(tr.viable);
  EXPECT_NEAR(tr.horizon(), 5.0, 1e-12);
  EXPECT_LE(tr.y(tr.size() - 1).norm(), std::exp(-5.0) * std::sqrt(2.0) + 1e-6);
}

TEST(Associated, ContractionUnderSharedControls) {
  const auto p = make_gr_example();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int law_index = 0; law_index < 20; ++law_index) {
    // Piecewise-constant open-loop control, replayed identically for both starts.
    std::vector<Vector> sequence;
    for (int k = 0; k < 400; ++k) sequence.push_back(Vector{{unit(rng), unit(rng)}});
    auto make_law = [&sequence]() {
      auto step = std::make_shared<std::size_t>(0);
      return ControlLaw([&sequence, step](ConstVecRef, ConstVecRef, VecRef u) {
        u = sequence[(*step)++ / 25 % sequence.size()];
      });
    };
    const Vector a{{unit(rng), unit(rng)}}, b{{unit(rng), unit(rng)}};
    const auto ta = integrate_associated(p, make_law(), Vector::Zero(2), a, 4.0, 0.01);
    const auto tb = integrate_associated(p, make_law(), Vector::Zero(2), b, 4.0, 0.01);
    for (Eigen::Index k = 0; k + 1 < ta.size(); k += 50) {
      const double gap = (ta.y(k) - tb.y(k)).norm();
      EXPECT_LE(gap, 1.01 * std::exp(-ta.times[k]) * (a - b).norm() + 1e-12);
      EXPECT_GE(gap, std::exp(-ta.times[k]) * (a - b).norm() / 1.01 - 1e-12);
    }
  }
}

TEST(Associated, LeavingYIsRecorded) {
  ControlProblem p = make_gr_example();
  p.fast = [](ConstVecRef, ConstVecRef, ConstVecRef, VecRef out) { out.setConstant(1.0); };
  const auto tr = integrate_associated(p, constant_law(Vector::Zero(2)), Vector::Zero(2), Vector::Zero(2), 5.0, 0.05);
  EXPECT_FALSE(tr.viable);
  EXPECT_NEAR(tr.exit_time, 1.05, 1e-9);
  EXPECT_LT(tr.horizon(), 5.0);
  EXPECT_THROW(associated_average(p, constant_law(Vector::Zero(2)), Vector::Zero(2), Vector::Zero(2), {}),
               ViabilityViolation);
}

TEST(Associated, StepLimitEnforced) {
  const auto p = make_gr_example();
  EXPECT_THROW(integrate_associated(p, constant_law(Vector::Zero(2)), Vector::Zero(2), Vector::Zero(2), 1.0, 0.1),
               std::invalid_argument);
}

TEST(Trajectory, PrefixAveragesAreRederivable) {
  const auto p = make_gr_example();
  const ControlLaw law = [](ConstVecRef y, ConstVecRef, VecRef u) { u << -y[1], y[0]; };
  const auto tr = integrate_associated(p, law, Vector{{0.5, 0.5}}, Vector{{0.3, -0.7}}, 10.0, 0.05);
  double integral = 0.0;
  for (Eigen::Index k = 0; k + 1 < tr.size(); ++k) {
    const Vector u = tr.u(k), y0 = tr.y(k), y1 = tr.y(k + 1), z = tr.z(k);
    integral += 0.5 * (tr.times[k + 1] - tr.times[k]) * (p.cost(u, y0, z) + p.cost(u, y1, z));
    EXPECT_NEAR(tr.running_cost_avg[k + 1], integral / tr.times[k + 1], 1e-12);
  }
}

TEST(Occupational, ConstantTrajectoryGivesPointMass) {
  Trajectory tr = synthetic(10.0, 0.5, [](double) { return 0.0; });
  tr.states.setConstant(0.75);
  const std::vector<StateFunction> h = {[](ConstVecRef, ConstVecRef, ConstVecRef z) { return z[0] * z[0] + 1.0; }};
  EXPECT_DOUBLE_EQ(occupational_measure(tr, h, 2.0).moments[0], 0.75 * 0.75 + 1.0);
}

TEST(Occupational, DecayingTailIsNegligible) {
  const auto p = make_gr_example();
  const auto tr = integrate_associated(p, constant_law(Vector::Zero(2)), Vector::Zero(2), Vector{{1.0, 0.0}}, 100.0, 0.05);
  const std::vector<StateFunction> h = {[](ConstVecRef, ConstVecRef y, ConstVecRef) { return y[0] * y[0]; }};
  const auto est = occupational_measure(tr, h, 20.0);
  EXPECT_LE(est.moments[0], 1e-10);
  EXPECT_DOUBLE_EQ(est.warmup, 20.0);
  EXPECT_DOUBLE_EQ(est.horizon, 100.0);
}

TEST(Occupational, DerivativeMomentsShrinkWithHorizon) {
  const auto p = make_gr_example();
  const ControlLaw law = [](ConstVecRef y, ConstVecRef, VecRef u) {
    u << (y[1] > 0 ? 1.0 : -1.0), (y[0] > 0 ? -1.0 : 1.0);
  };
  const MonomialBasis by(2, 3);
  const auto h = fast_moment_functions(p, by);
  const auto a = occupational_measure(integrate_associated(p, law, Vector::Zero(2), Vector::Zero(2), 100.0, 0.01), h, 20.0);
  const auto b = occupational_measure(integrate_associated(p, law, Vector::Zero(2), Vector::Zero(2), 180.0, 0.01), h, 20.0);
  EXPECT_LE(a.moments.cwiseAbs().maxCoeff(), 0.05);
  EXPECT_LE(b.moments.cwiseAbs().maxCoeff(), a.moments.cwiseAbs().maxCoeff() * 1.5);
}

TEST(GTilde, IndependentOfFastVariables) {
  const auto p = linear_oscillator();
  const Vector z{{0.4, -1.3}};
  const Vector g = g_tilde(p, constant_law(Vector{{0.5, -0.5}}), z, 30.0, 5.0);
  EXPECT_NEAR(g[0], -1.3, 1e-12);
  EXPECT_NEAR(g[1], -1.6, 1e-12);
}

TEST(GTilde, ConstantControlCancelsCoupling) {
  const auto p = make_gr_example();
  const Vector z{{1.0, 2.0}};
  const Vector g = g_tilde(p, constant_law(Vector{{0.6, -0.8}}), z, 200.0, 20.0);
  EXPECT_NEAR(g[0], 2.0, 1e-9);
  EXPECT_NEAR(g[1], -4.0 - 0.6, 1e-7);
}

TEST(GTilde, MemoizedOnRoundedZ) {
  const auto p = linear_oscillator();
  AssociatedSettings s;
  s.horizon = 2.0;
  s.warmup = 1.0;
  const AveragedSystem sys(p, constant_law(Vector::Zero(2)), {}, s);
  const auto a = sys.rates(Vector{{0.10001, 0.2}});
  const auto b = sys.rates(Vector{{0.100012, 0.2}});
  EXPECT_EQ(a.get(), b.get());
  EXPECT_EQ(sys.cache_size(), 1u);
  // The run is made at the rounded point.
  EXPECT_NEAR(a->g[1], -0.4, 1e-12);
}

TEST(Averaged, FrozenSlowDynamicsStayPut) {
  const auto p = frozen_slow();
  AssociatedSettings s;
  s.horizon = 2.0;
  s.warmup = 1.0;
  const AveragedSystem sys(p, constant_law(Vector::Zero(2)), {}, s);
  const Vector z0{{0.3, -0.4}};
  const auto tr = integrate_averaged(sys, z0, 2.0, 0.1);
  EXPECT_TRUE(tr.viable);
  for (Eigen::Index k = 0; k < tr.size(); ++k) EXPECT_EQ(tr.z(k), z0);
}

TEST(Averaged, LinearOscillatorHasPeriodPi) {
  const auto p = linear_oscillator();
  AssociatedSettings s;
  s.horizon = 2.0;
  s.warmup = 1.0;
  const AveragedSystem sys(p, constant_law(Vector::Zero(2)), {}, s);
  const auto tr = integrate_averaged(sys, Vector{{1.0, 0.0}}, 20.0, 0.01);
  EXPECT_NEAR(estimate_period(tr, 0), kPi, 0.01);
}

TEST(Averaged, LeavingZStops) {
  ControlProblem p = frozen_slow();
  p.slow = [](ConstVecRef, ConstVecRef, ConstVecRef, VecRef out) { out << 1.0, 0.0; };
  AssociatedSettings s;
  s.horizon = 2.0;
  s.warmup = 1.0;
  const AveragedSystem sys(p, constant_law(Vector::Zero(2)), {}, s);
  const auto tr = integrate_averaged(sys, Vector{{2.0, 0.0}}, 5.0, 0.1);
  EXPECT_FALSE(tr.viable);
  EXPECT_NEAR(tr.exit_time, 0.6, 1e-9);
}

TEST(Period, SineWave) {
  Trajectory tr = synthetic(50.0, 0.01, [](double) { return 0.0; });
  for (Eigen::Index k = 0; k < tr.size(); ++k) tr.states(k, 0) = std::sin(2 * kPi * tr.times[k] / 5.0);
  EXPECT_NEAR(estimate_period(tr, 0), 5.0, 0.01);
}

TEST(Period, TooFewCrossings) {
  Trajectory tr = synthetic(6.0, 0.01, [](double) { return 0.0; });
  for (Eigen::Index k = 0; k < tr.size(); ++k) tr.states(k, 0) = std::sin(2 * kPi * tr.times[k] / 5.0);
  EXPECT_THROW(estimate_period(tr, 0), NoPeriodDetected);
  EXPECT_THROW(estimate_period(tr, 3), std::out_of_range);
}

TEST(LongRun, ConstantAndSine) {
  const auto c = synthetic(30.0, 0.1, [](double) { return 2.5; });
  EXPECT_DOUBLE_EQ(long_run_average(c, 5.0), 2.5);
  const auto s = synthetic(20 * kPi, 2 * kPi / 1000, [](double t) { return std::sin(t); });
  EXPECT_NEAR(long_run_average(s, 0.0), 0.0, 1e-8);
  EXPECT_THROW(long_run_average(s, 100.0), std::invalid_argument);
}

TEST(Schedule, ParameterInvariants) {
  EXPECT_NO_THROW(ScheduleParams::defaults(0.01).validate());
  EXPECT_NO_THROW(ScheduleParams::defaults(0.04).validate());
  EXPECT_NO_THROW(ScheduleParams::defaults(0.001).validate());
  EXPECT_DOUBLE_EQ(ScheduleParams::defaults(0.0025).delta, 0.05);
  EXPECT_THROW((ScheduleParams{0.02, 0.1, 1e-4}.validate()), std::invalid_argument);
  EXPECT_THROW((ScheduleParams{0.01, 0.6, 1e-4}.validate()), std::invalid_argument);
  EXPECT_THROW((ScheduleParams{0.01, 0.1, 1e-3}.validate()), std::invalid_argument);
  EXPECT_THROW((ScheduleParams{-0.01, 0.1, 1e-4}.validate()), std::invalid_argument);
}

TEST(Schedule, RightContinuousSwitching) {
  Trajectory avg = synthetic(1.0, 0.1, [](double) { return 0.0; });
  for (Eigen::Index k = 0; k < avg.size(); ++k) avg.states(k, 0) = static_cast<double>(k);
  const ScheduleParams params{0.01, 0.2, 5e-4};
  std::vector<double> seen;
  const ControlLaw law = [&seen](ConstVecRef, ConstVecRef z, VecRef u) {
    seen.push_back(z[0]);
    u.setZero();
  };
  Vector u(1);
  const Vector y = Vector::Zero(1);
  sp_schedule_control(law, avg, params, 0.0, y, u);
  sp_schedule_control(law, avg, params, 0.19, y, u);
  sp_schedule_control(law, avg, params, 0.2, y, u);
  sp_schedule_control(law, avg, params, 0.39, y, u);
  sp_schedule_control(law, avg, params, 1.0, y, u);
  EXPECT_EQ(seen, (std::vector<double>{0.0, 0.0, 2.0, 2.0, 10.0}));
  EXPECT_THROW(sp_schedule_control(law, avg, params, 1.3, y, u), ScheduleExhausted);
}

TEST(SingularlyPerturbed, ConstantCostAverage) {
  const auto p = make_constant_cost(-0.7);
  AssociatedSettings s;
  s.horizon = 2.0;
  s.warmup = 1.0;
  const AveragedSystem sys(p, constant_law(Vector::Zero(2)), {}, s);
  const auto avg = integrate_averaged(sys, Vector{{0.5, 0.0}}, 1.0, 0.1);
  const auto sp = integrate_sp(p, constant_law(Vector::Zero(2)), avg, ScheduleParams::defaults(0.01),
                               Vector::Zero(2), Vector{{0.5, 0.0}}, 1.0);
  EXPECT_TRUE(sp.viable);
  EXPECT_NEAR(long_run_average(sp, 0.0), -0.7, 1e-14);
  EXPECT_NEAR(sp.running_cost_avg[sp.size() - 1], -0.7, 1e-14);
}

TEST(SingularlyPerturbed, FollowsAveragedOscillator) {
  const auto p = linear_oscillator();
  AssociatedSettings s;
  s.horizon = 2.0;
  s.warmup = 1.0;
  const AveragedSystem sys(p, constant_law(Vector::Zero(2)), {}, s);
  const Vector z0{{1.0, 0.0}};
  const auto avg = integrate_averaged(sys, z0, 3.0, 0.01);
  const auto sp = integrate_sp(p, constant_law(Vector::Zero(2)), avg, ScheduleParams::defaults(0.01),
                               Vector::Zero(2), z0, 3.0);
  ASSERT_TRUE(sp.viable);
  EXPECT_NEAR(sp.z(sp.size() - 1)[0], std::cos(6.0), 1e-6);
  // The averaged right-hand side is evaluated at z rounded to 1e-4.
  EXPECT_NEAR(avg.z(avg.size() - 1)[0], std::cos(6.0), 1e-4);
}

TEST(Csv, RoundTripIsExact) {
  const auto p = make_gr_example();
  const ControlLaw law = [](ConstVecRef y, ConstVecRef, VecRef u) { u << -y[1] / 3.0, y[0] / 7.0; };
  const auto tr = integrate_associated(p, law, Vector{{0.5, 0.5}}, Vector{{0.3, -0.7}}, 3.0, 0.05);
  std::stringstream ss;
  write_csv(ss, tr);
  EXPECT_EQ(ss.str().substr(0, ss.str().find('\n')), "t,y1,y2,z1,z2,u1,u2,G,run_avg");
  const auto back = read_csv(ss);
  EXPECT_EQ(back.times, tr.times);
  EXPECT_EQ(back.states, tr.states);
  EXPECT_EQ(back.controls, tr.controls);
  EXPECT_EQ(back.cost, tr.cost);
  EXPECT_EQ(back.running_cost_avg, tr.running_cost_avg);
}

TEST(Moments, PointTrajectoryAgainstMixture) {
  // Structured solution with two atoms; trajectory parked on the first.
  StructuredSolution sol;
  for (double zv : {0.0, 1.0}) {
    ZGroup g;
    g.z = Vector{{zv}};
    g.p = 0.5;
    g.inner.u = Matrix::Constant(1, 1, zv);
    g.inner.y = Matrix::Constant(1, 1, zv);
    g.inner.z.resize(0, 1);
    g.inner.weights = Vector::Ones(1);
    sol.groups.push_back(g);
  }
  Trajectory tr = synthetic(4.0, 0.5, [](double) { return 0.0; });
  tr.dim_y = 1;
  tr.dim_u = 1;
  tr.states = Matrix::Zero(tr.size(), 2);
  tr.controls = Matrix::Zero(tr.size(), 1);
  const auto rep = sp_occupational_measure(tr, sol, 2);
  ASSERT_EQ(rep.trajectory.size(), MonomialBasis(3, 2).count());
  EXPECT_EQ(rep.trajectory, Vector::Zero(rep.trajectory.size()));
  // Every monomial is 1 at the second atom and 0 at the first.
  EXPECT_EQ(rep.structured, Vector::Constant(rep.structured.size(), 0.5));
  EXPECT_DOUBLE_EQ(rep.max_difference, 0.5);
  EXPECT_EQ(sp_occupational_measure(tr, sol, 0).trajectory.size(), 0);
}

TEST(LongRun, ReloadedTrajectoryUsesSampleCosts) {
  const auto s = synthetic(20.0, 0.01, [](double t) { return t; });
  Trajectory loaded = s;
  loaded.cost_end.setConstant(std::nan(""));
  // Without end-of-step costs the trapezoid runs over consecutive samples.
  EXPECT_NEAR(long_run_average(loaded, 0.0), 10.0, 1e-12);
  EXPECT_NEAR(long_run_average(loaded, 10.0), 15.0, 1e-12);
}

TEST(Orbit, CircleClosesExactly) {
  Trajectory tr = synthetic(40.0, 0.001, [](double) { return 0.0; });
  tr.dim_z = 2;
  tr.states.resize(tr.size(), 2);
  for (Eigen::Index k = 0; k < tr.size(); ++k) {
    tr.states(k, 0) = std::cos(tr.times[k]);
    tr.states(k, 1) = std::sin(tr.times[k]);
  }
  const auto oc = orbit_closure(tr, 0, 5.0);
  EXPECT_NEAR(oc.period, 2 * kPi, 1e-6);
  EXPECT_LE(oc.max_gap, 1e-6);
  EXPECT_GE(oc.crossings, 5);
}

TEST(Orbit, SpiralDoesNotClose) {
  Trajectory tr = synthetic(40.0, 0.001, [](double) { return 0.0; });
  tr.dim_z = 2;
  tr.states.resize(tr.size(), 2);
  for (Eigen::Index k = 0; k < tr.size(); ++k) {
    const double r = std::exp(-0.05 * tr.times[k]);
    tr.states(k, 0) = r * std::cos(tr.times[k]);
    tr.states(k, 1) = r * std::sin(tr.times[k]);
  }
  // Successive crossings on the negative y2 side shrink by exp(-0.1 pi).
  const auto oc = orbit_closure(tr, 0, 5.0);
  EXPECT_GT(oc.max_gap, 0.1);
  EXPECT_THROW(orbit_closure(tr, 0, 39.0), NoPeriodDetected);
}

TEST(SlowGap, MeasuresSupDistance) {
  Trajectory a = synthetic(10.0, 0.1, [](double) { return 0.0; });
  Trajectory b = synthetic(10.0, 0.01, [](double) { return 0.0; });
  for (Eigen::Index k = 0; k < b.size(); ++k) b.states(k, 0) = 0.01 * b.times[k];
  EXPECT_NEAR(max_slow_gap(b, a), 0.1, 1e-12);
  EXPECT_NEAR(max_slow_gap(b, a, 5.0), 0.05, 1e-12);
  EXPECT_EQ(max_slow_gap(a, a), 0.0);
}
