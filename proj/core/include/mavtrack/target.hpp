#pragma once

#include "mavtrack/common.hpp"

namespace mavtrack {

enum class TrajKind { kSinusoid, kRamp, kFixed };

/// Closed, uniform sampling range.
struct Range {
  double lo = 0.0;
  double hi = 0.0;

  double sample(Rng& rng) const;
  bool contains(double x) const { return x >= lo && x <= hi; }
};

/// Per-axis randomization ranges for the target trajectory families.
struct TrajRanges {
  Range amplitude{1.0, 30.0};    // m
  Range frequency{0.002, 0.2};   // Hz
  Range phase{0.0, 2.0 * EIGEN_PI};
  Range ramp_speed{0.1, 2.0};    // m/s, sign drawn separately
};

/// Concrete trajectory. The sinusoid is anchored so that pos(0) = origin for
/// any phase; the ramp starts at origin with constant velocity.
struct TrajParams {
  TrajKind kind = TrajKind::kSinusoid;
  Vec3 origin = Vec3::Zero();
  Vec3 amplitude = Vec3::Zero();  // sinusoid only
  Vec3 frequency = Vec3::Zero();  // Hz, sinusoid only
  Vec3 phase = Vec3::Zero();      // rad, sinusoid only
  Vec3 velocity = Vec3::Zero();   // ramp only
};

struct TrajSample {
  Vec3 pos;
  Vec3 vel;
  Vec3 acc;
};

/// Draws trajectory parameters. Sinusoid: per axis, amplitude then frequency
/// then phase. Ramp: per axis, speed then direction sign. The origin is left
/// at zero; callers anchor it to the spawn point.
TrajParams sample_traj_params(TrajKind kind, const TrajRanges& ranges,
                              Rng& rng);

/// Analytic position, velocity, and acceleration at time t >= 0.
TrajSample eval_trajectory(const TrajParams& params, double t);

/// Conservative peak of the demanded acceleration magnitude: per-axis peaks
/// A_j (2 pi f_j)^2 combined as if they aligned in time. Zero for fixed and
/// ramp trajectories (constant velocity needs no sustained acceleration).
double peak_accel_bound(const TrajParams& params);

/// Target speed at t = 0. The tracker spawns hovering, so this is also the
/// initial relative speed it must absorb.
double initial_speed(const TrajParams& params);

/// Draws trajectory parameters, redrawing until peak_accel_bound stays within
/// `max_accel` (m/s^2) and initial_speed stays within `max_v0` (m/s). A
/// non-positive budget disables that bound. Throws ConfigError if no feasible
/// draw appears within `max_tries`.
TrajParams sample_feasible_traj_params(TrajKind kind, const TrajRanges& ranges,
                                       Rng& rng, double max_accel,
                                       double max_v0 = 0.0,
                                       int max_tries = 100000);

}  // namespace mavtrack
