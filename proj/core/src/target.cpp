#include "mavtrack/target.hpp"

#include <algorithm>
#include <cmath>

namespace mavtrack {

double Range::sample(Rng& rng) const {
  if (!(hi >= lo)) {
    throw ConfigError("sampling range is inverted");
  }
  std::uniform_real_distribution<double> dist(lo, hi);
  return dist(rng);
}

TrajParams sample_traj_params(TrajKind kind, const TrajRanges& ranges,
                              Rng& rng) {
  TrajParams tp;
  tp.kind = kind;
  if (kind == TrajKind::kSinusoid) {
    for (int j = 0; j < 3; ++j) {
      tp.amplitude(j) = ranges.amplitude.sample(rng);
      tp.frequency(j) = ranges.frequency.sample(rng);
      tp.phase(j) = ranges.phase.sample(rng);
    }
  } else if (kind == TrajKind::kRamp) {
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    for (int j = 0; j < 3; ++j) {
      const double speed = ranges.ramp_speed.sample(rng);
      tp.velocity(j) = coin(rng) < 0.5 ? -speed : speed;
    }
  }
  return tp;
}

double peak_accel_bound(const TrajParams& params) {
  if (params.kind != TrajKind::kSinusoid) {
    return 0.0;
  }
  double sum = 0.0;
  for (int j = 0; j < 3; ++j) {
    const double w = 2.0 * EIGEN_PI * params.frequency(j);
    const double peak = params.amplitude(j) * w * w;
    sum += peak * peak;
  }
  return std::sqrt(sum);
}

double initial_speed(const TrajParams& params) {
  if (params.kind == TrajKind::kFixed) {
    return 0.0;
  }
  if (params.kind == TrajKind::kRamp) {
    return params.velocity.norm();
  }
  double sum = 0.0;
  for (int j = 0; j < 3; ++j) {
    const double w = 2.0 * EIGEN_PI * params.frequency(j);
    const double v0 = params.amplitude(j) * w * std::cos(params.phase(j));
    sum += v0 * v0;
  }
  return std::sqrt(sum);
}

TrajParams sample_feasible_traj_params(TrajKind kind, const TrajRanges& ranges,
                                       Rng& rng, double max_accel,
                                       double max_v0, int max_tries) {
  for (int attempt = 0; attempt < std::max(1, max_tries); ++attempt) {
    TrajParams tp = sample_traj_params(kind, ranges, rng);
    const bool accel_ok = max_accel <= 0.0 || peak_accel_bound(tp) <= max_accel;
    const bool v0_ok = max_v0 <= 0.0 || initial_speed(tp) <= max_v0;
    if (accel_ok && v0_ok) {
      return tp;
    }
  }
  throw ConfigError(
      "no trajectory draw satisfied the feasibility budget; widen "
      "max_target_accel / max_initial_speed or the sampling ranges");
}

TrajSample eval_trajectory(const TrajParams& params, double t) {
  TrajSample out;
  if (params.kind == TrajKind::kFixed) {
    out.pos = params.origin;
    out.vel = Vec3::Zero();
    out.acc = Vec3::Zero();
    return out;
  }
  if (params.kind == TrajKind::kRamp) {
    out.pos = params.origin + params.velocity * t;
    out.vel = params.velocity;
    out.acc = Vec3::Zero();
    return out;
  }
  for (int j = 0; j < 3; ++j) {
    const double w = 2.0 * EIGEN_PI * params.frequency(j);
    const double arg = w * t + params.phase(j);
    out.pos(j) = params.origin(j) +
                 params.amplitude(j) * (std::sin(arg) - std::sin(params.phase(j)));
    out.vel(j) = params.amplitude(j) * w * std::cos(arg);
    out.acc(j) = -params.amplitude(j) * w * w * std::sin(arg);
  }
  return out;
}

}  // namespace mavtrack
