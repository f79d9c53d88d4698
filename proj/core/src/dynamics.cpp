#include "mavtrack/dynamics.hpp"

#include <algorithm>
#include <cmath>

namespace mavtrack {

Mat3 skew(const Vec3& w) {
  Mat3 s;
  // clang-format off
  s <<     0.0, -w.z(),  w.y(),
         w.z(),    0.0, -w.x(),
        -w.y(),  w.x(),    0.0;
  // clang-format on
  return s;
}

Vec3 vee(const Mat3& s) {
  return 0.5 * Vec3(s(2, 1) - s(1, 2), s(0, 2) - s(2, 0), s(1, 0) - s(0, 1));
}

Mat3 rotation_exp(const Vec3& omega, double dt) {
  const Vec3 phi = omega * dt;
  const double t2 = phi.squaredNorm();
  double ca, cb;  // exp = I + ca*K + cb*K^2
  if (t2 < 1e-12) {
    ca = 1.0 - t2 / 6.0 + t2 * t2 / 120.0;
    cb = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
  } else {
    const double t = std::sqrt(t2);
    ca = std::sin(t) / t;
    cb = (1.0 - std::cos(t)) / t2;
  }
  const Mat3 k = skew(phi);
  return Mat3::Identity() + ca * k + cb * (k * k);
}

bool SimState::finite() const {
  return p.allFinite() && v.allFinite() && R.allFinite() &&
         omega_s.allFinite() && std::isfinite(f);
}

int PhysParams::substeps_per_period() const {
  return static_cast<int>(std::llround(t_s / dt_int));
}

int PhysParams::delay_substeps() const {
  return static_cast<int>(std::llround(delta / dt_int));
}

void PhysParams::validate() const {
  if (!(m0 > 0.0) || !(alpha > 0.0)) {
    throw ConfigError("mass parameters must be positive");
  }
  if (!(dt_int > 0.0) || !(t_s > 0.0)) {
    throw ConfigError("time steps must be positive");
  }
  const int n = substeps_per_period();
  if (n < 1 || std::abs(n * dt_int - t_s) > 1e-9) {
    throw ConfigError("control period must be an integer number of sub-steps");
  }
  if (delta < 0.0) {
    throw ConfigError("control delay must be non-negative");
  }
  if (!(f_max > f_min)) {
    throw ConfigError("thrust limits are inverted");
  }
  if (!(J.diagonal().minCoeff() > 0.0)) {
    throw ConfigError("inertia must be positive definite");
  }
  if (!(k_omega > 0.0)) {
    throw ConfigError("rate-loop gain must be positive");
  }
}

Command saturate(const Command& c, const CommandBounds& b) {
  Command out;
  out.omega_cmd = c.omega_cmd.cwiseMax(-b.omega_max).cwiseMin(b.omega_max);
  out.lambda = std::clamp(c.lambda, -b.lambda_max, b.lambda_max);
  return out;
}

DelayBuffer::DelayBuffer(int delay_substeps) : delay_(delay_substeps) {
  if (delay_substeps < 0) {
    throw ConfigError("delay must be non-negative");
  }
}

void DelayBuffer::push(const Command& cmd, std::int64_t now_substep) {
  pending_.emplace_back(now_substep + delay_, cmd);
}

const Command& DelayBuffer::fetch(std::int64_t substep) {
  while (!pending_.empty() && pending_.front().first <= substep) {
    active_ = pending_.front().second;
    pending_.pop_front();
  }
  return active_;
}

namespace {

// Per sub-step: thrust integrates and clips, translation advances with the
// exact constant-acceleration solution using the thrust direction at sub-step
// start, then attitude rotates by the commanded rate held over the sub-step.
void training_substep(SimState& x, const Command& cmd,
                      const PhysParams& params) {
  const double dt = params.dt_int;
  x.f = std::clamp(x.f + cmd.lambda * dt, params.f_min, params.f_max);
  const Vec3 a = x.R.col(2) * (x.f / params.mass()) - params.g;
  x.p += x.v * dt + a * (0.5 * dt * dt);
  x.v += a * dt;
  x.R = x.R * rotation_exp(cmd.omega_cmd, dt);
  x.omega_s = cmd.omega_cmd;
}

}  // namespace

SimState step_substeps(const SimState& s, DelayBuffer& buf,
                       const PhysParams& params, std::int64_t begin, int n) {
  SimState x = s;
  for (int k = 0; k < n; ++k) {
    training_substep(x, buf.fetch(begin + k), params);
  }
  return x;
}

SimState step_training_model(const SimState& s, DelayBuffer& buf,
                             const PhysParams& params,
                             std::int64_t control_step) {
  const int n = params.substeps_per_period();
  return step_substeps(s, buf, params, control_step * n, n);
}

ValidationStepper::ValidationStepper(const PhysParams& params)
    : params_(params) {
  params_.validate();
  Eigen::SelfAdjointEigenSolver<Mat3> eig(params_.J);
  basis_ = eig.eigenvectors();
  const Vec3 lam = eig.eigenvalues();
  const double dt = params_.dt_int;
  for (int i = 0; i < 3; ++i) {
    const double a = params_.k_omega * dt / lam(i);
    const double e = std::exp(-a);
    double m, q;  // m = (1-e)/a, q = (1-m)/a, stable for small a
    if (a < 1e-4) {
      m = 1.0 - a / 2.0 + a * a / 6.0 - a * a * a / 24.0;
      q = 0.5 - a / 6.0 + a * a / 24.0 - a * a * a / 120.0;
    } else {
      m = (1.0 - e) / a;
      q = (1.0 - m) / a;
    }
    decay_(i) = e;
    mean_decay_(i) = m;
    gyro_gain_(i) = dt * m;
    gyro_mean_(i) = dt * q;
  }
}

SimState ValidationStepper::substeps(const SimState& s, DelayBuffer& buf,
                                     std::int64_t begin, int n) const {
  SimState x = s;
  const double dt = params_.dt_int;
  const Mat3 jinv = params_.J.inverse();
  for (int k = 0; k < n; ++k) {
    const Command& cmd = buf.fetch(begin + k);
    x.f = std::clamp(x.f + cmd.lambda * dt, params_.f_min, params_.f_max);
    const Vec3 a = x.R.col(2) * (x.f / params_.mass()) - params_.g;
    x.p += x.v * dt + a * (0.5 * dt * dt);
    x.v += a * dt;

    // Rate loop in the inertia eigenbasis: the proportional part is solved
    // exactly over the sub-step, the gyroscopic acceleration is frozen at its
    // start-of-step value.
    const Vec3 n0 = -jinv * x.omega_s.cross(params_.J * x.omega_s);
    const Vec3 w0 = basis_.transpose() * x.omega_s;
    const Vec3 wc = basis_.transpose() * cmd.omega_cmd;
    const Vec3 nn = basis_.transpose() * n0;
    Vec3 w_end, w_mean;
    for (int i = 0; i < 3; ++i) {
      w_end(i) = wc(i) + decay_(i) * (w0(i) - wc(i)) + gyro_gain_(i) * nn(i);
      w_mean(i) =
          wc(i) + mean_decay_(i) * (w0(i) - wc(i)) + gyro_mean_(i) * nn(i);
    }
    x.R = x.R * rotation_exp(basis_ * w_mean, dt);
    x.omega_s = basis_ * w_end;
  }
  return x;
}

SimState ValidationStepper::step(const SimState& s, DelayBuffer& buf,
                                 std::int64_t control_step) const {
  const int n = params_.substeps_per_period();
  return substeps(s, buf, control_step * n, n);
}

Vec3 output_y(const SimState& s, const Vec3& p_r) {
  return s.R.transpose() * (p_r - s.p);
}

RelativeRates relative_rates(const SimState& s, const PhysParams& params,
                             const Vec3& p_r, const Vec3& pr_dot,
                             const Vec3& pr_ddot) {
  RelativeRates out;
  const Vec3 y = s.R.transpose() * (p_r - s.p);
  out.y_dot = -s.omega_s.cross(y) + s.R.transpose() * (pr_dot - s.v);
  out.vel_body = s.R.transpose() * (s.v - pr_dot);
  const Vec3 a = s.R.col(2) * (s.f / params.mass()) - params.g;
  out.acc_body = s.R.transpose() * (a - pr_ddot);
  return out;
}

}  // namespace mavtrack
