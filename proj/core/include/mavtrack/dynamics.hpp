#pragma once

#include <cstdint>
#include <deque>
#include <utility>

#include "mavtrack/common.hpp"

namespace mavtrack {

/// Skew-symmetric matrix [w]x such that [w]x v = w x v.
Mat3 skew(const Vec3& w);

/// Inverse of skew(): extracts (a,b,c) from the skew-symmetric part.
Vec3 vee(const Mat3& s);

/// Closed-form exponential map exp([omega*dt]x) (Rodrigues), orthonormal by
/// construction. Small angles fall back to the quadratic series.
Mat3 rotation_exp(const Vec3& omega, double dt);

/// Physical state of the tracker MAV.
///
/// omega_s is the actual body rate. The training model has no rate dynamics,
/// so the steppers keep it equal to the command in effect; the validation
/// model integrates it through the rate loop.
struct SimState {
  Vec3 p = Vec3::Zero();        // position, m (world)
  Vec3 v = Vec3::Zero();        // velocity, m/s (world)
  Mat3 R = Mat3::Identity();    // world <- body rotation
  Vec3 omega_s = Vec3::Zero();  // body rate, rad/s
  double f = 0.0;               // total thrust, N

  bool finite() const;
};

/// Plant parameters shared by both models. alpha scales the nominal mass,
/// delta is the control-channel delay. J and k_omega only matter for the
/// validation model's rate loop.
struct PhysParams {
  double m0 = 1.0;                  // nominal mass, kg
  double alpha = 1.0;               // uncertain mass gain
  double delta = 0.0;               // control delay, s
  Vec3 g = Vec3(0.0, 0.0, kGravity);
  double f_min = 0.0;               // thrust clip, N
  double f_max = 2.0 * kGravity;    // 2x nominal hover for m0 = 1 kg
  Mat3 J = Vec3(0.01, 0.01, 0.02).asDiagonal();  // inertia, kg m^2
  double k_omega = 0.5;             // rate-loop proportional gain
  double t_s = 0.05;                // control period, s
  double dt_int = 0.005;            // integration sub-step, s

  double mass() const { return alpha * m0; }
  double hover_thrust() const { return mass() * g.norm(); }
  int substeps_per_period() const;
  int delay_substeps() const;  // delta quantized to dt_int
  void validate() const;
};

/// Controller command: body-rate setpoint plus thrust rate.
struct Command {
  Vec3 omega_cmd = Vec3::Zero();  // rad/s
  double lambda = 0.0;            // N/s
};

struct CommandBounds {
  double omega_max = 4.0;    // rad/s per axis
  double lambda_max = 20.0;  // N/s
};

/// Componentwise clip to the actuator limits.
Command saturate(const Command& c, const CommandBounds& b);

/// Delay line over the command channel. A command pushed at sub-step k takes
/// effect at sub-step k + delay; until the first command ages through, a
/// hover-hold default (zero rates, zero thrust rate) applies.
class DelayBuffer {
 public:
  DelayBuffer() = default;
  explicit DelayBuffer(int delay_substeps);

  void push(const Command& cmd, std::int64_t now_substep);

  /// Command in effect over [substep, substep+1). Consumes entries that have
  /// become active, so queries must not go backwards in time.
  const Command& fetch(std::int64_t substep);

  int delay_substeps() const { return delay_; }

 private:
  int delay_ = 0;
  Command active_{};  // hover-hold until the first activation
  std::deque<std::pair<std::int64_t, Command>> pending_;
};

/// Advances the training model by n sub-steps starting at sub-step index
/// `begin`. Within each sub-step the delayed command is held (ZOH), thrust
/// integrates and clips first, and translation uses the exact
/// constant-acceleration update with the body-z direction at sub-step start.
SimState step_substeps(const SimState& s, DelayBuffer& buf,
                       const PhysParams& params, std::int64_t begin, int n);

/// One control period (t_s) of the training model; control_step counts
/// periods since episode start.
SimState step_training_model(const SimState& s, DelayBuffer& buf,
                             const PhysParams& params,
                             std::int64_t control_step);

/// Validation-model stepper. Augments the training model with the body-rate
/// state driven by the proportional rate loop through the rigid-body Euler
/// equation. The linear part of the rate ODE is integrated exactly in the
/// inertia eigenbasis (unconditionally stable in k_omega); the gyroscopic
/// term is held over the sub-step. R integrates the exact sub-step average
/// of omega_s so the training model is recovered as k_omega grows.
class ValidationStepper {
 public:
  explicit ValidationStepper(const PhysParams& params);

  SimState substeps(const SimState& s, DelayBuffer& buf, std::int64_t begin,
                    int n) const;
  SimState step(const SimState& s, DelayBuffer& buf,
                std::int64_t control_step) const;

  const PhysParams& params() const { return params_; }

 private:
  PhysParams params_;
  Mat3 basis_;       // eigenvectors of J
  Vec3 decay_;       // exp(-k_omega*dt/J_i)
  Vec3 mean_decay_;  // (1 - decay_i) / (k_omega*dt/J_i)
  Vec3 gyro_gain_;   // dt * mean_decay_i (input-term weight)
  Vec3 gyro_mean_;   // dt * (1 - mean_decay_i) / (k_omega*dt/J_i)
};

/// Body-frame position of the target relative to the tracker.
Vec3 output_y(const SimState& s, const Vec3& p_r);

/// Instantaneous relative-motion quantities. y_dot is the derivative of
/// output_y (transport theorem); vel_body and acc_body are the body-frame
/// relative velocity and acceleration blocks consumed by the critic.
struct RelativeRates {
  Vec3 y_dot;     // m/s
  Vec3 vel_body;  // R^T (v - pr_dot), m/s
  Vec3 acc_body;  // R^T (a - pr_ddot), m/s^2
};

RelativeRates relative_rates(const SimState& s, const PhysParams& params,
                             const Vec3& p_r, const Vec3& pr_dot,
                             const Vec3& pr_ddot);

}  // namespace mavtrack
