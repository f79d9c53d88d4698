#pragma once

#include <string>

#include "mavtrack/common.hpp"
#include "mavtrack/dynamics.hpp"
#include "mavtrack/environment.hpp"

namespace mavtrack {

/// Per-axis discrete double integrator over the relative position, with
/// position measurements. The target's unknown acceleration is modeled as
/// process noise on the velocity state.
struct LinModel {
  Eigen::Matrix2d A;
  Eigen::Vector2d B;
  Eigen::RowVector2d C;
  Eigen::Matrix2d Q_w;
  double R_v = 0.0;
  double t_s = 0.0;

  static LinModel double_integrator(double t_s, const Eigen::Vector2d& q_w_diag,
                                    double r_v);
};

/// Fixed-point iteration on the discrete algebraic Riccati equation,
/// starting from P0 = Q. Throws ConfigError with the residual when the
/// iteration fails to converge.
Eigen::MatrixXd solve_dare(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                           const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R);

/// Frobenius norm of P - (A'PA - A'PB (R + B'PB)^-1 B'PA + Q).
double dare_residual(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                     const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                     const Eigen::MatrixXd& P);

/// LQR gain K = (R + B'PB)^-1 B'PA for the regulator u = -K x of
/// x+ = A x + B u (callers pick the sign convention for their input).
Eigen::MatrixXd dlqr_gain(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                          const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R);

struct KalmanGain {
  Eigen::MatrixXd L;      // update-form gain, n x m
  Eigen::MatrixXd sigma;  // steady-state prior covariance, n x n
};

/// Steady-state filter gain from the dual Riccati equation:
/// L = Sigma C' (C Sigma C' + R_v)^-1 with Sigma the prior covariance.
KalmanGain kalman_gain(const Eigen::MatrixXd& A, const Eigen::MatrixXd& C,
                       const Eigen::MatrixXd& Q_w, const Eigen::MatrixXd& R_v);

/// Baseline weights and loop gains. The per-axis translational design is
/// identical for all three world axes.
struct LqgConfig {
  Eigen::Vector2d q_diag = Eigen::Vector2d(10.0, 1.0);  // LQR weights, xy axes
  Eigen::Vector2d q_diag_z = Eigen::Vector2d(10.0, 1.0);  // LQR weights, z axis
  double r = 1.0;                                       // LQR input weight
  Eigen::Vector2d q_w_diag = Eigen::Vector2d(0.0, 0.5); // process noise
  double r_v = 9e-6;                                    // measurement noise
  double k_f = 10.0;      // thrust-rate gain, 1/s
  double k_r = 4.0;       // attitude-rate gain, 1/s
  double a_max_xy = 8.0;  // horizontal accel command clip, m/s^2; <= 0 off
  double a_max_z = 2.5;   // vertical accel command clip, m/s^2; <= 0 off
  double eps = 1e-9;      // singularity guard on direction norms

  double t_s = 0.05;
  double m0 = 1.0;
  double gravity = kGravity;
  Vec3 y_ref = Vec3(0.75, 0.0, 0.0);
  CommandBounds bounds;

  void validate() const;

  /// Copies the plant-facing fields (t_s, m0, y_ref, bounds, measurement
  /// noise) from an environment configuration.
  static LqgConfig from_env(const EnvConfig& env);

  /// Stiff gain set from the nominal-scenario sweep; the shipped baseline
  /// for evaluation runs.
  static LqgConfig tuned();
};

struct LqgGains {
  Eigen::RowVector2d K;       // LQR gain, xy axes
  Eigen::RowVector2d K_z;     // LQR gain, z axis
  Eigen::Matrix2d P;          // control DARE solution, xy axes
  Eigen::Matrix2d P_z;        // control DARE solution, z axis
  Eigen::Vector2d L;          // Kalman gain per axis
  Eigen::Matrix2d sigma;      // prior estimate covariance
  double control_residual = 0.0;
  double filter_residual = 0.0;
};

LqgGains compute_lqg_gains(const LqgConfig& cfg);

/// JSON dump of the configuration and the precomputed gains.
std::string lqg_gains_json(const LqgConfig& cfg, const LqgGains& gains);

/// Output-feedback baseline: per-axis Kalman filtering of the world-frame
/// relative position, LQR acceleration commands, feedback linearization to
/// (omega_cmd, lambda). Receives ground-truth attitude and the current
/// thrust; never sees the randomized mass gain or the delay.
class LqgController {
 public:
  explicit LqgController(const LqgConfig& cfg);

  /// Clears the estimator; the next step() re-initializes from its
  /// measurement.
  void reset();

  /// One control period: y_meas is the noisy body-frame relative target
  /// position, R_true the ground-truth attitude, f_current the present
  /// thrust in N. Returns the saturated command.
  Command step(const Vec3& y_meas, const Mat3& R_true, double f_current);

  const LqgGains& gains() const { return gains_; }
  const LqgConfig& config() const { return cfg_; }
  /// Row 0: estimated relative position, row 1: estimated relative
  /// velocity, one column per world axis.
  const Eigen::Matrix<double, 2, 3>& estimate() const { return xhat_; }

 private:
  LqgConfig cfg_;
  LqgGains gains_;
  Eigen::Matrix<double, 2, 3> xhat_ = Eigen::Matrix<double, 2, 3>::Zero();
  Vec3 a_prev_ = Vec3::Zero();
  Vec3 z_des_prev_ = Vec3(0.0, 0.0, 1.0);
  Vec3 heading_prev_ = Vec3(1.0, 0.0, 0.0);
  bool initialized_ = false;
};

/// Adapter to the environment's normalized action interface.
Action lqg_action(const Command& cmd, const CommandBounds& bounds);

}  // namespace mavtrack
