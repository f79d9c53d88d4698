#include "mavtrack/lqg.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

namespace mavtrack {

namespace {

void check_dare_shapes(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                       const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R) {
  const auto n = A.rows();
  if (A.cols() != n || B.rows() != n || Q.rows() != n || Q.cols() != n ||
      R.rows() != B.cols() || R.cols() != B.cols()) {
    throw ConfigError("Riccati matrices have inconsistent shapes");
  }
  if (!A.allFinite() || !B.allFinite() || !Q.allFinite() || !R.allFinite()) {
    throw ConfigError("Riccati matrices must be finite");
  }
  if ((Q - Q.transpose()).cwiseAbs().maxCoeff() > 1e-9 ||
      (R - R.transpose()).cwiseAbs().maxCoeff() > 1e-9) {
    throw ConfigError("Riccati weights must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_r(R);
  if (eig_r.eigenvalues().minCoeff() <= 0.0) {
    throw ConfigError("Riccati input weight must be positive definite");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_q(Q);
  if (eig_q.eigenvalues().minCoeff() < -1e-9) {
    throw ConfigError("Riccati state weight must be positive semidefinite");
  }
}

Eigen::MatrixXd dare_map(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                         const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                         const Eigen::MatrixXd& P) {
  const Eigen::MatrixXd BtP = B.transpose() * P;
  const Eigen::MatrixXd S = R + BtP * B;
  const Eigen::MatrixXd K = S.ldlt().solve(BtP * A);
  return A.transpose() * P * A - A.transpose() * P * B * K + Q;
}

Vec3 normalized_or(const Vec3& v, const Vec3& fallback, double eps) {
  const double n = v.norm();
  return n < eps ? fallback : Vec3(v / n);
}

}  // namespace

LinModel LinModel::double_integrator(double t_s,
                                     const Eigen::Vector2d& q_w_diag,
                                     double r_v) {
  LinModel m;
  m.A << 1.0, t_s, 0.0, 1.0;
  m.B << 0.5 * t_s * t_s, t_s;
  m.C << 1.0, 0.0;
  m.Q_w = q_w_diag.asDiagonal();
  m.R_v = r_v;
  m.t_s = t_s;
  return m;
}

double dare_residual(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                     const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R,
                     const Eigen::MatrixXd& P) {
  return (dare_map(A, B, Q, R, P) - P).norm();
}

Eigen::MatrixXd solve_dare(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                           const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R) {
  check_dare_shapes(A, B, Q, R);
  constexpr double kStepTol = 1e-12;
  constexpr double kResidualTol = 1e-10;
  constexpr int kMaxIters = 100000;
  const auto n = A.rows();
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);

  // Structured doubling iteration on (A_k, G_k, H_k); H_k converges
  // quadratically to the stabilizing solution, so even near-singular
  // weightings finish in a few dozen steps.
  Eigen::MatrixXd Ak = A;
  Eigen::MatrixXd Gk = B * R.ldlt().solve(B.transpose());
  Eigen::MatrixXd Hk = Q;
  for (int i = 0; i < kMaxIters; ++i) {
    const Eigen::MatrixXd W = I + Gk * Hk;
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(W);
    const Eigen::MatrixXd WiA = lu.solve(Ak);
    const Eigen::MatrixXd WiG = lu.solve(Gk);
    const Eigen::MatrixXd next_H = Hk + Ak.transpose() * Hk * WiA;
    const Eigen::MatrixXd next_G = Gk + Ak * WiG * Ak.transpose();
    const Eigen::MatrixXd next_A = Ak * WiA;
    const double change = (next_H - Hk).norm();
    Hk = 0.5 * (next_H + next_H.transpose());
    Gk = 0.5 * (next_G + next_G.transpose());
    Ak = next_A;
    if (!Hk.allFinite() || !Gk.allFinite() || !Ak.allFinite()) {
      throw ConfigError("Riccati iteration diverged to non-finite values");
    }
    if (change < kStepTol * std::max(1.0, Hk.norm())) {
      const double res = dare_residual(A, B, Q, R, Hk);
      if (res >= kResidualTol * std::max(1.0, Hk.norm())) {
        throw ConfigError("Riccati iteration stalled with residual " +
                          std::to_string(res));
      }
      return Hk;
    }
  }
  throw ConfigError("Riccati iteration did not converge; final residual " +
                    std::to_string(dare_residual(A, B, Q, R, Hk)));
}

Eigen::MatrixXd dlqr_gain(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                          const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R) {
  const Eigen::MatrixXd P = solve_dare(A, B, Q, R);
  const Eigen::MatrixXd S = R + B.transpose() * P * B;
  return S.ldlt().solve(B.transpose() * P * A);
}

KalmanGain kalman_gain(const Eigen::MatrixXd& A, const Eigen::MatrixXd& C,
                       const Eigen::MatrixXd& Q_w, const Eigen::MatrixXd& R_v) {
  KalmanGain out;
  out.sigma = solve_dare(A.transpose(), C.transpose(), Q_w, R_v);
  const Eigen::MatrixXd S = C * out.sigma * C.transpose() + R_v;
  out.L = S.ldlt().solve(C * out.sigma).transpose();
  return out;
}

void LqgConfig::validate() const {
  if (q_diag.minCoeff() < 0.0 || q_diag_z.minCoeff() < 0.0 || r <= 0.0) {
    throw ConfigError("LQR weights require q >= 0 and r > 0");
  }
  if (q_w_diag.minCoeff() < 0.0 || r_v <= 0.0) {
    throw ConfigError("noise covariances require q_w >= 0 and r_v > 0");
  }
  if (k_f <= 0.0 || k_r <= 0.0) {
    throw ConfigError("loop gains k_f and k_r must be positive");
  }
  if (t_s <= 0.0 || m0 <= 0.0 || gravity <= 0.0) {
    throw ConfigError("t_s, m0, and gravity must be positive");
  }
  if (eps <= 0.0 || eps >= 1.0) {
    throw ConfigError("eps must lie in (0, 1)");
  }
}

LqgConfig LqgConfig::from_env(const EnvConfig& env) {
  LqgConfig cfg;
  cfg.t_s = env.t_s;
  cfg.m0 = env.m0;
  cfg.y_ref = env.y_ref;
  cfg.bounds = env.bounds;
  cfg.r_v = env.sigma_w * env.sigma_w;
  return cfg;
}

LqgConfig LqgConfig::tuned() {
  LqgConfig cfg;
  cfg.q_diag = Eigen::Vector2d(600.0, 10.0);
  cfg.q_diag_z = Eigen::Vector2d(400.0, 40.0);
  cfg.q_w_diag = Eigen::Vector2d(0.0, 0.02);
  cfg.k_r = 10.0;
  cfg.k_f = 20.0;
  cfg.a_max_xy = 8.0;
  cfg.a_max_z = 6.0;
  return cfg;
}

LqgGains compute_lqg_gains(const LqgConfig& cfg) {
  cfg.validate();
  const LinModel m = LinModel::double_integrator(cfg.t_s, cfg.q_w_diag, cfg.r_v);
  const Eigen::Matrix2d Q = cfg.q_diag.asDiagonal();
  const Eigen::Matrix2d Q_z = cfg.q_diag_z.asDiagonal();
  Eigen::MatrixXd R(1, 1);
  R << cfg.r;
  Eigen::MatrixXd R_v(1, 1);
  R_v << cfg.r_v;

  LqgGains g;
  const Eigen::MatrixXd P = solve_dare(m.A, m.B, Q, R);
  g.P = P;
  g.K = dlqr_gain(m.A, m.B, Q, R);
  g.control_residual = dare_residual(m.A, m.B, Q, R, P);
  const Eigen::MatrixXd P_z = solve_dare(m.A, m.B, Q_z, R);
  g.P_z = P_z;
  g.K_z = dlqr_gain(m.A, m.B, Q_z, R);
  g.control_residual =
      std::max(g.control_residual, dare_residual(m.A, m.B, Q_z, R, P_z));
  const KalmanGain kg = kalman_gain(m.A, m.C, m.Q_w, R_v);
  g.L = kg.L;
  g.sigma = kg.sigma;
  g.filter_residual =
      dare_residual(m.A.transpose(), m.C.transpose(), m.Q_w, R_v, kg.sigma);
  return g;
}

std::string lqg_gains_json(const LqgConfig& cfg, const LqgGains& gains) {
  nlohmann::ordered_json j;
  j["model"] = {{"t_s", cfg.t_s},
                {"A", {{1.0, cfg.t_s}, {0.0, 1.0}}},
                {"B", {0.5 * cfg.t_s * cfg.t_s, cfg.t_s}},
                {"C", {1.0, 0.0}}};
  j["weights"] = {{"q", {cfg.q_diag(0), cfg.q_diag(1)}},
                  {"q_z", {cfg.q_diag_z(0), cfg.q_diag_z(1)}},
                  {"r", cfg.r},
                  {"q_w", {cfg.q_w_diag(0), cfg.q_w_diag(1)}},
                  {"r_v", cfg.r_v}};
  j["gains"] = {{"K", {gains.K(0), gains.K(1)}},
                {"K_z", {gains.K_z(0), gains.K_z(1)}},
                {"L", {gains.L(0), gains.L(1)}},
                {"P", {{gains.P(0, 0), gains.P(0, 1)},
                       {gains.P(1, 0), gains.P(1, 1)}}},
                {"sigma", {{gains.sigma(0, 0), gains.sigma(0, 1)},
                           {gains.sigma(1, 0), gains.sigma(1, 1)}}},
                {"control_residual", gains.control_residual},
                {"filter_residual", gains.filter_residual}};
  j["loop"] = {{"k_f", cfg.k_f},
               {"k_r", cfg.k_r},
               {"m0", cfg.m0},
               {"gravity", cfg.gravity},
               {"y_ref", {cfg.y_ref.x(), cfg.y_ref.y(), cfg.y_ref.z()}}};
  return j.dump(2);
}

LqgController::LqgController(const LqgConfig& cfg)
    : cfg_(cfg), gains_(compute_lqg_gains(cfg)) {}

void LqgController::reset() {
  xhat_.setZero();
  a_prev_.setZero();
  z_des_prev_ = Vec3(0.0, 0.0, 1.0);
  heading_prev_ = Vec3(1.0, 0.0, 0.0);
  initialized_ = false;
}

Command LqgController::step(const Vec3& y_meas, const Mat3& R_true,
                            double f_current) {
  const LinModel m =
      LinModel::double_integrator(cfg_.t_s, cfg_.q_w_diag, cfg_.r_v);

  const Vec3 z = R_true * y_meas;
  if (!initialized_) {
    xhat_.row(0) = z.transpose();
    xhat_.row(1).setZero();
    initialized_ = true;
  } else {
    for (int axis = 0; axis < 3; ++axis) {
      const Eigen::Vector2d prior =
          m.A * xhat_.col(axis) - m.B * a_prev_(axis);
      const double innovation = z(axis) - prior(0);
      xhat_.col(axis) = prior + gains_.L * innovation;
    }
  }

  const Vec3 x_ref = R_true * cfg_.y_ref;
  Vec3 a_cmd;
  for (int axis = 0; axis < 3; ++axis) {
    const Eigen::Vector2d err(xhat_(0, axis) - x_ref(axis), xhat_(1, axis));
    a_cmd(axis) = axis == 2 ? gains_.K_z.dot(err) : gains_.K.dot(err);
  }
  const double a_xy = a_cmd.head<2>().norm();
  if (cfg_.a_max_xy > 0.0 && a_xy > cfg_.a_max_xy) {
    a_cmd.head<2>() *= cfg_.a_max_xy / a_xy;
  }
  if (cfg_.a_max_z > 0.0) {
    a_cmd(2) = std::clamp(a_cmd(2), -cfg_.a_max_z, cfg_.a_max_z);
  }
  a_prev_ = a_cmd;

  const Vec3 F_des = cfg_.m0 * (a_cmd + Vec3(0.0, 0.0, cfg_.gravity));
  const double f_des = F_des.norm();
  const Vec3 z_des = f_des < cfg_.eps ? z_des_prev_ : Vec3(F_des / f_des);
  z_des_prev_ = z_des;

  const Vec3 bearing(xhat_(0, 0), xhat_(0, 1), 0.0);
  const Vec3 heading = normalized_or(bearing, heading_prev_, cfg_.eps);
  heading_prev_ = heading;

  Vec3 y_raw = z_des.cross(heading);
  if (y_raw.norm() < cfg_.eps) y_raw = z_des.cross(Vec3::UnitX());
  if (y_raw.norm() < cfg_.eps) y_raw = z_des.cross(Vec3::UnitY());
  const Vec3 y_des = y_raw.normalized();
  const Vec3 x_des = y_des.cross(z_des);
  Mat3 R_des;
  R_des.col(0) = x_des;
  R_des.col(1) = y_des;
  R_des.col(2) = z_des;

  const Mat3 E = 0.5 * (R_true.transpose() * R_des - R_des.transpose() * R_true);
  Command cmd;
  cmd.omega_cmd = cfg_.k_r * vee(E);
  cmd.lambda = cfg_.k_f * (f_des - f_current);
  return saturate(cmd, cfg_.bounds);
}

Action lqg_action(const Command& cmd, const CommandBounds& bounds) {
  Action a;
  a.head<3>() = cmd.omega_cmd / bounds.omega_max;
  a(3) = cmd.lambda / bounds.lambda_max;
  return a;
}

}  // namespace mavtrack
