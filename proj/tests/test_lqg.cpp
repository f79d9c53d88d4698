#include "mavtrack/lqg.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>
#include <doctest.h>
#include <nlohmann/json.hpp>

using namespace mavtrack;

namespace {

Eigen::MatrixXd scalar(double v) {
  Eigen::MatrixXd m(1, 1);
  m << v;
  return m;
}

double spectral_radius(const Eigen::MatrixXd& m) {
  return m.eigenvalues().cwiseAbs().maxCoeff();
}

/// Drives the environment with the baseline controller; returns the mean
/// true tracking error over steps with time >= skip_s.
double rollout_mean_err(Environment& env, LqgController& ctl,
                        const Environment::ResetOverrides& ov, double skip_s) {
  StepResult r = env.reset(ov);
  ctl.reset();
  double err_sum = 0.0;
  int counted = 0;
  while (env.episode_running()) {
    const Vec3 e_noisy = r.actor_obs.head<3>();
    const Vec3 y_meas = env.config().y_ref - e_noisy;
    const Command cmd = ctl.step(y_meas, env.state().R, env.state().f);
    r = env.step(lqg_action(cmd, env.config().bounds));
    if (env.time() >= skip_s) {
      err_sum += r.error.norm();
      ++counted;
    }
  }
  REQUIRE(counted > 0);
  return err_sum / counted;
}

}  // namespace

TEST_CASE("scalar DARE solution is the golden ratio") {
  const Eigen::MatrixXd P =
      solve_dare(scalar(1.0), scalar(1.0), scalar(1.0), scalar(1.0));
  const double golden = 0.5 * (1.0 + std::sqrt(5.0));
  CHECK(P(0, 0) == doctest::Approx(golden).epsilon(1e-9));
  CHECK(dare_residual(scalar(1.0), scalar(1.0), scalar(1.0), scalar(1.0), P) <
        1e-10);
}

TEST_CASE("zero input channel reduces the DARE to a Lyapunov equation") {
  const double a = 0.9, q = 1.0;
  const Eigen::MatrixXd P =
      solve_dare(scalar(a), scalar(0.0), scalar(q), scalar(1.0));
  CHECK(P(0, 0) == doctest::Approx(q / (1.0 - a * a)).epsilon(1e-9));
}

TEST_CASE("zero state weight gives the zero solution") {
  const Eigen::MatrixXd P =
      solve_dare(scalar(0.9), scalar(1.0), scalar(0.0), scalar(1.0));
  CHECK(P(0, 0) == 0.0);
}

TEST_CASE("DARE rejects malformed inputs") {
  CHECK_THROWS_AS(solve_dare(scalar(1.0), scalar(1.0), scalar(1.0),
                             scalar(0.0)),
                  ConfigError);
  CHECK_THROWS_AS(solve_dare(scalar(1.0), scalar(1.0), scalar(-1.0),
                             scalar(1.0)),
                  ConfigError);
  Eigen::MatrixXd bad(2, 1);
  bad << 1.0, 0.0;
  CHECK_THROWS_AS(solve_dare(scalar(1.0), bad, scalar(1.0), scalar(1.0)),
                  ConfigError);
}

TEST_CASE("kalman gain matches the dual control DARE in the scalar case") {
  const double a = 0.95, c = 1.0, q_w = 0.3, r_v = 0.7;
  const KalmanGain kg =
      kalman_gain(scalar(a), scalar(c), scalar(q_w), scalar(r_v));
  const Eigen::MatrixXd sigma_dual =
      solve_dare(scalar(a), scalar(c), scalar(q_w), scalar(r_v));
  CHECK(kg.sigma(0, 0) == doctest::Approx(sigma_dual(0, 0)).epsilon(1e-10));
  const double l_manual =
      kg.sigma(0, 0) * c / (c * kg.sigma(0, 0) * c + r_v);
  CHECK(kg.L(0, 0) == doctest::Approx(l_manual).epsilon(1e-12));
}

TEST_CASE("huge measurement noise turns the filter off") {
  // On a strictly stable plant the prior covariance stays bounded, so the
  // gain scales like 1/R_v.
  const KalmanGain kg =
      kalman_gain(scalar(0.9), scalar(1.0), scalar(0.3), scalar(1e12));
  CHECK(kg.L.norm() < 1e-6);

  // The marginally stable double integrator accumulates covariance as the
  // measurements fade, so the decay is slower but still monotone.
  const LinModel m =
      LinModel::double_integrator(0.05, Eigen::Vector2d(0.0, 0.5), 1e12);
  const KalmanGain far = kalman_gain(m.A, m.C, m.Q_w, scalar(1e12));
  const KalmanGain near = kalman_gain(m.A, m.C, m.Q_w, scalar(9e-6));
  CHECK(far.L.norm() < 1e-3);
  CHECK(far.L.norm() < 1e-3 * near.L.norm());
}

TEST_CASE("no process noise on a stable plant silences the filter") {
  const KalmanGain kg =
      kalman_gain(scalar(0.9), scalar(1.0), scalar(0.0), scalar(1.0));
  CHECK(kg.L.norm() < 1e-9);
}

TEST_CASE("default gain set is internally consistent") {
  const LqgConfig cfg;
  const LqgGains g = compute_lqg_gains(cfg);

  CHECK(g.control_residual < 1e-10);
  CHECK(g.filter_residual < 1e-10);

  const LinModel m =
      LinModel::double_integrator(cfg.t_s, cfg.q_w_diag, cfg.r_v);
  const Eigen::Matrix2d closed_ctrl = m.A - m.B * g.K;
  const Eigen::Matrix2d closed_filt =
      m.A - g.L * (m.C * m.A);
  CHECK(spectral_radius(closed_ctrl) < 1.0);
  CHECK(spectral_radius(closed_filt) < 1.0);

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(g.sigma);
  CHECK(eig.eigenvalues().minCoeff() >= -1e-12);
  CHECK((g.sigma - g.sigma.transpose()).norm() < 1e-12);
  CHECK(g.K(0) > 0.0);
  CHECK(g.K(1) > 0.0);
}

TEST_CASE("equilibrium produces null commands") {
  const LqgConfig cfg;
  LqgController ctl(cfg);
  const double f_hover = cfg.m0 * cfg.gravity;
  for (int k = 0; k < 10; ++k) {
    const Command cmd = ctl.step(cfg.y_ref, Mat3::Identity(), f_hover);
    CHECK(cmd.omega_cmd.norm() < 1e-9);
    CHECK(std::abs(cmd.lambda) < 1e-9);
  }
}

TEST_CASE("target ahead of the set-point pitches the tracker forward") {
  const LqgConfig cfg;
  LqgController ctl(cfg);
  const Vec3 y_meas(1.75, 0.0, 0.0);
  const double f_hover = cfg.m0 * cfg.gravity;
  const Command cmd = ctl.step(y_meas, Mat3::Identity(), f_hover);
  CHECK(cmd.omega_cmd(1) > 0.0);
  CHECK(std::abs(cmd.omega_cmd(0)) < 1e-12);
  CHECK(std::abs(cmd.omega_cmd(2)) < 1e-12);

  // Independent oracle for the magnitude: a_x = K(0) * 1.0 tilts the
  // desired thrust direction by atan(a_x / g) about +y, and the rate
  // command is k_r * sin(tilt) for a level tracker.
  const LqgGains g = compute_lqg_gains(cfg);
  const double tilt = std::atan2(g.K(0) * 1.0, cfg.gravity);
  const double expected =
      std::min(cfg.k_r * std::sin(tilt), cfg.bounds.omega_max);
  CHECK(cmd.omega_cmd(1) == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("commands always respect the actuator bounds") {
  const LqgConfig cfg;
  LqgController ctl(cfg);
  Rng rng(901);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 19.6);
  for (int k = 0; k < 500; ++k) {
    const Vec3 y_meas(5.0 * n(rng), 5.0 * n(rng), 5.0 * n(rng));
    const Mat3 R = rotation_exp(Vec3(n(rng), n(rng), n(rng)), 0.3);
    const Command cmd = ctl.step(y_meas, R, u(rng));
    CHECK(cmd.omega_cmd.cwiseAbs().maxCoeff() <= cfg.bounds.omega_max);
    CHECK(std::abs(cmd.lambda) <= cfg.bounds.lambda_max);
    CHECK(cmd.omega_cmd.allFinite());
  }
}

TEST_CASE("gain dump round-trips through JSON") {
  const LqgConfig cfg;
  const LqgGains g = compute_lqg_gains(cfg);
  const auto j = nlohmann::json::parse(lqg_gains_json(cfg, g));
  CHECK(j["gains"]["K"][0].get<double>() == g.K(0));
  CHECK(j["gains"]["K"][1].get<double>() == g.K(1));
  CHECK(j["gains"]["L"][0].get<double>() == g.L(0));
  CHECK(j["weights"]["r_v"].get<double>() == cfg.r_v);
  CHECK(j["model"]["t_s"].get<double>() == cfg.t_s);
  CHECK(j["gains"]["control_residual"].get<double>() < 1e-10);
}

TEST_CASE("static target at the set-point is held within a centimeter") {
  EnvConfig env_cfg;
  env_cfg.use_validation_model = true;
  Environment env(env_cfg, 2024);
  LqgConfig cfg = LqgConfig::from_env(env_cfg);
  LqgController ctl(cfg);

  Environment::ResetOverrides ov;
  ov.alpha = 1.0;
  ov.delta = 0.0;
  ov.kind = TrajKind::kFixed;
  const double mean_err = rollout_mean_err(env, ctl, ov, 2.0);
  CHECK(mean_err < 0.01);
}

TEST_CASE("nominal sinusoid tracking stays within the acceptance band") {
  EnvConfig env_cfg;
  env_cfg.use_validation_model = true;
  Environment env(env_cfg, 77);
  Rng traj_rng(78);
  LqgController ctl(LqgConfig::tuned());

  double total = 0.0;
  const int episodes = 5;
  for (int ep = 0; ep < episodes; ++ep) {
    Environment::ResetOverrides ov;
    ov.alpha = 1.0;
    ov.delta = 0.0;
    ov.traj = sample_feasible_traj_params(TrajKind::kSinusoid, env_cfg.traj,
                                          traj_rng, 2.0, 1.0);
    total += rollout_mean_err(env, ctl, ov, 2.0);
  }
  CHECK(total / episodes < 0.05);
}

TEST_CASE("tuned gains remain stable and satisfy the residual invariants") {
  const LqgConfig cfg = LqgConfig::tuned();
  const LqgGains g = compute_lqg_gains(cfg);
  CHECK(g.control_residual < 1e-10);
  CHECK(g.filter_residual < 1e-10);

  const LinModel m =
      LinModel::double_integrator(cfg.t_s, cfg.q_w_diag, cfg.r_v);
  CHECK(spectral_radius(m.A - m.B * g.K) < 1.0);
  CHECK(spectral_radius(m.A - m.B * g.K_z) < 1.0);
  CHECK(spectral_radius(m.A - g.L * m.C * m.A) < 1.0);
}
