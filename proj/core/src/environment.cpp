#include "mavtrack/environment.hpp"

#include <cmath>

namespace mavtrack {

namespace {

double squash(double x) { return x / (1.0 + x); }

PhysParams make_phys(const EnvConfig& cfg, double alpha, double delta) {
  PhysParams pp;
  pp.m0 = cfg.m0;
  pp.alpha = alpha;
  pp.delta = delta;
  pp.f_min = 0.0;
  pp.f_max = 2.0 * cfg.m0 * kGravity;
  pp.J = cfg.inertia;
  pp.k_omega = cfg.k_omega;
  pp.t_s = cfg.t_s;
  pp.dt_int = cfg.dt_int;
  pp.validate();
  return pp;
}

}  // namespace

void EnvConfig::validate() const {
  if (!(alpha_range.lo > 0.0) || alpha_range.hi < alpha_range.lo) {
    throw ConfigError("alpha range must be positive and ordered");
  }
  if (delta_range.lo < 0.0 || delta_range.hi < delta_range.lo) {
    throw ConfigError("delta range must be non-negative and ordered");
  }
  if (p_fixed < 0.0 || p_ramp < 0.0 || p_fixed + p_ramp > 1.0) {
    throw ConfigError("target-kind probabilities must form a distribution");
  }
  if (!(y_margin > 0.0) || !(y_margin < y_ref.norm())) {
    throw ConfigError("keep-out radius must leave the set-point reachable");
  }
  if (sigma_w < 0.0 || sigma_s < 0.0) {
    throw ConfigError("noise levels must be non-negative");
  }
  if (history < 0 || max_steps < 1) {
    throw ConfigError("history length and episode length must be positive");
  }
  if (!(crash_cost > 0.0) || k_v < 0.0 || k_u < 0.0 || !(beta > 0.0)) {
    throw ConfigError("reward constants out of range");
  }
  if (!(divergence_radius > 0.0)) {
    throw ConfigError("divergence radius must be positive");
  }
  make_phys(*this, 1.0, 0.0);  // throws on inconsistent plant timing
}

double compute_reward(const Vec3& e, const Vec3& y_dot,
                      const Eigen::Vector4d& u, double y_norm,
                      const EnvConfig& cfg) {
  if (y_norm <= cfg.y_margin) {
    return -cfg.crash_cost;
  }
  double prod = 1.0;
  for (int j = 0; j < 3; ++j) {
    prod *= std::max(0.0, 1.0 - std::abs(e(j)));
  }
  const double r_e = std::pow(prod, cfg.beta);
  return r_e - cfg.k_v * squash(y_dot.norm()) - cfg.k_u * squash(u.norm());
}

Environment::Environment(const EnvConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), rng_(seed) {
  cfg_.validate();
  last_critic_obs_ = Eigen::VectorXd::Zero(EnvConfig::kCriticObsDim);
}

void Environment::reseed(std::uint64_t seed) { rng_.seed(seed); }

Vec3 Environment::noisy(const Vec3& e) {
  const double s = cfg_.noise_enabled ? cfg_.sigma_w : 0.0;
  return e + s * Vec3(normal_(rng_), normal_(rng_), normal_(rng_));
}

void Environment::push_history(const Vec3& e) {
  for (int j = static_cast<int>(history_.size()) - 1; j > 0; --j) {
    history_[j] = history_[j - 1];
  }
  history_[0] = cfg_.freeze_history_noise ? noisy(e) : e;
}

Eigen::VectorXd Environment::build_actor_obs() {
  Eigen::VectorXd obs(cfg_.actor_obs_dim());
  for (int j = 0; j < static_cast<int>(history_.size()); ++j) {
    const Vec3 entry =
        cfg_.freeze_history_noise ? history_[j] : noisy(history_[j]);
    obs.segment<3>(3 * j) = entry;
  }
  return obs;
}

StepResult Environment::make_result(double reward, Done done) {
  StepResult out;
  out.actor_obs = build_actor_obs();
  out.critic_obs = last_critic_obs_;
  out.reward = reward;
  out.done = done;
  out.error = last_error_;
  out.y_norm = last_y_norm_;
  return out;
}

StepResult Environment::reset(const ResetOverrides& overrides) {
  normal_.reset();
  const double alpha =
      overrides.alpha ? *overrides.alpha : cfg_.alpha_range.sample(rng_);
  double delta =
      overrides.delta ? *overrides.delta : cfg_.delta_range.sample(rng_);
  phys_ = make_phys(cfg_, alpha, delta);

  if (overrides.traj) {
    traj_ = *overrides.traj;
  } else {
    TrajKind kind;
    if (overrides.kind) {
      kind = *overrides.kind;
    } else {
      const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
      kind = u < cfg_.p_fixed                ? TrajKind::kFixed
             : u < cfg_.p_fixed + cfg_.p_ramp ? TrajKind::kRamp
                                              : TrajKind::kSinusoid;
    }
    traj_ = sample_traj_params(kind, cfg_.traj, rng_);
  }

  state_ = SimState{};
  state_.f = phys_.hover_thrust();
  delay_ = DelayBuffer(phys_.delay_substeps());
  if (cfg_.use_validation_model) {
    validation_.emplace(phys_);
  } else {
    validation_.reset();
  }

  const double ss = cfg_.noise_enabled ? cfg_.sigma_s : 0.0;
  const Vec3 w_s = ss * Vec3(normal_(rng_), normal_(rng_), normal_(rng_));
  traj_.origin = state_.p + state_.R * cfg_.y_ref + w_s;

  const TrajSample tgt = eval_trajectory(traj_, 0.0);
  const Vec3 y = output_y(state_, tgt.pos);
  last_error_ = cfg_.y_ref - y;
  last_y_norm_ = y.norm();
  const RelativeRates rr =
      relative_rates(state_, phys_, tgt.pos, tgt.vel, tgt.acc);
  last_y_dot_ = rr.y_dot;
  last_critic_obs_.segment<3>(0) = last_error_;
  last_critic_obs_.segment<3>(3) = rr.vel_body;
  last_critic_obs_.segment<3>(6) = rr.acc_body;

  history_.assign(cfg_.history + 1, Vec3::Zero());
  if (cfg_.freeze_history_noise) {
    const Vec3 primed = noisy(last_error_);
    for (auto& h : history_) {
      h = primed;
    }
  } else {
    for (auto& h : history_) {
      h = last_error_;
    }
  }

  step_ = 0;
  running_ = true;
  return make_result(0.0, Done::kRunning);
}

Command Environment::physical_command(const Action& action) const {
  Command cmd;
  const Action a = action.cwiseMax(-1.0).cwiseMin(1.0);
  cmd.omega_cmd = a.head<3>() * cfg_.bounds.omega_max;
  cmd.lambda = a(3) * cfg_.bounds.lambda_max;
  return cmd;
}

StepResult Environment::step(const Action& action) {
  if (!running_) {
    throw UsageError("step called on a finished episode");
  }
  const Action a = action.cwiseMax(-1.0).cwiseMin(1.0);
  const Command cmd = physical_command(a);

  const int n_sub = phys_.substeps_per_period();
  const std::int64_t base = static_cast<std::int64_t>(step_) * n_sub;
  delay_.push(cmd, base);
  state_ = validation_ ? validation_->substeps(state_, delay_, base, n_sub)
                       : step_substeps(state_, delay_, phys_, base, n_sub);
  ++step_;

  const TrajSample tgt = eval_trajectory(traj_, time());
  if (!state_.finite()) {
    running_ = false;
    return make_result(-cfg_.crash_cost, Done::kDivergence);
  }

  const Vec3 y = output_y(state_, tgt.pos);
  const Vec3 e = cfg_.y_ref - y;
  const RelativeRates rr =
      relative_rates(state_, phys_, tgt.pos, tgt.vel, tgt.acc);

  last_error_ = e;
  last_y_norm_ = y.norm();
  last_y_dot_ = rr.y_dot;
  last_critic_obs_.segment<3>(0) = e;
  last_critic_obs_.segment<3>(3) = rr.vel_body;
  last_critic_obs_.segment<3>(6) = rr.acc_body;
  push_history(e);

  if (!e.allFinite() || e.norm() > cfg_.divergence_radius) {
    running_ = false;
    return make_result(-cfg_.crash_cost, Done::kDivergence);
  }

  Eigen::Vector4d u_pen = a;
  if (cfg_.physical_action_penalty) {
    u_pen.head<3>() = cmd.omega_cmd;
    u_pen(3) = cmd.lambda;
  }
  const double reward = compute_reward(e, rr.y_dot, u_pen, last_y_norm_, cfg_);

  if (last_y_norm_ <= cfg_.y_margin) {
    running_ = false;
    return make_result(reward, Done::kCollision);
  }
  if (step_ >= cfg_.max_steps) {
    running_ = false;
    return make_result(reward, Done::kTimeout);
  }
  return make_result(reward, Done::kRunning);
}

}  // namespace mavtrack
