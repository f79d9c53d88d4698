#pragma once

#include <optional>
#include <vector>

#include "mavtrack/common.hpp"
#include "mavtrack/dynamics.hpp"
#include "mavtrack/target.hpp"

namespace mavtrack {

/// Episode configuration: geometry, noise, randomization ranges, reward
/// weights, and plant selection.
struct EnvConfig {
  Range alpha_range{0.6, 1.4};     // mass-gain randomization
  Range delta_range{0.0, 0.050};   // control-delay randomization, s
  double p_fixed = 0.1;            // share of fixed-point target episodes
  double p_ramp = 0.0;             // share of ramp target episodes
  TrajRanges traj;

  Vec3 y_ref = Vec3(0.75, 0.0, 0.0);  // desired body-frame offset, m
  double y_margin = 0.40;             // keep-out radius, m
  double sigma_w = 0.003;             // measurement noise std, m
  double sigma_s = 0.10;              // spawn noise std, m
  int history = 15;                   // past errors kept in the actor input
  int max_steps = 800;

  double crash_cost = 10.0;  // c
  double k_v = 0.4;
  double k_u = 0.4;
  double beta = 1.0 / 3.0;
  double divergence_radius = 100.0;  // m

  double m0 = 1.0;  // nominal mass, kg
  double t_s = 0.05;
  double dt_int = 0.005;
  CommandBounds bounds;
  Mat3 inertia = Vec3(0.01, 0.01, 0.02).asDiagonal();
  double k_omega = 0.5;

  bool use_validation_model = false;
  bool noise_enabled = true;
  bool freeze_history_noise = false;
  bool physical_action_penalty = false;

  int actor_obs_dim() const { return 3 * (history + 1); }
  static constexpr int kCriticObsDim = 9;
  void validate() const;
};

enum class Done { kRunning, kTimeout, kCollision, kDivergence };

using Action = Eigen::Vector4d;  // normalized (omega_cmd / omega_max, lambda / lambda_max)

struct StepResult {
  Eigen::VectorXd actor_obs;   // 3(H+1) noisy error history, newest first
  Eigen::VectorXd critic_obs;  // 9, noise-free privileged state
  double reward = 0.0;
  Done done = Done::kRunning;
  Vec3 error = Vec3::Zero();  // true e(k)
  double y_norm = 0.0;        // true target distance, m
};

/// Reward for one transition; `u` is the normalized (or physical, per config)
/// action 4-vector after saturation.
double compute_reward(const Vec3& e, const Vec3& y_dot,
                      const Eigen::Vector4d& u, double y_norm,
                      const EnvConfig& cfg);

/// The episode machine. Owns the plant state, the target trajectory, the
/// delay buffer, the error history, and the episode RNG. Deterministic given
/// the seed and the action sequence.
class Environment {
 public:
  /// Fixes per-episode quantities that are otherwise randomized at reset.
  /// A full trajectory override supersedes `kind` and skips the trajectory
  /// parameter draws; its origin is still replaced by the spawn rule.
  struct ResetOverrides {
    std::optional<double> alpha;
    std::optional<double> delta;
    std::optional<TrajKind> kind;
    std::optional<TrajParams> traj;
  };

  Environment(const EnvConfig& cfg, std::uint64_t seed);

  /// Reseeds the episode RNG; takes effect at the next reset.
  void reseed(std::uint64_t seed);

  StepResult reset() { return reset(ResetOverrides{}); }
  StepResult reset(const ResetOverrides& overrides);

  /// Applies one normalized action over a control period. Components are
  /// clipped to [-1, 1] before scaling to the actuator bounds.
  StepResult step(const Action& action);

  /// Denormalizes and saturates an action into a physical command.
  Command physical_command(const Action& action) const;

  bool episode_running() const { return running_; }
  int steps_done() const { return step_; }
  double time() const { return step_ * cfg_.t_s; }
  const SimState& state() const { return state_; }
  const TrajParams& traj() const { return traj_; }
  const PhysParams& phys() const { return phys_; }
  double alpha() const { return phys_.alpha; }
  double delta() const { return phys_.delta; }
  const EnvConfig& config() const { return cfg_; }

 private:
  StepResult make_result(double reward, Done done);
  Eigen::VectorXd build_actor_obs();
  void push_history(const Vec3& e);
  Vec3 noisy(const Vec3& e);

  EnvConfig cfg_;
  Rng rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  PhysParams phys_;
  std::optional<ValidationStepper> validation_;
  DelayBuffer delay_;
  TrajParams traj_;
  SimState state_;
  std::vector<Vec3> history_;  // newest at index 0
  Vec3 last_error_ = Vec3::Zero();
  double last_y_norm_ = 0.0;
  Vec3 last_y_dot_ = Vec3::Zero();
  Eigen::VectorXd last_critic_obs_;
  int step_ = 0;
  bool running_ = false;
};

}  // namespace mavtrack
