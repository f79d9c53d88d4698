#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "mavtrack/common.hpp"
#include "mavtrack/environment.hpp"
#include "mavtrack/nnet.hpp"

namespace mavtrack {

/// Uniform-replay ring buffer over fixed-shape transitions, stored as
/// float32 to keep a million-sample buffer within memory budget.
class ReplayBuffer {
 public:
  ReplayBuffer(int actor_obs_dim, int critic_obs_dim, int action_dim,
               std::size_t capacity);

  void push(const Eigen::VectorXd& actor_obs, const Eigen::VectorXd& critic_obs,
            const Eigen::VectorXd& action, double reward,
            const Eigen::VectorXd& next_actor_obs,
            const Eigen::VectorXd& next_critic_obs, bool terminal);

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  std::int64_t pushed() const { return pushed_; }

  /// Column-per-sample views in double precision, ready for the networks.
  struct Batch {
    Eigen::MatrixXd actor_obs;
    Eigen::MatrixXd critic_obs;
    Eigen::MatrixXd actions;
    Eigen::RowVectorXd rewards;
    Eigen::RowVectorXd terminal;  // 1.0 where bootstrap is masked
    Eigen::MatrixXd next_actor_obs;
    Eigen::MatrixXd next_critic_obs;
  };

  /// Uniform sampling with replacement over the current contents.
  Batch sample(int batch, Rng& rng) const;

  /// Copies one stored transition (for tests and inspection).
  Batch peek(std::size_t index) const;

 private:
  int ao_dim_, co_dim_, a_dim_;
  std::size_t capacity_;
  std::size_t size_ = 0;
  std::size_t cursor_ = 0;
  std::int64_t pushed_ = 0;
  Eigen::MatrixXf actor_obs_, critic_obs_, actions_;
  Eigen::MatrixXf next_actor_obs_, next_critic_obs_;
  Eigen::VectorXf rewards_;
  Eigen::VectorXf terminal_;
};

struct SacConfig {
  int actor_obs_dim = 48;
  int critic_obs_dim = 9;
  int action_dim = 4;
  std::vector<int> hidden = {256, 256, 256};

  double lr = 3e-4;
  double gamma = 0.99;
  double tau = 0.005;
  double entropy_target = -4.0;
  bool learn_alpha = true;
  double init_alpha = 1.0;
  double actor_final_scale = 0.01;

  int batch = 256;
  std::size_t buffer_capacity = 1000000;
  double updates_per_step = 1.0;
  std::int64_t warmup_steps = 5000;
  int num_envs = 8;

  void validate() const;
};

/// Twin-critic soft actor-critic with asymmetric observations: the actor
/// reads the noisy error history, the critics read privileged state plus
/// the action. Actions live in normalized [-1, 1] units throughout.
class SacAgent {
 public:
  SacAgent(const SacConfig& cfg, std::uint64_t seed);

  const SacConfig& config() const { return cfg_; }
  double alpha() const;
  double log_alpha() const { return log_alpha_; }
  const Mlp& actor() const { return actor_; }
  const Mlp& critic1() const { return critic1_; }
  const Mlp& critic2() const { return critic2_; }
  const Mlp& target1() const { return target1_; }
  const Mlp& target2() const { return target2_; }
  Mlp& actor() { return actor_; }
  Mlp& critic1() { return critic1_; }
  Mlp& critic2() { return critic2_; }
  Mlp& target1() { return target1_; }
  Mlp& target2() { return target2_; }
  std::int64_t updates_done() const { return updates_; }
  std::int64_t faults() const;

  /// Policy head: stochastic draws advance the agent RNG; deterministic
  /// evaluation uses the squashed mean and leaves the RNG untouched.
  Eigen::VectorXd act(const Eigen::VectorXd& actor_obs, bool stochastic);

  struct CriticStats {
    double loss1 = 0.0;
    double loss2 = 0.0;
    double mean_target = 0.0;
  };
  CriticStats critic_update(const ReplayBuffer::Batch& batch);

  /// Q evaluation callback: given actions (dim x B) and critic observations,
  /// returns per-sample values and the gradient of each value with respect
  /// to its action column.
  struct QEval {
    Eigen::RowVectorXd q;
    Eigen::MatrixXd dq_da;
  };
  using QGradFn = std::function<QEval(const Eigen::MatrixXd& actions,
                                      const Eigen::MatrixXd& critic_obs)>;

  /// One Adam step on the actor against min(Q1, Q2) minus the entropy term.
  double actor_update(const ReplayBuffer::Batch& batch);
  /// Same update against a caller-supplied Q surface (test seam).
  double actor_update(const ReplayBuffer::Batch& batch, const QGradFn& q_fn);

  /// Loss and parameter gradients for the actor objective without applying
  /// an optimizer step. Draws the reparameterization noise from the agent
  /// RNG, so identical RNG states yield identical losses.
  double actor_gradients(const ReplayBuffer::Batch& batch, const QGradFn& q_fn,
                         Gradients& out);

  /// Mean log-probability of the freshly sampled actions from the latest
  /// actor_update; feeds the temperature step.
  double last_mean_log_prob() const { return last_mean_log_prob_; }

  /// Gradient step on log alpha toward the entropy target. No-op when
  /// learn_alpha is false. Returns the updated alpha.
  double temperature_update(double mean_log_prob);

  void polyak_targets();

  /// One full update cycle: critics, actor, temperature, target tracking.
  struct UpdateStats {
    CriticStats critic;
    double actor_loss = 0.0;
    double alpha = 0.0;
  };
  UpdateStats update(const ReplayBuffer::Batch& batch);

  /// Full learner state: networks, optimizers, temperature, RNG.
  void save(std::ostream& out) const;
  void load(std::istream& in);

  /// Deployed policy: the actor network only.
  void save_policy(std::ostream& out) const;

 private:
  struct PolicySample {
    Eigen::MatrixXd mu, raw, sigma, xi, t;  // action_dim x B
    Eigen::MatrixXd clamp_mask;             // 1 where log-std is trainable
    Eigen::RowVectorXd log_prob;            // 1 x B
  };
  PolicySample sample_policy(const Eigen::MatrixXd& out);
  QEval min_critic_eval(const Eigen::MatrixXd& actions,
                        const Eigen::MatrixXd& critic_obs);

  SacConfig cfg_;
  Mlp actor_, critic1_, critic2_, target1_, target2_;
  Adam adam_actor_, adam_c1_, adam_c2_;
  double log_alpha_ = 0.0;
  std::int64_t alpha_t_ = 0;
  double alpha_m_ = 0.0;
  double alpha_v_ = 0.0;
  double last_mean_log_prob_ = 0.0;
  std::int64_t updates_ = 0;
  std::int64_t faults_ = 0;
  Rng rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// theta_target <- (1 - tau) theta_target + tau theta_source, elementwise.
void polyak(Mlp& target, const Mlp& source, double tau);

/// Lock-step training driver: every environment advances one step per
/// round, the learner runs between rounds, checkpoints and evaluation
/// rollouts happen on episode boundaries. Single-threaded and
/// bit-deterministic for a fixed seed.
struct TrainerConfig {
  EnvConfig env;
  SacConfig sac;
  std::uint64_t seed = 1;

  std::int64_t max_episodes = 4000;
  std::int64_t max_env_steps = -1;   // <= 0: unlimited
  double max_wall_hours = -1.0;      // <= 0: unlimited

  std::int64_t eval_every_episodes = 200;
  int eval_episodes = 5;
  double eval_alpha = 1.0;
  double eval_delta = 0.0;
  double eval_max_target_accel = 2.0;   // m/s^2 budget for eval sinusoids
  double eval_max_initial_speed = 1.0;  // m/s budget at spawn for eval draws

  std::int64_t checkpoint_every_episodes = 500;
  std::string out_dir;  // empty: keep everything in memory, write nothing

  void validate() const;
};

struct TrainResult {
  std::int64_t episodes = 0;
  std::int64_t env_steps = 0;
  std::int64_t updates = 0;
  double last_eval_reward = 0.0;
  double last_eval_err_m = 0.0;
  double last_eval_collision_rate = 0.0;
  std::string checkpoint_path;
  std::string policy_path;
  std::string metrics_path;
};

class Trainer {
 public:
  explicit Trainer(const TrainerConfig& cfg);

  /// Resumes learner state from a checkpoint stream before running.
  void restore(std::istream& in);

  TrainResult run();

  SacAgent& agent() { return agent_; }
  const SacAgent& agent() const { return agent_; }

 private:
  struct EvalStats {
    double mean_reward = 0.0;
    double mean_err_m = 0.0;
    double collision_rate = 0.0;
  };
  EvalStats run_eval(std::int64_t tag);
  void write_metrics_row(double wall_s, std::int64_t env_steps,
                         std::int64_t episodes, const EvalStats& ev);
  void save_checkpoint(const std::string& path);

  TrainerConfig cfg_;
  SacAgent agent_;
  ReplayBuffer buffer_;
  Rng warmup_rng_;
  Rng sample_rng_;
  std::int64_t env_steps_ = 0;
  std::int64_t episodes_ = 0;
  double update_credit_ = 0.0;
  std::string metrics_path_;
};

/// Sidecar metadata written next to a deployed policy file.
std::string policy_sidecar_json(const SacConfig& cfg, const EnvConfig& env);

}  // namespace mavtrack
