#include "mavtrack/sac.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

namespace mavtrack {

namespace {

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_i64(std::ostream& out, std::int64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_f64(std::ostream& out, double v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw ConfigError("truncated checkpoint stream");
  return v;
}

std::int64_t read_i64(std::istream& in) {
  std::int64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw ConfigError("truncated checkpoint stream");
  return v;
}

double read_f64(std::istream& in) {
  double v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw ConfigError("truncated checkpoint stream");
  return v;
}

void write_text(std::ostream& out, const std::string& s) {
  write_i64(out, static_cast<std::int64_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_text(std::istream& in) {
  const std::int64_t n = read_i64(in);
  if (n < 0 || n > (1 << 26)) throw ConfigError("corrupt checkpoint string");
  std::string s(static_cast<std::size_t>(n), '\0');
  in.read(s.data(), n);
  if (!in) throw ConfigError("truncated checkpoint stream");
  return s;
}

double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

bool mlp_finite(const Mlp& net) {
  for (const auto& layer : net.layers()) {
    if (!layer.W.allFinite() || !layer.b.allFinite()) return false;
  }
  return true;
}

constexpr char kCheckpointMagic[4] = {'M', 'V', 'S', 'C'};
constexpr char kTrainerMagic[4] = {'M', 'V', 'T', 'R'};

}  // namespace

ReplayBuffer::ReplayBuffer(int actor_obs_dim, int critic_obs_dim,
                           int action_dim, std::size_t capacity)
    : ao_dim_(actor_obs_dim),
      co_dim_(critic_obs_dim),
      a_dim_(action_dim),
      capacity_(capacity) {
  if (actor_obs_dim < 1 || critic_obs_dim < 1 || action_dim < 1 ||
      capacity < 1) {
    throw ConfigError("replay buffer shape must be positive");
  }
  const auto cap = static_cast<Eigen::Index>(capacity);
  actor_obs_.resize(ao_dim_, cap);
  critic_obs_.resize(co_dim_, cap);
  actions_.resize(a_dim_, cap);
  next_actor_obs_.resize(ao_dim_, cap);
  next_critic_obs_.resize(co_dim_, cap);
  rewards_.resize(cap);
  terminal_.resize(cap);
}

void ReplayBuffer::push(const Eigen::VectorXd& actor_obs,
                        const Eigen::VectorXd& critic_obs,
                        const Eigen::VectorXd& action, double reward,
                        const Eigen::VectorXd& next_actor_obs,
                        const Eigen::VectorXd& next_critic_obs,
                        bool terminal) {
  if (actor_obs.size() != ao_dim_ || critic_obs.size() != co_dim_ ||
      action.size() != a_dim_ || next_actor_obs.size() != ao_dim_ ||
      next_critic_obs.size() != co_dim_) {
    throw UsageError("transition shape does not match the buffer layout");
  }
  if (!std::isfinite(reward)) {
    throw UsageError("transition reward must be finite");
  }
  const auto c = static_cast<Eigen::Index>(cursor_);
  actor_obs_.col(c) = actor_obs.cast<float>();
  critic_obs_.col(c) = critic_obs.cast<float>();
  actions_.col(c) = action.cast<float>();
  next_actor_obs_.col(c) = next_actor_obs.cast<float>();
  next_critic_obs_.col(c) = next_critic_obs.cast<float>();
  rewards_(c) = static_cast<float>(reward);
  terminal_(c) = terminal ? 1.0f : 0.0f;
  cursor_ = (cursor_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
  ++pushed_;
}

ReplayBuffer::Batch ReplayBuffer::sample(int batch, Rng& rng) const {
  if (batch < 1) throw UsageError("batch size must be positive");
  if (size_ == 0) throw UsageError("cannot sample from an empty buffer");
  Batch out;
  out.actor_obs.resize(ao_dim_, batch);
  out.critic_obs.resize(co_dim_, batch);
  out.actions.resize(a_dim_, batch);
  out.next_actor_obs.resize(ao_dim_, batch);
  out.next_critic_obs.resize(co_dim_, batch);
  out.rewards.resize(batch);
  out.terminal.resize(batch);
  std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
  for (int b = 0; b < batch; ++b) {
    const auto idx = static_cast<Eigen::Index>(pick(rng));
    out.actor_obs.col(b) = actor_obs_.col(idx).cast<double>();
    out.critic_obs.col(b) = critic_obs_.col(idx).cast<double>();
    out.actions.col(b) = actions_.col(idx).cast<double>();
    out.next_actor_obs.col(b) = next_actor_obs_.col(idx).cast<double>();
    out.next_critic_obs.col(b) = next_critic_obs_.col(idx).cast<double>();
    out.rewards(b) = rewards_(idx);
    out.terminal(b) = terminal_(idx);
  }
  return out;
}

ReplayBuffer::Batch ReplayBuffer::peek(std::size_t index) const {
  if (index >= size_) throw UsageError("peek index out of range");
  Batch out;
  const auto idx = static_cast<Eigen::Index>(index);
  out.actor_obs = actor_obs_.col(idx).cast<double>();
  out.critic_obs = critic_obs_.col(idx).cast<double>();
  out.actions = actions_.col(idx).cast<double>();
  out.next_actor_obs = next_actor_obs_.col(idx).cast<double>();
  out.next_critic_obs = next_critic_obs_.col(idx).cast<double>();
  out.rewards.resize(1);
  out.rewards(0) = rewards_(idx);
  out.terminal.resize(1);
  out.terminal(0) = terminal_(idx);
  return out;
}

void SacConfig::validate() const {
  if (actor_obs_dim < 1 || critic_obs_dim < 1 || action_dim < 1) {
    throw ConfigError("observation and action dimensions must be positive");
  }
  if (hidden.empty()) throw ConfigError("at least one hidden layer required");
  for (int h : hidden) {
    if (h < 1) throw ConfigError("hidden widths must be positive");
  }
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (gamma < 0.0 || gamma >= 1.0) throw ConfigError("gamma must be in [0,1)");
  if (!(tau > 0.0) || tau > 1.0) throw ConfigError("tau must be in (0,1]");
  if (!(init_alpha > 0.0)) throw ConfigError("init_alpha must be positive");
  if (batch < 1) throw ConfigError("batch size must be positive");
  if (buffer_capacity < static_cast<std::size_t>(batch)) {
    throw ConfigError("buffer capacity must cover one batch");
  }
  if (updates_per_step < 0.0) {
    throw ConfigError("updates_per_step must be non-negative");
  }
  if (warmup_steps < 0) throw ConfigError("warmup_steps must be non-negative");
  if (num_envs < 1) throw ConfigError("num_envs must be positive");
  if (!(actor_final_scale > 0.0)) {
    throw ConfigError("actor_final_scale must be positive");
  }
}

SacAgent::SacAgent(const SacConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), rng_(seed) {
  cfg_.validate();
  std::vector<int> actor_sizes;
  actor_sizes.push_back(cfg_.actor_obs_dim);
  actor_sizes.insert(actor_sizes.end(), cfg_.hidden.begin(), cfg_.hidden.end());
  actor_sizes.push_back(2 * cfg_.action_dim);
  std::vector<int> critic_sizes;
  critic_sizes.push_back(cfg_.critic_obs_dim + cfg_.action_dim);
  critic_sizes.insert(critic_sizes.end(), cfg_.hidden.begin(),
                      cfg_.hidden.end());
  critic_sizes.push_back(1);

  actor_ = Mlp(actor_sizes, Activation::kReLU, Activation::kLinear);
  critic1_ = Mlp(critic_sizes, Activation::kReLU, Activation::kLinear);
  critic2_ = Mlp(critic_sizes, Activation::kReLU, Activation::kLinear);
  actor_.init(rng_, cfg_.actor_final_scale);
  critic1_.init(rng_);
  critic2_.init(rng_);
  target1_ = critic1_;
  target2_ = critic2_;
  adam_actor_ = Adam(actor_, cfg_.lr);
  adam_c1_ = Adam(critic1_, cfg_.lr);
  adam_c2_ = Adam(critic2_, cfg_.lr);
  log_alpha_ = std::log(cfg_.init_alpha);
}

double SacAgent::alpha() const { return std::exp(log_alpha_); }

std::int64_t SacAgent::faults() const {
  return faults_ + adam_actor_.faults() + adam_c1_.faults() + adam_c2_.faults();
}

Eigen::VectorXd SacAgent::act(const Eigen::VectorXd& actor_obs,
                              bool stochastic) {
  if (actor_obs.size() != cfg_.actor_obs_dim) {
    throw UsageError("actor observation has the wrong dimension");
  }
  const Eigen::VectorXd head = actor_.forward_one(actor_obs);
  const Eigen::VectorXd mu = head.head(cfg_.action_dim);
  const Eigen::VectorXd log_std = head.tail(cfg_.action_dim);
  const Eigen::VectorXd bounds = Eigen::VectorXd::Ones(cfg_.action_dim);
  if (!stochastic) {
    return squashed_mean_action(mu, bounds);
  }
  return squashed_gaussian_sample(mu, log_std, rng_, bounds).action;
}

SacAgent::PolicySample SacAgent::sample_policy(const Eigen::MatrixXd& out) {
  const int adim = cfg_.action_dim;
  const auto B = out.cols();
  PolicySample ps;
  ps.mu = out.topRows(adim);
  ps.raw = out.bottomRows(adim);
  ps.clamp_mask = Eigen::MatrixXd::Zero(adim, B);
  Eigen::MatrixXd log_std(adim, B);
  for (Eigen::Index b = 0; b < B; ++b) {
    for (int i = 0; i < adim; ++i) {
      const double raw = ps.raw(i, b);
      log_std(i, b) = std::clamp(raw, kLogStdMin, kLogStdMax);
      ps.clamp_mask(i, b) = (raw > kLogStdMin && raw < kLogStdMax) ? 1.0 : 0.0;
    }
  }
  ps.sigma = log_std.array().exp().matrix();
  ps.xi.resize(adim, B);
  for (Eigen::Index b = 0; b < B; ++b) {
    for (int i = 0; i < adim; ++i) {
      ps.xi(i, b) = normal_(rng_);
    }
  }
  const Eigen::MatrixXd z = ps.mu + ps.sigma.cwiseProduct(ps.xi);
  ps.t = z.array().tanh().matrix();
  ps.log_prob.resize(B);
  const double half_log_2pi = 0.5 * std::log(2.0 * EIGEN_PI);
  for (Eigen::Index b = 0; b < B; ++b) {
    double lp = 0.0;
    for (int i = 0; i < adim; ++i) {
      lp += -0.5 * ps.xi(i, b) * ps.xi(i, b) - half_log_2pi - log_std(i, b);
      lp -= 2.0 * (std::log(2.0) - z(i, b) - softplus(-2.0 * z(i, b)));
    }
    ps.log_prob(b) = lp;
  }
  return ps;
}

SacAgent::CriticStats SacAgent::critic_update(const ReplayBuffer::Batch& batch) {
  const auto B = batch.actions.cols();
  const double a_ent = alpha();

  PolicySample next = sample_policy(actor_.forward(batch.next_actor_obs));
  Eigen::MatrixXd xp(cfg_.critic_obs_dim + cfg_.action_dim, B);
  xp.topRows(cfg_.critic_obs_dim) = batch.next_critic_obs;
  xp.bottomRows(cfg_.action_dim) = next.t;
  const Eigen::RowVectorXd q1t = target1_.forward(xp).row(0);
  const Eigen::RowVectorXd q2t = target2_.forward(xp).row(0);
  const Eigen::RowVectorXd qmin = q1t.cwiseMin(q2t);
  const Eigen::RowVectorXd y =
      (batch.rewards.array() +
       cfg_.gamma * (1.0 - batch.terminal.array()) *
           (qmin.array() - a_ent * next.log_prob.array()))
          .matrix();

  Eigen::MatrixXd x(cfg_.critic_obs_dim + cfg_.action_dim, B);
  x.topRows(cfg_.critic_obs_dim) = batch.critic_obs;
  x.bottomRows(cfg_.action_dim) = batch.actions;

  CriticStats stats;
  stats.mean_target = y.mean();

  ForwardCache c1;
  const Eigen::RowVectorXd q1 = critic1_.forward(x, c1).row(0);
  stats.loss1 = (q1 - y).squaredNorm() / static_cast<double>(B);
  if (std::isfinite(stats.loss1)) {
    Eigen::MatrixXd og = (2.0 / static_cast<double>(B)) * (q1 - y);
    Gradients g1;
    critic1_.backward(c1, og, g1);
    adam_c1_.step(critic1_, g1);
  } else {
    ++faults_;
  }

  ForwardCache c2;
  const Eigen::RowVectorXd q2 = critic2_.forward(x, c2).row(0);
  stats.loss2 = (q2 - y).squaredNorm() / static_cast<double>(B);
  if (std::isfinite(stats.loss2)) {
    Eigen::MatrixXd og = (2.0 / static_cast<double>(B)) * (q2 - y);
    Gradients g2;
    critic2_.backward(c2, og, g2);
    adam_c2_.step(critic2_, g2);
  } else {
    ++faults_;
  }
  return stats;
}

SacAgent::QEval SacAgent::min_critic_eval(const Eigen::MatrixXd& actions,
                                          const Eigen::MatrixXd& critic_obs) {
  const auto B = actions.cols();
  Eigen::MatrixXd x(cfg_.critic_obs_dim + cfg_.action_dim, B);
  x.topRows(cfg_.critic_obs_dim) = critic_obs;
  x.bottomRows(cfg_.action_dim) = actions;

  ForwardCache c1, c2;
  const Eigen::RowVectorXd q1 = critic1_.forward(x, c1).row(0);
  const Eigen::RowVectorXd q2 = critic2_.forward(x, c2).row(0);

  Eigen::MatrixXd sel1(1, B), sel2(1, B);
  for (Eigen::Index b = 0; b < B; ++b) {
    const bool first = q1(b) <= q2(b);
    sel1(0, b) = first ? 1.0 : 0.0;
    sel2(0, b) = first ? 0.0 : 1.0;
  }
  Gradients scratch;
  const Eigen::MatrixXd gin1 = critic1_.backward(c1, sel1, scratch);
  const Eigen::MatrixXd gin2 = critic2_.backward(c2, sel2, scratch);

  QEval out;
  out.q = q1.cwiseMin(q2);
  out.dq_da = gin1.bottomRows(cfg_.action_dim) + gin2.bottomRows(cfg_.action_dim);
  return out;
}

double SacAgent::actor_update(const ReplayBuffer::Batch& batch) {
  return actor_update(batch, [this](const Eigen::MatrixXd& actions,
                                    const Eigen::MatrixXd& critic_obs) {
    return min_critic_eval(actions, critic_obs);
  });
}

double SacAgent::actor_gradients(const ReplayBuffer::Batch& batch,
                                 const QGradFn& q_fn, Gradients& out) {
  const auto B = batch.actor_obs.cols();
  const double inv_b = 1.0 / static_cast<double>(B);
  const double a_ent = alpha();

  ForwardCache cache;
  const Eigen::MatrixXd head = actor_.forward(batch.actor_obs, cache);
  PolicySample ps = sample_policy(head);

  const QEval qe = q_fn(ps.t, batch.critic_obs);
  const double loss = inv_b * (a_ent * ps.log_prob.sum() - qe.q.sum());
  last_mean_log_prob_ = ps.log_prob.mean();

  const Eigen::ArrayXXd one_minus_t2 = 1.0 - ps.t.array().square();
  const Eigen::ArrayXXd dq = qe.dq_da.array();
  const Eigen::ArrayXXd sig_xi = ps.sigma.array() * ps.xi.array();

  Eigen::MatrixXd out_grad(2 * cfg_.action_dim, B);
  out_grad.topRows(cfg_.action_dim) =
      (inv_b * (a_ent * 2.0 * ps.t.array() - dq * one_minus_t2)).matrix();
  out_grad.bottomRows(cfg_.action_dim) =
      (inv_b *
       (a_ent * (-1.0 + 2.0 * ps.t.array() * sig_xi) -
        dq * one_minus_t2 * sig_xi) *
       ps.clamp_mask.array())
          .matrix();

  actor_.backward(cache, out_grad, out);
  return loss;
}

double SacAgent::actor_update(const ReplayBuffer::Batch& batch,
                              const QGradFn& q_fn) {
  Gradients g;
  const double loss = actor_gradients(batch, q_fn, g);
  if (std::isfinite(loss)) {
    adam_actor_.step(actor_, g);
  } else {
    ++faults_;
  }
  return loss;
}

double SacAgent::temperature_update(double mean_log_prob) {
  if (!cfg_.learn_alpha) {
    return alpha();
  }
  const double grad = -(mean_log_prob + cfg_.entropy_target);
  if (!std::isfinite(grad)) {
    ++faults_;
    return alpha();
  }
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++alpha_t_;
  alpha_m_ = b1 * alpha_m_ + (1.0 - b1) * grad;
  alpha_v_ = b2 * alpha_v_ + (1.0 - b2) * grad * grad;
  const double mhat =
      alpha_m_ / (1.0 - std::pow(b1, static_cast<double>(alpha_t_)));
  const double vhat =
      alpha_v_ / (1.0 - std::pow(b2, static_cast<double>(alpha_t_)));
  log_alpha_ -= cfg_.lr * mhat / (std::sqrt(vhat) + eps);
  return alpha();
}

void polyak(Mlp& target, const Mlp& source, double tau) {
  if (target.layer_count() != source.layer_count()) {
    throw UsageError("polyak update over mismatched networks");
  }
  for (int i = 0; i < target.layer_count(); ++i) {
    auto& tl = target.layers()[i];
    const auto& sl = source.layers()[i];
    tl.W = (1.0 - tau) * tl.W + tau * sl.W;
    tl.b = (1.0 - tau) * tl.b + tau * sl.b;
  }
}

void SacAgent::polyak_targets() {
  polyak(target1_, critic1_, cfg_.tau);
  polyak(target2_, critic2_, cfg_.tau);
}

SacAgent::UpdateStats SacAgent::update(const ReplayBuffer::Batch& batch) {
  UpdateStats stats;
  stats.critic = critic_update(batch);
  stats.actor_loss = actor_update(batch);
  stats.alpha = temperature_update(last_mean_log_prob_);
  polyak_targets();
  ++updates_;
  return stats;
}

void SacAgent::save(std::ostream& out) const {
  out.write(kCheckpointMagic, 4);
  write_u32(out, 1);
  write_u32(out, static_cast<std::uint32_t>(cfg_.actor_obs_dim));
  write_u32(out, static_cast<std::uint32_t>(cfg_.critic_obs_dim));
  write_u32(out, static_cast<std::uint32_t>(cfg_.action_dim));
  write_u32(out, static_cast<std::uint32_t>(cfg_.hidden.size()));
  for (int h : cfg_.hidden) write_u32(out, static_cast<std::uint32_t>(h));
  save_mlp(out, actor_);
  save_mlp(out, critic1_);
  save_mlp(out, critic2_);
  save_mlp(out, target1_);
  save_mlp(out, target2_);
  adam_actor_.save(out);
  adam_c1_.save(out);
  adam_c2_.save(out);
  write_f64(out, log_alpha_);
  write_u32(out, cfg_.learn_alpha ? 1 : 0);
  write_i64(out, alpha_t_);
  write_f64(out, alpha_m_);
  write_f64(out, alpha_v_);
  write_f64(out, last_mean_log_prob_);
  write_i64(out, updates_);
  write_i64(out, faults_);
  std::ostringstream rng_text;
  rng_text << rng_;
  write_text(out, rng_text.str());
  std::ostringstream normal_text;
  normal_text << normal_;
  write_text(out, normal_text.str());
  if (!out) throw ConfigError("failed to write checkpoint stream");
}

void SacAgent::load(std::istream& in) {
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw ConfigError("not a learner checkpoint (bad magic)");
  }
  if (read_u32(in) != 1) throw ConfigError("unsupported checkpoint version");
  const auto ao = static_cast<int>(read_u32(in));
  const auto co = static_cast<int>(read_u32(in));
  const auto ad = static_cast<int>(read_u32(in));
  const auto nh = static_cast<int>(read_u32(in));
  std::vector<int> hidden(nh);
  for (int& h : hidden) h = static_cast<int>(read_u32(in));
  if (ao != cfg_.actor_obs_dim || co != cfg_.critic_obs_dim ||
      ad != cfg_.action_dim || hidden != cfg_.hidden) {
    throw ConfigError("checkpoint shape does not match the configuration");
  }
  actor_ = load_mlp(in);
  critic1_ = load_mlp(in);
  critic2_ = load_mlp(in);
  target1_ = load_mlp(in);
  target2_ = load_mlp(in);
  adam_actor_.load(in, actor_);
  adam_c1_.load(in, critic1_);
  adam_c2_.load(in, critic2_);
  log_alpha_ = read_f64(in);
  cfg_.learn_alpha = read_u32(in) != 0;
  alpha_t_ = read_i64(in);
  alpha_m_ = read_f64(in);
  alpha_v_ = read_f64(in);
  last_mean_log_prob_ = read_f64(in);
  updates_ = read_i64(in);
  faults_ = read_i64(in);
  std::istringstream rng_text(read_text(in));
  rng_text >> rng_;
  std::istringstream normal_text(read_text(in));
  normal_text >> normal_;
  if (rng_text.fail() || normal_text.fail()) {
    throw ConfigError("corrupt RNG state in checkpoint");
  }
}

void SacAgent::save_policy(std::ostream& out) const { save_mlp(out, actor_); }

void TrainerConfig::validate() const {
  env.validate();
  sac.validate();
  if (env.actor_obs_dim() != sac.actor_obs_dim ||
      EnvConfig::kCriticObsDim != sac.critic_obs_dim || sac.action_dim != 4) {
    throw ConfigError("agent dimensions do not match the environment");
  }
  if (max_episodes <= 0 && max_env_steps <= 0 && max_wall_hours <= 0.0) {
    throw ConfigError("at least one stop condition must be set");
  }
  if (eval_episodes < 0) throw ConfigError("eval_episodes must be >= 0");
}

namespace {
const SacConfig& validated_sac(const TrainerConfig& cfg) {
  cfg.validate();
  return cfg.sac;
}
}  // namespace

Trainer::Trainer(const TrainerConfig& cfg)
    : cfg_(cfg),
      agent_(validated_sac(cfg), derive_seed(cfg.seed, 1)),
      buffer_(cfg.sac.actor_obs_dim, cfg.sac.critic_obs_dim,
              cfg.sac.action_dim, cfg.sac.buffer_capacity),
      warmup_rng_(derive_seed(cfg.seed, 2)),
      sample_rng_(derive_seed(cfg.seed, 3)) {}

void Trainer::restore(std::istream& in) {
  agent_.load(in);
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kTrainerMagic, 4) != 0) {
    throw ConfigError("checkpoint lacks the trainer block");
  }
  env_steps_ = read_i64(in);
  episodes_ = read_i64(in);
  update_credit_ = read_f64(in);
  std::istringstream w(read_text(in));
  w >> warmup_rng_;
  std::istringstream s(read_text(in));
  s >> sample_rng_;
  if (w.fail() || s.fail()) {
    throw ConfigError("corrupt RNG state in trainer block");
  }
}

void Trainer::save_checkpoint(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open checkpoint file: " + path);
  agent_.save(out);
  out.write(kTrainerMagic, 4);
  write_i64(out, env_steps_);
  write_i64(out, episodes_);
  write_f64(out, update_credit_);
  std::ostringstream w;
  w << warmup_rng_;
  write_text(out, w.str());
  std::ostringstream s;
  s << sample_rng_;
  write_text(out, s.str());
  if (!out) throw ConfigError("failed to write checkpoint file: " + path);
}

Trainer::EvalStats Trainer::run_eval(std::int64_t tag) {
  EvalStats ev;
  if (cfg_.eval_episodes < 1) return ev;
  Environment env(cfg_.env, derive_seed(cfg_.seed, 500, tag));
  Rng traj_rng(derive_seed(cfg_.seed, 501, tag));
  double err_sum = 0.0;
  std::int64_t steps = 0;
  int collisions = 0;
  for (int ep = 0; ep < cfg_.eval_episodes; ++ep) {
    Environment::ResetOverrides ov;
    ov.alpha = cfg_.eval_alpha;
    ov.delta = cfg_.eval_delta;
    ov.traj = sample_feasible_traj_params(TrajKind::kSinusoid, cfg_.env.traj,
                                          traj_rng, cfg_.eval_max_target_accel,
                                          cfg_.eval_max_initial_speed);
    StepResult r = env.reset(ov);
    double ep_reward = 0.0;
    while (env.episode_running()) {
      const Eigen::VectorXd a = agent_.act(r.actor_obs, false);
      r = env.step(a);
      ep_reward += r.reward;
      err_sum += r.error.norm();
      ++steps;
    }
    if (r.done == Done::kCollision) ++collisions;
    ev.mean_reward += ep_reward;
  }
  ev.mean_reward /= cfg_.eval_episodes;
  ev.mean_err_m = steps > 0 ? err_sum / static_cast<double>(steps) : 0.0;
  ev.collision_rate =
      static_cast<double>(collisions) / static_cast<double>(cfg_.eval_episodes);
  return ev;
}

void Trainer::write_metrics_row(double wall_s, std::int64_t env_steps,
                                std::int64_t episodes, const EvalStats& ev) {
  if (metrics_path_.empty()) return;
  std::ofstream out(metrics_path_, std::ios::app);
  if (!out) throw ConfigError("cannot append metrics: " + metrics_path_);
  out << std::setprecision(17) << wall_s << ',' << env_steps << ','
      << episodes << ',' << ev.mean_reward << ',' << ev.mean_err_m << ','
      << ev.collision_rate << '\n';
}

TrainResult Trainer::run() {
  namespace fs = std::filesystem;
  const int n = cfg_.sac.num_envs;
  std::vector<Environment> envs;
  envs.reserve(n);
  std::vector<StepResult> cur(n);
  for (int i = 0; i < n; ++i) {
    envs.emplace_back(cfg_.env,
                      derive_seed(cfg_.seed, 100 + i, static_cast<std::uint64_t>(
                                                          episodes_)));
    cur[i] = envs[i].reset();
  }

  std::string ckpt_path, policy_path;
  if (!cfg_.out_dir.empty()) {
    fs::create_directories(cfg_.out_dir);
    metrics_path_ = (fs::path(cfg_.out_dir) / "metrics.csv").string();
    ckpt_path = (fs::path(cfg_.out_dir) / "checkpoint.bin").string();
    policy_path = (fs::path(cfg_.out_dir) / "policy.bin").string();
    if (!fs::exists(metrics_path_)) {
      std::ofstream head(metrics_path_);
      head << "wall_time,env_steps,episodes,mean_ep_reward,mean_err_m,"
              "collision_rate\n";
    }
  }

  const auto t0 = std::chrono::steady_clock::now();
  const auto wall_s = [&t0]() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  };

  std::uniform_real_distribution<double> uniform_action(-1.0, 1.0);
  std::int64_t evals_done =
      cfg_.eval_every_episodes > 0 ? episodes_ / cfg_.eval_every_episodes : 0;
  std::int64_t ckpts_done = cfg_.checkpoint_every_episodes > 0
                                ? episodes_ / cfg_.checkpoint_every_episodes
                                : 0;
  std::int64_t last_metrics_episodes = -1;
  EvalStats last_eval;

  const auto params_finite = [this]() {
    return mlp_finite(agent_.actor()) && mlp_finite(agent_.critic1()) &&
           mlp_finite(agent_.critic2()) && mlp_finite(agent_.target1()) &&
           mlp_finite(agent_.target2()) && std::isfinite(agent_.log_alpha());
  };
  const auto abort_if_diverged = [&]() {
    if (params_finite()) return;
    if (!cfg_.out_dir.empty()) {
      save_checkpoint(
          (fs::path(cfg_.out_dir) / "diagnostic_checkpoint.bin").string());
    }
    throw NumericFault("non-finite learner parameters; diagnostic state saved");
  };

  bool stop = false;
  while (!stop) {
    int steps_this_round = 0;
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd a(cfg_.sac.action_dim);
      if (env_steps_ < cfg_.sac.warmup_steps) {
        for (int j = 0; j < cfg_.sac.action_dim; ++j) {
          a(j) = uniform_action(warmup_rng_);
        }
      } else {
        a = agent_.act(cur[i].actor_obs, true);
      }
      const StepResult nxt = envs[i].step(a);
      const bool terminal =
          nxt.done == Done::kCollision || nxt.done == Done::kDivergence;
      buffer_.push(cur[i].actor_obs, cur[i].critic_obs, a, nxt.reward,
                   nxt.actor_obs, nxt.critic_obs, terminal);
      ++env_steps_;
      ++steps_this_round;
      if (nxt.done == Done::kRunning) {
        cur[i] = nxt;
      } else {
        ++episodes_;
        cur[i] = envs[i].reset();
      }
      if (cfg_.max_env_steps > 0 && env_steps_ >= cfg_.max_env_steps) {
        stop = true;
        break;
      }
    }

    if (env_steps_ >= cfg_.sac.warmup_steps) {
      update_credit_ += cfg_.sac.updates_per_step * steps_this_round;
      while (update_credit_ >= 1.0 &&
             buffer_.size() >= static_cast<std::size_t>(cfg_.sac.batch)) {
        agent_.update(buffer_.sample(cfg_.sac.batch, sample_rng_));
        update_credit_ -= 1.0;
      }
    }

    if (cfg_.eval_every_episodes > 0 &&
        episodes_ / cfg_.eval_every_episodes > evals_done) {
      evals_done = episodes_ / cfg_.eval_every_episodes;
      abort_if_diverged();
      last_eval = run_eval(episodes_);
      write_metrics_row(wall_s(), env_steps_, episodes_, last_eval);
      last_metrics_episodes = episodes_;
    }
    if (cfg_.checkpoint_every_episodes > 0 && !ckpt_path.empty() &&
        episodes_ / cfg_.checkpoint_every_episodes > ckpts_done) {
      ckpts_done = episodes_ / cfg_.checkpoint_every_episodes;
      abort_if_diverged();
      save_checkpoint(ckpt_path);
    }

    if (cfg_.max_episodes > 0 && episodes_ >= cfg_.max_episodes) stop = true;
    if (cfg_.max_wall_hours > 0.0 && wall_s() >= cfg_.max_wall_hours * 3600.0) {
      stop = true;
    }
  }

  abort_if_diverged();
  if (cfg_.eval_episodes > 0 && last_metrics_episodes != episodes_) {
    last_eval = run_eval(episodes_);
    write_metrics_row(wall_s(), env_steps_, episodes_, last_eval);
  }
  if (!ckpt_path.empty()) {
    save_checkpoint(ckpt_path);
    std::ofstream pol(policy_path, std::ios::binary | std::ios::trunc);
    agent_.save_policy(pol);
    if (!pol) throw ConfigError("failed to write policy file");
    std::ofstream sidecar(policy_path + ".json", std::ios::trunc);
    sidecar << policy_sidecar_json(cfg_.sac, cfg_.env) << '\n';
  }

  TrainResult result;
  result.episodes = episodes_;
  result.env_steps = env_steps_;
  result.updates = agent_.updates_done();
  result.last_eval_reward = last_eval.mean_reward;
  result.last_eval_err_m = last_eval.mean_err_m;
  result.last_eval_collision_rate = last_eval.collision_rate;
  result.checkpoint_path = ckpt_path;
  result.policy_path = policy_path;
  result.metrics_path = metrics_path_;
  return result;
}

std::string policy_sidecar_json(const SacConfig& cfg, const EnvConfig& env) {
  nlohmann::ordered_json j;
  j["format"] = "mavtrack-policy";
  j["version"] = 1;
  j["actor_obs_dim"] = cfg.actor_obs_dim;
  j["action_dim"] = cfg.action_dim;
  j["hidden"] = cfg.hidden;
  j["history"] = env.history;
  j["normalized_actions"] = true;
  j["omega_max"] = env.bounds.omega_max;
  j["lambda_max"] = env.bounds.lambda_max;
  j["y_ref"] = {env.y_ref.x(), env.y_ref.y(), env.y_ref.z()};
  return j.dump(2);
}

}  // namespace mavtrack
