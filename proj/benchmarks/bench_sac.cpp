#include <benchmark/benchmark.h>

#include "mavtrack/environment.hpp"
#include "mavtrack/sac.hpp"

namespace {

using namespace mavtrack;

ReplayBuffer filled_buffer(const SacConfig& cfg, int count) {
  ReplayBuffer buf(cfg.actor_obs_dim, cfg.critic_obs_dim, cfg.action_dim,
                   static_cast<std::size_t>(count));
  Rng rng(7);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::VectorXd ao(cfg.actor_obs_dim), co(cfg.critic_obs_dim),
      a(cfg.action_dim);
  for (int i = 0; i < count; ++i) {
    for (int j = 0; j < ao.size(); ++j) ao(j) = n(rng);
    for (int j = 0; j < co.size(); ++j) co(j) = n(rng);
    for (int j = 0; j < a.size(); ++j) a(j) = std::tanh(n(rng));
    buf.push(ao, co, a, n(rng), ao, co, false);
  }
  return buf;
}

void BM_SacUpdateFullSize(benchmark::State& state) {
  SacConfig cfg;
  SacAgent agent(cfg, 1);
  ReplayBuffer buf = filled_buffer(cfg, 4096);
  Rng rng(11);
  for (auto _ : state) {
    const auto stats = agent.update(buf.sample(cfg.batch, rng));
    benchmark::DoNotOptimize(stats);
  }
}
BENCHMARK(BM_SacUpdateFullSize)->Unit(benchmark::kMillisecond);

void BM_ActorInference(benchmark::State& state) {
  SacConfig cfg;
  SacAgent agent(cfg, 3);
  Rng rng(13);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::VectorXd obs(cfg.actor_obs_dim);
  for (int j = 0; j < obs.size(); ++j) obs(j) = n(rng);
  for (auto _ : state) {
    const Eigen::VectorXd a = agent.act(obs, true);
    benchmark::DoNotOptimize(a);
  }
}
BENCHMARK(BM_ActorInference);

void BM_EnvStepWithPolicy(benchmark::State& state) {
  EnvConfig env_cfg;
  Environment env(env_cfg, 17);
  SacConfig cfg;
  SacAgent agent(cfg, 19);
  StepResult r = env.reset();
  for (auto _ : state) {
    if (!env.episode_running()) r = env.reset();
    r = env.step(agent.act(r.actor_obs, true));
    benchmark::DoNotOptimize(r);
  }
}
BENCHMARK(BM_EnvStepWithPolicy);

void BM_ReplaySampleFullSize(benchmark::State& state) {
  SacConfig cfg;
  ReplayBuffer buf = filled_buffer(cfg, 100000);
  Rng rng(23);
  for (auto _ : state) {
    const auto batch = buf.sample(cfg.batch, rng);
    benchmark::DoNotOptimize(batch.actions);
  }
}
BENCHMARK(BM_ReplaySampleFullSize);

}  // namespace
