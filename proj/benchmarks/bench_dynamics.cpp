#include <benchmark/benchmark.h>

#include "mavtrack/dynamics.hpp"

namespace {

using namespace mavtrack;

void BM_TrainingControlPeriod(benchmark::State& state) {
  PhysParams pp;
  SimState s;
  s.f = pp.hover_thrust();
  DelayBuffer buf(0);
  Command c;
  c.omega_cmd = Vec3(0.3, -0.2, 0.1);
  c.lambda = 1.0;
  std::int64_t step = 0;
  for (auto _ : state) {
    buf.push(c, step * 10);
    s = step_training_model(s, buf, pp, step);
    s.f = pp.hover_thrust();  // keep the state bounded
    s.p.setZero();
    s.v.setZero();
    ++step;
    benchmark::DoNotOptimize(s);
  }
}
BENCHMARK(BM_TrainingControlPeriod);

void BM_ValidationControlPeriod(benchmark::State& state) {
  PhysParams pp;
  const ValidationStepper stepper(pp);
  SimState s;
  s.f = pp.hover_thrust();
  DelayBuffer buf(4);
  Command c;
  c.omega_cmd = Vec3(0.3, -0.2, 0.1);
  c.lambda = 1.0;
  std::int64_t step = 0;
  for (auto _ : state) {
    buf.push(c, step * 10);
    s = stepper.step(s, buf, step);
    s.f = pp.hover_thrust();
    s.p.setZero();
    s.v.setZero();
    ++step;
    benchmark::DoNotOptimize(s);
  }
}
BENCHMARK(BM_ValidationControlPeriod);

}  // namespace

BENCHMARK_MAIN();
