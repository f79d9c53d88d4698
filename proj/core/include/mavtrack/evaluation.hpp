#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mavtrack/common.hpp"
#include "mavtrack/environment.hpp"
#include "mavtrack/lqg.hpp"
#include "mavtrack/nnet.hpp"

namespace mavtrack {

/// Uniform rollout interface for the evaluation harness. `act` receives the
/// latest step result plus the environment handle so that the baseline can
/// read the ground-truth attitude and thrust it is entitled to; the returned
/// action is in normalized [-1, 1] units.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual void reset() = 0;
  virtual Action act(const StepResult& r, const Environment& env) = 0;
};

/// Deployed actor network driven deterministically (squashed mean head).
class PolicyController : public Controller {
 public:
  explicit PolicyController(Mlp actor);

  /// Reads a serialized actor network from `path`.
  static PolicyController from_file(const std::string& path);

  void reset() override {}
  Action act(const StepResult& r, const Environment& env) override;

  const Mlp& actor() const { return actor_; }

 private:
  Mlp actor_;
};

/// LQG baseline adapted to the rollout interface: measurement from the noisy
/// error channel, attitude and thrust from the simulator state, command
/// normalized back to action units.
class LqgBaselineController : public Controller {
 public:
  explicit LqgBaselineController(const LqgConfig& cfg) : ctl_(cfg) {}

  void reset() override { ctl_.reset(); }
  Action act(const StepResult& r, const Environment& env) override;

  const LqgController& inner() const { return ctl_; }

 private:
  LqgController ctl_;
};

/// One evaluation condition: a plant corner, the trajectory family, and the
/// feasibility budgets for the draws. Rollouts always run on the validation
/// model with noise enabled, regardless of the base `env` flags.
struct Scenario {
  EnvConfig env;
  double alpha = 1.0;
  double delta = 0.0;  // s
  TrajKind kind = TrajKind::kSinusoid;
  std::optional<TrajParams> traj;  // pre-drawn override (pairing)
  double max_target_accel = 2.0;   // m/s^2; <= 0 disables
  double max_initial_speed = 1.0;  // m/s; <= 0 disables
};

/// Full step record of one rollout.
struct EpisodeLog {
  double alpha = 1.0;
  double delta = 0.0;
  std::uint64_t seed = 0;
  TrajParams traj;            // as anchored at reset
  std::uint64_t traj_hash = 0;

  std::vector<double> t;      // s, one entry per step
  std::vector<Vec3> error;    // true e(k)
  std::vector<Vec3> mav_pos;  // world frame
  std::vector<Vec3> target_pos;
  std::vector<double> y_norm;
  std::vector<Action> actions;

  double reward_sum = 0.0;
  Done done = Done::kRunning;

  int steps() const { return static_cast<int>(t.size()); }
  /// Mean of ||e(k)|| over steps with t >= skip_s, in meters. An episode
  /// that terminated before the mark contributes its whole series instead
  /// of vanishing from the statistics.
  double mean_err_m(double skip_s = 0.0) const;
};

/// FNV-1a over the trajectory parameter bytes; identical draws hash equal.
std::uint64_t traj_hash(const TrajParams& params);

/// One 40 s rollout of `controller` on the validation model. The trajectory
/// comes from `scenario.traj` when set, otherwise it is drawn from a stream
/// derived from `seed`. Early termination on collision or divergence is
/// recorded in the log.
EpisodeLog run_episode(Controller& controller, const Scenario& scenario,
                       std::uint64_t seed);

/// Monte Carlo sweep layout. Alphas and deltas must stay inside the training
/// randomization hull unless `allow_extrapolation` is set.
struct GridSpec {
  EnvConfig env;
  std::vector<double> alphas = {0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3, 1.4};
  std::vector<double> deltas = {0.0, 0.010, 0.020, 0.030, 0.040, 0.050};  // s
  int runs_per_cell = 20;
  TrajKind kind = TrajKind::kSinusoid;
  std::uint64_t base_seed = 1;
  double max_target_accel = 2.0;
  double max_initial_speed = 1.0;
  double skip_transient_s = 0.0;
  bool allow_extrapolation = false;
  int workers = 1;

  void validate() const;
  int cell_count() const {
    return static_cast<int>(alphas.size() * deltas.size());
  }
};

/// Pooled per-step statistics of one cell, in the table unit (cm).
struct CellResult {
  double mean_err_cm = 0.0;
  double std_err_cm = 0.0;  // population standard deviation
  int runs = 0;
  int collisions = 0;
  int divergences = 0;
  std::vector<double> run_mean_err_cm;  // one entry per run
};

/// Pools the per-step error magnitudes of all logs (steps with
/// t >= skip_transient_s; an episode that ended before the mark contributes
/// its whole series) and tallies terminations.
CellResult summarize(const std::vector<EpisodeLog>& logs,
                     double skip_transient_s = 0.0);

/// Fresh-instance factory so that grid workers never share controller state.
struct NamedController {
  std::string name;
  std::function<std::unique_ptr<Controller>()> make;
};

/// Optional incremental outputs of a grid run. Rows and lines are flushed in
/// deterministic order as cells complete, so an aborted sweep keeps a valid
/// prefix of the final artifact.
struct GridSinks {
  std::ostream* csv = nullptr;    // one row per (controller, cell)
  std::ostream* jsonl = nullptr;  // one line per episode
};

/// cells[controller][alpha_index][delta_index].
struct GridResult {
  std::vector<std::string> controller_names;
  std::vector<std::vector<std::vector<CellResult>>> cells;
};

/// Runs every controller over every (alpha, delta) cell with paired draws:
/// run r of a cell consumes the same trajectory and noise streams for every
/// controller. Cells execute on up to `spec.workers` threads; results and
/// artifacts are bit-reproducible for a fixed base seed either way.
GridResult evaluate_grid(const GridSpec& spec,
                         const std::vector<NamedController>& controllers,
                         const GridSinks& sinks = {});

/// `alpha,delta_ms,controller,runs,mean_err_cm,std_err_cm,collisions,divergences`.
std::string grid_csv_header();
std::string grid_csv_row(double alpha, double delta, const std::string& name,
                         const CellResult& cell);

/// One compact JSON object (single line) summarizing an episode.
std::string episode_jsonl(const std::string& controller, double alpha,
                          double delta, int run, const EpisodeLog& log);

/// Plot-data emitter: per-step time, MAV and target world positions, error
/// components, and error norm as CSV. A non-timeout termination appends a
/// trailing `# <reason>@<t>` annotation line.
void write_episode_series_csv(std::ostream& out, const EpisodeLog& log);

/// Aligned mean(std) text table, one row per alpha, one column per delta,
/// one block per controller.
std::string format_grid_table(const GridSpec& spec, const GridResult& result);

}  // namespace mavtrack
