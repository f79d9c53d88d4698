#include "mavtrack/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace mavtrack {

namespace {

const char* done_name(Done done) {
  switch (done) {
    case Done::kRunning:
      return "running";
    case Done::kTimeout:
      return "timeout";
    case Done::kCollision:
      return "collision";
    case Done::kDivergence:
      return "divergence";
  }
  return "unknown";
}

void hash_bytes(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
}

void hash_vec3(std::uint64_t& h, const Vec3& v) {
  for (int i = 0; i < 3; ++i) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(v(i));
    hash_bytes(h, &bits, sizeof(bits));
  }
}

}  // namespace

PolicyController::PolicyController(Mlp actor) : actor_(std::move(actor)) {
  if (actor_.layer_count() < 1 || actor_.output_dim() % 2 != 0) {
    throw ConfigError("policy network must emit (mean, log-std) pairs");
  }
}

PolicyController PolicyController::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open policy file: " + path);
  return PolicyController(load_mlp(in));
}

Action PolicyController::act(const StepResult& r, const Environment&) {
  if (r.actor_obs.size() != actor_.input_dim()) {
    throw UsageError("policy expects observation dimension " +
                     std::to_string(actor_.input_dim()) + ", got " +
                     std::to_string(r.actor_obs.size()));
  }
  const Eigen::VectorXd head = actor_.forward_one(r.actor_obs);
  const int adim = actor_.output_dim() / 2;
  return squashed_mean_action(head.head(adim), Eigen::VectorXd::Ones(adim));
}

Action LqgBaselineController::act(const StepResult& r, const Environment& env) {
  const Vec3 e_noisy = r.actor_obs.head<3>();
  const Vec3 y_meas = env.config().y_ref - e_noisy;
  const Command cmd = ctl_.step(y_meas, env.state().R, env.state().f);
  const CommandBounds& b = env.config().bounds;
  Action a;
  a.head<3>() = cmd.omega_cmd / b.omega_max;
  a(3) = cmd.lambda / b.lambda_max;
  return a;
}

double EpisodeLog::mean_err_m(double skip_s) const {
  double sum = 0.0;
  int n = 0;
  for (int i = 0; i < steps(); ++i) {
    if (t[i] < skip_s) continue;
    sum += error[i].norm();
    ++n;
  }
  if (n == 0) {
    for (int i = 0; i < steps(); ++i) sum += error[i].norm();
    n = steps();
  }
  return n > 0 ? sum / n : 0.0;
}

std::uint64_t traj_hash(const TrajParams& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const std::uint64_t kind = static_cast<std::uint64_t>(params.kind);
  hash_bytes(h, &kind, sizeof(kind));
  hash_vec3(h, params.origin);
  hash_vec3(h, params.amplitude);
  hash_vec3(h, params.frequency);
  hash_vec3(h, params.phase);
  hash_vec3(h, params.velocity);
  return h;
}

EpisodeLog run_episode(Controller& controller, const Scenario& scenario,
                       std::uint64_t seed) {
  EnvConfig cfg = scenario.env;
  cfg.use_validation_model = true;
  cfg.noise_enabled = true;
  cfg.validate();

  Environment env(cfg, derive_seed(seed, 1));
  Environment::ResetOverrides ov;
  ov.alpha = scenario.alpha;
  ov.delta = scenario.delta;
  if (scenario.traj.has_value()) {
    ov.traj = *scenario.traj;
  } else {
    Rng traj_rng(derive_seed(seed, 2));
    ov.traj = sample_feasible_traj_params(scenario.kind, cfg.traj, traj_rng,
                                          scenario.max_target_accel,
                                          scenario.max_initial_speed);
  }

  controller.reset();
  StepResult r = env.reset(ov);

  EpisodeLog log;
  log.alpha = env.alpha();
  log.delta = env.delta();
  log.seed = seed;
  log.traj = env.traj();
  log.traj_hash = traj_hash(env.traj());

  const int cap = cfg.max_steps;
  log.t.reserve(cap);
  log.error.reserve(cap);
  log.mav_pos.reserve(cap);
  log.target_pos.reserve(cap);
  log.y_norm.reserve(cap);
  log.actions.reserve(cap);

  while (env.episode_running()) {
    const Action a = controller.act(r, env);
    r = env.step(a);
    const SimState& s = env.state();
    log.t.push_back(env.time());
    log.error.push_back(r.error);
    log.mav_pos.push_back(s.p);
    log.target_pos.push_back(s.p + s.R * (cfg.y_ref - r.error));
    log.y_norm.push_back(r.y_norm);
    log.actions.push_back(a);
    log.reward_sum += r.reward;
  }
  log.done = r.done;
  return log;
}

void GridSpec::validate() const {
  env.validate();
  if (alphas.empty() || deltas.empty()) {
    throw ConfigError("evaluation grid must contain at least one cell");
  }
  if (runs_per_cell < 1) throw ConfigError("runs_per_cell must be >= 1");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (skip_transient_s < 0.0 ||
      skip_transient_s >= env.max_steps * env.t_s) {
    throw ConfigError("skip_transient_s must lie within the episode");
  }
  if (allow_extrapolation) return;
  for (double a : alphas) {
    if (!env.alpha_range.contains(a)) {
      throw ConfigError(
          "alpha outside the training randomization range; pass "
          "allow_extrapolation to sweep it anyway");
    }
  }
  for (double d : deltas) {
    if (!env.delta_range.contains(d)) {
      throw ConfigError(
          "delta outside the training randomization range; pass "
          "allow_extrapolation to sweep it anyway");
    }
  }
}

CellResult summarize(const std::vector<EpisodeLog>& logs,
                     double skip_transient_s) {
  CellResult cell;
  cell.runs = static_cast<int>(logs.size());
  double sum = 0.0;
  double sum_sq = 0.0;
  std::int64_t n = 0;
  for (const EpisodeLog& log : logs) {
    if (log.done == Done::kCollision) ++cell.collisions;
    if (log.done == Done::kDivergence) ++cell.divergences;
    cell.run_mean_err_cm.push_back(100.0 * log.mean_err_m(skip_transient_s));

    bool any = false;
    for (int i = 0; i < log.steps(); ++i) {
      if (log.t[i] >= skip_transient_s) {
        any = true;
        break;
      }
    }
    for (int i = 0; i < log.steps(); ++i) {
      if (any && log.t[i] < skip_transient_s) continue;
      const double err_cm = 100.0 * log.error[i].norm();
      sum += err_cm;
      sum_sq += err_cm * err_cm;
      ++n;
    }
  }
  if (n > 0) {
    cell.mean_err_cm = sum / static_cast<double>(n);
    const double var =
        sum_sq / static_cast<double>(n) - cell.mean_err_cm * cell.mean_err_cm;
    cell.std_err_cm = std::sqrt(std::max(0.0, var));
  }
  return cell;
}

namespace {

struct TaskOutput {
  CellResult cell;
  std::string csv_row;
  std::string jsonl_block;
};

}  // namespace

GridResult evaluate_grid(const GridSpec& spec,
                         const std::vector<NamedController>& controllers,
                         const GridSinks& sinks) {
  spec.validate();
  if (controllers.empty()) {
    throw ConfigError("evaluate_grid needs at least one controller");
  }

  const int na = static_cast<int>(spec.alphas.size());
  const int nd = static_cast<int>(spec.deltas.size());
  const int nc = static_cast<int>(controllers.size());
  const int total = nc * na * nd;

  GridResult result;
  result.controller_names.reserve(nc);
  for (const NamedController& c : controllers) {
    result.controller_names.push_back(c.name);
  }
  result.cells.assign(
      nc, std::vector<std::vector<CellResult>>(
              na, std::vector<CellResult>(nd)));

  std::vector<TaskOutput> outputs(total);

  auto run_task = [&](int g) {
    const int c = g / (na * nd);
    const int ia = (g / nd) % na;
    const int id = g % nd;
    const std::uint64_t cell_id =
        static_cast<std::uint64_t>(ia) * nd + static_cast<std::uint64_t>(id);

    const std::unique_ptr<Controller> ctl = controllers[c].make();
    std::vector<EpisodeLog> logs;
    logs.reserve(spec.runs_per_cell);
    std::ostringstream jsonl;
    for (int run = 0; run < spec.runs_per_cell; ++run) {
      Scenario sc;
      sc.env = spec.env;
      sc.alpha = spec.alphas[ia];
      sc.delta = spec.deltas[id];
      sc.kind = spec.kind;
      sc.max_target_accel = spec.max_target_accel;
      sc.max_initial_speed = spec.max_initial_speed;
      Rng traj_rng(derive_seed(spec.base_seed, 900, cell_id,
                               static_cast<std::uint64_t>(run)));
      sc.traj = sample_feasible_traj_params(sc.kind, spec.env.traj, traj_rng,
                                            spec.max_target_accel,
                                            spec.max_initial_speed);
      const std::uint64_t ep_seed = derive_seed(
          spec.base_seed, 901, cell_id, static_cast<std::uint64_t>(run));
      logs.push_back(run_episode(*ctl, sc, ep_seed));
      if (sinks.jsonl != nullptr) {
        jsonl << episode_jsonl(controllers[c].name, sc.alpha, sc.delta, run,
                               logs.back())
              << '\n';
      }
    }
    TaskOutput& out = outputs[g];
    out.cell = summarize(logs, spec.skip_transient_s);
    out.csv_row = grid_csv_row(spec.alphas[ia], spec.deltas[id],
                               controllers[c].name, out.cell);
    out.jsonl_block = jsonl.str();
  };

  if (sinks.csv != nullptr) {
    *sinks.csv << grid_csv_header() << '\n';
    sinks.csv->flush();
  }

  std::mutex mu;
  std::vector<char> finished(total, 0);
  int flushed = 0;
  auto flush_ready = [&] {
    while (flushed < total && finished[flushed]) {
      TaskOutput& out = outputs[flushed];
      if (sinks.csv != nullptr) {
        *sinks.csv << out.csv_row << '\n';
        sinks.csv->flush();
      }
      if (sinks.jsonl != nullptr) {
        *sinks.jsonl << out.jsonl_block;
        sinks.jsonl->flush();
      }
      out.jsonl_block.clear();
      ++flushed;
    }
  };

  const int nw = std::min(spec.workers, total);
  if (nw <= 1) {
    for (int g = 0; g < total; ++g) {
      run_task(g);
      finished[g] = 1;
      flush_ready();
    }
  } else {
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::vector<std::thread> pool;
    pool.reserve(nw);
    for (int w = 0; w < nw; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          const int g = next.fetch_add(1);
          if (g >= total) return;
          try {
            run_task(g);
          } catch (...) {
            std::lock_guard<std::mutex> lock(mu);
            if (!failure) failure = std::current_exception();
            next.store(total);
            return;
          }
          std::lock_guard<std::mutex> lock(mu);
          finished[g] = 1;
          flush_ready();
        }
      });
    }
    for (std::thread& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }

  for (int g = 0; g < total; ++g) {
    const int c = g / (na * nd);
    const int ia = (g / nd) % na;
    const int id = g % nd;
    result.cells[c][ia][id] = outputs[g].cell;
  }
  return result;
}

std::string grid_csv_header() {
  return "alpha,delta_ms,controller,runs,mean_err_cm,std_err_cm,collisions,"
         "divergences";
}

std::string grid_csv_row(double alpha, double delta, const std::string& name,
                         const CellResult& cell) {
  std::ostringstream row;
  row << std::setprecision(6) << alpha << ',' << delta * 1000.0 << ',' << name
      << ',' << cell.runs << ',' << std::fixed << std::setprecision(4)
      << cell.mean_err_cm << ',' << cell.std_err_cm << ','
      << cell.collisions << ',' << cell.divergences;
  return row.str();
}

std::string episode_jsonl(const std::string& controller, double alpha,
                          double delta, int run, const EpisodeLog& log) {
  std::ostringstream hash;
  hash << std::hex << std::setw(16) << std::setfill('0') << log.traj_hash;
  nlohmann::json j{
      {"controller", controller},
      {"alpha", alpha},
      {"delta_ms", delta * 1000.0},
      {"run", run},
      {"seed", log.seed},
      {"steps", log.steps()},
      {"done", done_name(log.done)},
      {"mean_err_cm", 100.0 * log.mean_err_m()},
      {"reward_sum", log.reward_sum},
      {"traj_hash", hash.str()},
  };
  return j.dump();
}

void write_episode_series_csv(std::ostream& out, const EpisodeLog& log) {
  out << "t,mav_x,mav_y,mav_z,target_x,target_y,target_z,"
         "err_x,err_y,err_z,err_norm,u_wx,u_wy,u_wz,u_lambda\n";
  out << std::setprecision(10);
  for (int i = 0; i < log.steps(); ++i) {
    out << log.t[i];
    for (int k = 0; k < 3; ++k) out << ',' << log.mav_pos[i](k);
    for (int k = 0; k < 3; ++k) out << ',' << log.target_pos[i](k);
    for (int k = 0; k < 3; ++k) out << ',' << log.error[i](k);
    out << ',' << log.error[i].norm();
    for (int k = 0; k < 4; ++k) out << ',' << log.actions[i](k);
    out << '\n';
  }
  if (log.done == Done::kCollision || log.done == Done::kDivergence) {
    out << "# " << done_name(log.done) << '@'
        << (log.t.empty() ? 0.0 : log.t.back()) << '\n';
  }
}

std::string format_grid_table(const GridSpec& spec, const GridResult& result) {
  std::ostringstream out;
  const int na = static_cast<int>(spec.alphas.size());
  const int nd = static_cast<int>(spec.deltas.size());
  for (std::size_t c = 0; c < result.controller_names.size(); ++c) {
    out << "controller: " << result.controller_names[c]
        << "   mean(std) of ||e||, cm\n";
    out << std::setw(8) << "alpha";
    for (int id = 0; id < nd; ++id) {
      std::ostringstream head;
      head << std::setprecision(4) << spec.deltas[id] * 1000.0 << " ms";
      out << std::setw(18) << head.str();
    }
    out << '\n';
    for (int ia = 0; ia < na; ++ia) {
      out << std::setw(8) << std::setprecision(4) << spec.alphas[ia];
      for (int id = 0; id < nd; ++id) {
        const CellResult& cell = result.cells[c][ia][id];
        std::ostringstream s;
        s << std::fixed << std::setprecision(1) << cell.mean_err_cm << '('
          << cell.std_err_cm << ')';
        if (cell.collisions > 0 || cell.divergences > 0) {
          s << '!' << (cell.collisions + cell.divergences);
        }
        out << std::setw(18) << s.str();
      }
      out << '\n';
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace mavtrack
