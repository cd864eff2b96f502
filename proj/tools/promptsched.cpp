// promptsched: train, sweep and inspect prompt-scheduling experiments.
//
// Every failure prints one line "error: <message>" to stderr and exits
// nonzero (1 for usage and configuration errors, 2 for training divergence,
// 3 for a failed gradient check).

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "promptsched/checkpoint.hpp"
#include "promptsched/config.hpp"
#include "promptsched/pipeline_check.hpp"
#include "promptsched/report.hpp"
#include "promptsched/sweep.hpp"

namespace fs = std::filesystem;
using namespace promptsched;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::size_t workers = 1;
};

void add_common(CLI::App* sub, CommonFlags& f) {
  sub->add_option("--config", f.config, "Configuration file (key = value lines)");
  sub->add_option("--seed", f.seed, "Override the configured seed");
  sub->add_option("--out", f.out, "Output directory")->capture_default_str();
  sub->add_option("--workers", f.workers, "Worker threads for independent runs")->capture_default_str()->check(CLI::PositiveNumber);
}

RunConfig resolve(const CommonFlags& f) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : load_config(f.config);
  if (f.seed) cfg.seed = *f.seed;
  cfg.validate();
  return cfg;
}

void echo_config(const fs::path& out, const RunConfig& cfg) {
  auto os = open_output(out / "resolved_config.txt");
  os << resolved_config_text(cfg);
}

template <class F>
void write_file(const fs::path& path, F&& body) {
  auto os = open_output(path);
  body(os);
  if (!os) throw Error("io: failed writing " + path.string());
}

int cmd_run(const CommonFlags& f) {
  const auto cfg = resolve(f);
  const fs::path out = f.out;
  echo_config(out, cfg);
  try {
    auto result = run_experiment(cfg.resolved(cfg.seed));
    const auto& model = result.scheduled.model;
    const auto& report = result.scheduled.report;
    write_file(out / "metrics.csv", [&](std::ostream& os) { write_metrics_csv(os, report); });
    write_file(out / "gates.csv", [&](std::ostream& os) { write_gates_csv(os, report); });
    write_file(out / "scheduler_weights.csv", [&](std::ostream& os) { write_scheduler_weights_csv(os, model); });
    write_file(out / "timing.csv", [&](std::ostream& os) { write_timing_csv(os, report); });
    save_checkpoint(out / "checkpoint", Checkpoint{config_hash(cfg), report.loss_trace.size(), model.params});
    std::cout << "macro_val=" << format_double(report.macro_val) << " macro_test=" << format_double(report.macro_test)
              << " transfer_gain=" << format_double(report.transfer_gain) << " out=" << out.string() << '\n';
  } catch (const DivergenceError& e) {
    write_file(out / "metrics.csv", [&](std::ostream& os) { write_metrics_csv(os, e.partial()); });
    std::cerr << "error: " << e.what() << " (partial traces in " << (out / "metrics.csv").string() << ")\n";
    return 2;
  }
  return 0;
}

int cmd_sweep(const CommonFlags& f, SweepVariable variable) {
  const auto cfg = resolve(f);
  SweepSpec spec;
  spec.variable = variable;
  spec.grid = variable == SweepVariable::Temperature ? cfg.temperature_grid : cfg.task_count_grid;
  spec.repeats = cfg.repeats;
  spec.first_seed = cfg.seed;
  spec.base = cfg.experiment;
  spec.validate();
  const fs::path out = f.out;
  echo_config(out, cfg);
  auto report = run_sweep(spec, f.workers);
  write_file(out / "sweep.csv", [&](std::ostream& os) { write_sweep_csv(os, report); });
  write_file(out / "sweep_timing.csv", [&](std::ostream& os) { write_sweep_timing_csv(os, report); });
  for (const auto& a : report.aggregates)
    std::cout << variable_name(variable) << '=' << format_double(a.value) << " macro_test=" << format_double(a.mean.macro_test)
              << " macro_val=" << format_double(a.mean.macro_val) << " entropy=" << format_double(a.mean.mean_entropy) << '\n';
  return 0;
}

int cmd_inspect(const std::string& dir) {
  const auto ck = load_checkpoint(dir);
  std::cout << "config_hash " << ck.config_hash << "\nstep " << ck.step << "\nparameters " << ck.params.size()
            << "\nscalars " << ck.params.scalar_count() << '\n';
  for (const auto& [name, t] : ck.params.items()) {
    double s = 0.0;
    for (double v : t.values) s += v * v;
    std::cout << name << ' ' << shape_str(t.shape) << " l2=" << format_double(std::sqrt(s)) << '\n';
  }
  return 0;
}

int cmd_grad_check(std::uint64_t seed) {
  const auto check = pipeline_grad_check(seed);
  const auto& r = check.result;
  std::cout << "max_rel_error=" << format_double(r.max_rel_error) << " coordinates=" << r.coordinates
            << " worst=" << check.leaf_names[r.worst_leaf] << '[' << r.worst_index << "]\n";
  if (!(r.max_rel_error <= 1e-6)) {
    std::cerr << "error: gradient check failed, max relative error " << format_double(r.max_rel_error) << " > 1e-6\n";
    return 3;
  }
  return 0;
}

std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic prompt scheduling experiments"};
  app.require_subcommand(1);

  CommonFlags run_flags, temp_flags, task_flags;
  auto* run = app.add_subcommand("run", "Train one configuration and write metrics, gates, weights and a checkpoint");
  add_common(run, run_flags);
  auto* sweep_temp = app.add_subcommand("sweep-temp", "Temperature sweep over sweep.temperature.grid");
  add_common(sweep_temp, temp_flags);
  auto* sweep_tasks = app.add_subcommand("sweep-tasks", "Task-count sweep over sweep.task_count.grid");
  add_common(sweep_tasks, task_flags);

  std::string checkpoint_dir;
  auto* inspect = app.add_subcommand("inspect-checkpoint", "Summarize a checkpoint directory");
  inspect->add_option("path", checkpoint_dir, "Checkpoint directory")->required();

  std::uint64_t check_seed = 0;
  auto* grad = app.add_subcommand("grad-check", "Finite-difference check of the full pipeline");
  grad->add_option("--seed", check_seed, "Seed of the random instance")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << one_line(e.what()) << '\n';
    return 1;
  }

  try {
    if (*run) return cmd_run(run_flags);
    if (*sweep_temp) return cmd_sweep(temp_flags, SweepVariable::Temperature);
    if (*sweep_tasks) return cmd_sweep(task_flags, SweepVariable::TaskCount);
    if (*inspect) return cmd_inspect(checkpoint_dir);
    if (*grad) return cmd_grad_check(check_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << '\n';
    return 1;
  }
  return 1;
}
