#pragma once

// Grid sweeps over the scheduler temperature or the training task count.
//
// Each (grid value, seed) pair is an independent experiment. Workers pull
// runs from a shared counter and write into preassigned slots, so the report
// is in grid-then-seed order whatever the completion order.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "promptsched/csv.hpp"
#include "promptsched/experiment.hpp"

namespace promptsched {

enum class SweepVariable { Temperature, TaskCount };

inline std::string variable_name(SweepVariable v) { return v == SweepVariable::Temperature ? "temperature" : "task_count"; }

struct SweepSpec {
  SweepVariable variable = SweepVariable::Temperature;
  std::vector<double> grid;
  std::size_t repeats = 5;
  std::uint64_t first_seed = 0;
  ExperimentConfig base;

  void validate() const {
    if (grid.empty()) throw Error("sweep: grid is empty");
    if (repeats == 0) throw Error("sweep: repeats must be at least 1");
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const double v = grid[i];
      if (!std::isfinite(v)) throw Error("sweep: grid value " + format_double(v) + " is not finite");
      if (variable == SweepVariable::Temperature && !(v > 0.0))
        throw Error("sweep: temperature " + format_double(v) + " must be positive");
      if (variable == SweepVariable::TaskCount && (v != std::floor(v) || v < 1.0))
        throw Error("sweep: task count " + format_double(v) + " must be an integer of at least 1");
      if (i > 0 && !(v > grid[i - 1])) throw Error("sweep: grid must be strictly increasing");
    }
    for (double v : grid) config_for(v, first_seed).validate();
  }

  ExperimentConfig config_for(double value, std::uint64_t seed) const {
    ExperimentConfig c = base;
    c.train.seed = seed;
    c.suite.seed = seed;
    if (variable == SweepVariable::Temperature) c.train.tau = value;
    else c.suite.T = static_cast<std::size_t>(value);
    return c;
  }
};

struct SweepRow {
  double value = 0.0;
  std::uint64_t seed = 0;
  double macro_val = 0.0;
  double macro_test = 0.0;
  double transfer_gain = 0.0;
  double mean_entropy = 0.0;
  double wall_seconds = 0.0;
};

struct SweepAggregate {
  double value = 0.0;
  SweepRow mean, sd;
};

struct SweepReport {
  SweepVariable variable = SweepVariable::Temperature;
  std::vector<SweepRow> rows;  // grid-major, then seed
  std::vector<SweepAggregate> aggregates;

  /// Runs for one grid value, in seed order.
  std::vector<SweepRow> at(double value) const {
    std::vector<SweepRow> out;
    for (const auto& r : rows)
      if (r.value == value) out.push_back(r);
    return out;
  }
};

namespace detail {

inline std::pair<double, double> mean_sd(const std::vector<double>& x) {
  double m = 0.0;
  for (double v : x) m += v;
  m /= static_cast<double>(x.size());
  if (x.size() < 2) return {m, 0.0};
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return {m, std::sqrt(s / static_cast<double>(x.size() - 1))};
}

inline SweepAggregate aggregate(double value, const std::vector<SweepRow>& runs) {
  SweepAggregate a{value, {}, {}};
  a.mean.value = a.sd.value = value;
  auto fold = [&](double SweepRow::*f) {
    std::vector<double> x;
    for (const auto& r : runs) x.push_back(r.*f);
    std::tie(a.mean.*f, a.sd.*f) = mean_sd(x);
  };
  for (auto f : {&SweepRow::macro_val, &SweepRow::macro_test, &SweepRow::transfer_gain, &SweepRow::mean_entropy,
                 &SweepRow::wall_seconds})
    fold(f);
  return a;
}

}  // namespace detail

inline SweepRow run_sweep_point(const SweepSpec& spec, double value, std::uint64_t seed) {
  auto r = run_experiment(spec.config_for(value, seed));
  const auto& rep = r.scheduled.report;
  return SweepRow{value, seed, rep.macro_val, rep.macro_test, rep.transfer_gain, rep.mean_entropy(), rep.wall_seconds};
}

inline SweepReport run_sweep(const SweepSpec& spec, std::size_t workers = 1) {
  spec.validate();
  const std::size_t n = spec.grid.size() * spec.repeats;
  std::vector<SweepRow> rows(n);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        rows[i] = run_sweep_point(spec, spec.grid[i / spec.repeats], spec.first_seed + i % spec.repeats);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = n;
      }
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  SweepReport report{spec.variable, std::move(rows), {}};
  for (double v : spec.grid) report.aggregates.push_back(detail::aggregate(v, report.at(v)));
  return report;
}

/// sweep.csv: one "run" row per (value, seed) then one "aggregate" row per
/// value holding means and sample standard deviations. Wall-clock time is
/// kept out so reruns are byte-identical.
inline void write_sweep_csv(std::ostream& os, const SweepReport& r) {
  write_csv_row(os, {"kind", variable_name(r.variable), "seed", "macro_val", "macro_val_sd", "macro_test", "macro_test_sd",
                     "transfer_gain", "transfer_gain_sd", "mean_entropy", "mean_entropy_sd"});
  for (const auto& row : r.rows)
    write_csv_row(os, {"run", format_double(row.value), std::to_string(row.seed), format_double(row.macro_val), "",
                       format_double(row.macro_test), "", format_double(row.transfer_gain), "",
                       format_double(row.mean_entropy), ""});
  for (const auto& a : r.aggregates)
    write_csv_row(os, {"aggregate", format_double(a.value), "", format_double(a.mean.macro_val), format_double(a.sd.macro_val),
                       format_double(a.mean.macro_test), format_double(a.sd.macro_test),
                       format_double(a.mean.transfer_gain), format_double(a.sd.transfer_gain),
                       format_double(a.mean.mean_entropy), format_double(a.sd.mean_entropy)});
}

/// sweep_timing.csv: wall-clock seconds per run.
inline void write_sweep_timing_csv(std::ostream& os, const SweepReport& r) {
  write_csv_row(os, {variable_name(r.variable), "seed", "wall_seconds"});
  for (const auto& row : r.rows)
    write_csv_row(os, {format_double(row.value), std::to_string(row.seed), format_double(row.wall_seconds)});
}

}  // namespace promptsched
