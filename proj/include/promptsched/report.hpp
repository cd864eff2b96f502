#pragma once

// CSV writers for a single run.
//
// metrics.csv  long form "kind,step,task,metric,value":
//   trace rows  per step: loss and lambda per task, entropy (task empty)
//   final rows  per task: val_accuracy, test_accuracy, mean_gate, entropy,
//               lambda; then macro_val, macro_test, transfer_gain
// gates.csv    "task,mean_gate,entropy_of_weights", one block of T rows per
//              snapshot in step order
// timing.csv   "wall_seconds"

#include <ostream>
#include <string>

#include "promptsched/csv.hpp"
#include "promptsched/trainer.hpp"

namespace promptsched {

inline void write_metrics_csv(std::ostream& os, const MetricsReport& r) {
  write_csv_row(os, {"kind", "step", "task", "metric", "value"});
  for (std::size_t s = 0; s < r.loss_trace.size(); ++s) {
    const auto step = std::to_string(s);
    for (std::size_t t = 0; t < r.loss_trace[s].size(); ++t) {
      write_csv_row(os, {"trace", step, std::to_string(t), "loss", format_double(r.loss_trace[s][t])});
      write_csv_row(os, {"trace", step, std::to_string(t), "lambda", format_double(r.lambda_trace[s][t])});
    }
    write_csv_row(os, {"trace", step, "", "entropy", format_double(r.entropy_trace[s])});
  }
  const auto step = std::to_string(r.loss_trace.size());
  for (std::size_t t = 0; t < r.tasks.size(); ++t) {
    const auto& m = r.tasks[t];
    const auto task = std::to_string(t);
    write_csv_row(os, {"final", step, task, "val_accuracy", format_double(m.val_accuracy)});
    write_csv_row(os, {"final", step, task, "test_accuracy", format_double(m.test_accuracy)});
    write_csv_row(os, {"final", step, task, "mean_gate", format_double(m.mean_gate)});
    write_csv_row(os, {"final", step, task, "entropy", format_double(m.entropy)});
    write_csv_row(os, {"final", step, task, "lambda", format_double(m.lambda)});
  }
  if (!r.tasks.empty()) {
    write_csv_row(os, {"final", step, "", "macro_val", format_double(r.macro_val)});
    write_csv_row(os, {"final", step, "", "macro_test", format_double(r.macro_test)});
    write_csv_row(os, {"final", step, "", "transfer_gain", format_double(r.transfer_gain)});
  }
}

inline void write_gates_csv(std::ostream& os, const MetricsReport& r) {
  write_csv_row(os, {"task", "mean_gate", "entropy_of_weights"});
  for (const auto& snap : r.gates)
    for (std::size_t t = 0; t < snap.mean_gate.size(); ++t)
      write_csv_row(os, {std::to_string(t), format_double(snap.mean_gate[t]), format_double(snap.entropy[t])});
}

inline void write_scheduler_weights_csv(std::ostream& os, const ModelState& model) {
  if (model.pins.onehot_schedule) {
    std::vector<std::string> header{"task"};
    for (std::size_t k = 0; k < model.K; ++k) header.push_back("k" + std::to_string(k));
    write_csv_row(os, header);
    for (std::size_t t = 0; t < model.T(); ++t) {
      std::vector<std::string> row{std::to_string(t)};
      for (std::size_t k = 0; k < model.K; ++k) row.push_back(k == t % model.K ? "1" : "0");
      write_csv_row(os, row);
    }
    return;
  }
  write_scheduler_csv(os, scheduler_view(model));
}

inline void write_timing_csv(std::ostream& os, const MetricsReport& r) {
  write_csv_row(os, {"wall_seconds"});
  write_csv_row(os, {format_double(r.wall_seconds)});
}

}  // namespace promptsched
