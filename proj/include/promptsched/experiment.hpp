#pragma once

// One experiment: generate a suite with held-out tasks, train the scheduled
// model, and optionally train the single-shared-prompt baseline (K = 1) on
// the same data and seed and measure transfer to the held-out tasks.

#include <optional>

#include "promptsched/trainer.hpp"

namespace promptsched {

struct ExperimentConfig {
  TrainConfig train;
  /// suite.T counts training tasks only; held-out tasks are appended.
  SuiteConfig suite{.T = 8, .vocab_size = 16, .seq_len = 8, .train_size = 1024};
  std::size_t heldout = 2;
  /// Train the K = 1 baseline and measure transfer gain.
  bool transfer = false;

  void validate() const {
    train.validate();
    SuiteConfig full = suite;
    full.T = suite.T + heldout;
    full.heldout = heldout;
    full.validate();
    if (transfer && heldout == 0) throw Error("experiment: transfer requires at least one held-out task");
    if (train.encoder.vocab_size < suite.vocab_size)
      throw Error("experiment: encoder.vocab_size must be at least suite.vocab_size");
    if (train.encoder.max_len < train.encoder.m + suite.seq_len)
      throw Error("experiment: encoder.max_len must be at least encoder.m + suite.seq_len");
  }

  TaskSuite generate() const {
    SuiteConfig full = suite;
    full.T = suite.T + heldout;
    full.heldout = heldout;
    return generate_tasks(full);
  }
};

struct ExperimentResult {
  TrainResult scheduled;
  std::optional<TrainResult> baseline;
  std::optional<TransferReport> transfer;
};

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto all = cfg.generate();
  const auto training = all.range(0, cfg.suite.T);
  ExperimentResult r{train(cfg.train, training), std::nullopt, std::nullopt};
  if (cfg.transfer) {
    TrainConfig base = cfg.train;
    base.K = 1;
    r.baseline = train(base, training);
    r.transfer = transfer_gain(r.scheduled.model, all.range(cfg.suite.T, all.T()), r.baseline->model, cfg.train);
    r.scheduled.report.transfer_gain = r.transfer->gain;
  }
  return r;
}

}  // namespace promptsched
