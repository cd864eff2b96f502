#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "promptsched/checkpoint.hpp"
#include "promptsched/config.hpp"
#include "promptsched/report.hpp"
#include "promptsched/sweep.hpp"

using namespace promptsched;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("promptsched_io_" + name);
  fs::remove_all(p);
  return p;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

ExperimentConfig tiny_experiment() {
  ExperimentConfig e;
  e.train.encoder = EncoderConfig{.vocab_size = 12, .d = 8, .n_layers = 1, .n_heads = 2, .ffn_mult = 2, .max_len = 10, .m = 2};
  e.train.K = 3;
  e.train.steps = 6;
  e.train.batch_size = 4;
  e.train.adapt_steps = 3;
  e.suite = SuiteConfig{.T = 3, .vocab_size = 12, .seq_len = 6, .train_size = 48, .val_size = 32, .test_size = 32};
  e.heldout = 1;
  return e;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  ParameterStore p;
  p.add("a", Tensor::matrix(2, 3, {0.1, -0.0, 1e-310, std::numeric_limits<double>::max(), -3.25, 1.0 / 3.0}));
  p.add("b.c", Tensor::vector({std::numeric_limits<double>::min(), -1e300}));
  const auto dir = scratch("ck");
  save_checkpoint(dir, Checkpoint{"00ff", 42, p});
  auto back = load_checkpoint(dir);
  EXPECT_EQ(back.config_hash, "00ff");
  EXPECT_EQ(back.step, 42u);
  ASSERT_EQ(back.params.size(), 2u);
  for (const auto& [name, t] : p.items()) {
    const auto& u = back.params.get(name);
    ASSERT_EQ(u.shape, t.shape);
    EXPECT_EQ(std::memcmp(u.values.data(), t.values.data(), 8 * t.size()), 0) << name;
  }
  // Little-endian layout: 1/3 is 0x3FD5555555555555.
  std::ifstream bin(dir / "a.bin", std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(bin)), {});
  ASSERT_EQ(bytes.size(), 48u);
  EXPECT_EQ(bytes[40], 0x55);
  EXPECT_EQ(bytes[47], 0x3F);
}

TEST(Checkpoint, TrainedModelRoundTrip) {
  auto e = tiny_experiment();
  auto r = run_experiment(e);
  const auto dir = scratch("ck_model");
  save_checkpoint(dir, Checkpoint{"h", 6, r.scheduled.model.params});
  EXPECT_EQ(load_checkpoint(dir).params, r.scheduled.model.params);
}

TEST(Checkpoint, CorruptionIsDetected) {
  ParameterStore p;
  p.add("w", Tensor::vector({1.0, 2.0}));
  const auto dir = scratch("ck_bad");
  save_checkpoint(dir, Checkpoint{"h", 1, p});
  fs::resize_file(dir / "w.bin", 12);
  EXPECT_NE(error_of([&] { load_checkpoint(dir); }).find("w.bin holds 12 bytes"), std::string::npos);
  fs::remove(dir / "w.bin");
  EXPECT_NE(error_of([&] { load_checkpoint(dir); }).find("missing buffer"), std::string::npos);
  EXPECT_THROW(load_checkpoint(scratch("ck_none")), Error);
}

TEST(Config, DefaultsAndOverrides) {
  auto c = parse_config("# comment\nscheduler.tau = 1.1  # trailing\n\nsuite.T=4\ntrain.lambda.strategy = inverse-loss\n"
                        "sweep.task_count.grid = 1, 3\n");
  EXPECT_EQ(c.experiment.train.tau, 1.1);
  EXPECT_EQ(c.experiment.suite.T, 4u);
  EXPECT_EQ(c.experiment.train.lambda_strategy, LambdaStrategy::InverseLoss);
  EXPECT_EQ(c.task_count_grid, (std::vector<double>{1, 3}));
  EXPECT_EQ(c.experiment.train.steps, RunConfig{}.experiment.train.steps);
}

TEST(Config, ResolvedEchoRoundTrips) {
  auto c = parse_config("seed = 17\nscheduler.tau = 0.7000000000000001\ntrain.learning_rate = 3e-3\n"
                        "encoder.pool_prompt_positions = false\nsuite.profile = none\nsweep.temperature.grid = 0.1,0.2\n");
  const auto text = resolved_config_text(c);
  auto again = parse_config(text);
  EXPECT_EQ(resolved_config_text(again), text);
  EXPECT_EQ(config_hash(again), config_hash(c));
  EXPECT_EQ(again.experiment.train.tau, 0.7000000000000001);
  EXPECT_EQ(again.seed, 17u);
  EXPECT_NE(config_hash(c), config_hash(RunConfig{}));
  // Every key appears exactly once.
  std::istringstream in(text);
  std::string line;
  std::set<std::string> keys;
  std::size_t n = 0;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') {
      keys.insert(line.substr(0, line.find(" = ")));
      ++n;
    }
  EXPECT_EQ(keys.size(), n);
}

TEST(Config, FieldLevelDiagnostics) {
  EXPECT_EQ(error_of([] { parse_config("encoder.d = 8\nencoder.d = x\n", "f.cfg"); }),
            "f.cfg:2: key 'encoder.d' given twice");
  EXPECT_EQ(error_of([] { parse_config("encoder.d = -3\n", "f.cfg"); }),
            "f.cfg:1: key 'encoder.d': expected a non-negative integer, got '-3'");
  EXPECT_EQ(error_of([] { parse_config("\nbogus = 1\n", "f.cfg"); }), "f.cfg:2: unknown key 'bogus'");
  EXPECT_EQ(error_of([] { parse_config("scheduler.tau\n", "f.cfg"); }), "f.cfg:1: expected 'key = value'");
  EXPECT_EQ(error_of([] { parse_config("scheduler.tau = warm\n", "f.cfg"); }),
            "f.cfg:1: key 'scheduler.tau': 'warm' is not a number");
  EXPECT_EQ(error_of([] { parse_config("train.freeze_backbone = yes\n", "f.cfg"); }),
            "f.cfg:1: key 'train.freeze_backbone': expected true or false, got 'yes'");
  EXPECT_NE(error_of([] { parse_config("scheduler.tau = 0\n").validate(); }).find("temperature must be positive"),
            std::string::npos);
  EXPECT_NE(error_of([] { parse_config("encoder.n_heads = 3\n").validate(); }).find("not divisible"), std::string::npos);
  EXPECT_NE(error_of([] { load_config("/nonexistent/x.cfg"); }).find("cannot read"), std::string::npos);
}

TEST(Reports, MetricsSchema) {
  auto e = tiny_experiment();
  e.train.steps = 2;
  auto r = run_experiment(e);
  std::ostringstream os;
  write_metrics_csv(os, r.scheduled.report);
  const auto text = os.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), "kind,step,task,metric,value");
  EXPECT_NE(text.find("\ntrace,0,0,loss,"), std::string::npos);
  EXPECT_NE(text.find("\ntrace,1,,entropy,"), std::string::npos);
  EXPECT_NE(text.find("\nfinal,2,,macro_val,"), std::string::npos);
  EXPECT_NE(text.find("\nfinal,2,,transfer_gain,nan\n"), std::string::npos);
  EXPECT_EQ(text.find('\r'), std::string::npos);
  // 2 steps x (3 tasks x 2 + 1) trace rows, 3 x 5 + 3 final rows, one header.
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1 + 14 + 18);

  std::ostringstream gates;
  write_gates_csv(gates, r.scheduled.report);
  EXPECT_EQ(gates.str().substr(0, gates.str().find('\n')), "task,mean_gate,entropy_of_weights");
  const auto g = gates.str();
  EXPECT_EQ(std::count(g.begin(), g.end(), '\n'), 1 + 2 * 3);
}

TEST(Sweep, Validation) {
  SweepSpec s;
  s.base = tiny_experiment();
  s.grid = {};
  EXPECT_THROW(s.validate(), Error);
  s.grid = {0.5, 0.5};
  EXPECT_NE(error_of([&] { s.validate(); }).find("strictly increasing"), std::string::npos);
  s.grid = {-0.1, 0.5};
  EXPECT_NE(error_of([&] { s.validate(); }).find("must be positive"), std::string::npos);
  s.variable = SweepVariable::TaskCount;
  s.grid = {1, 2.5};
  EXPECT_NE(error_of([&] { s.validate(); }).find("must be an integer"), std::string::npos);
  s.grid = {0, 2};
  EXPECT_THROW(s.validate(), Error);
  s.grid = {1, 2};
  s.repeats = 0;
  EXPECT_THROW(s.validate(), Error);
}

TEST(Sweep, RowCountOrderAndDeterminism) {
  SweepSpec s;
  s.base = tiny_experiment();
  s.grid = {0.5, 1.3};
  s.repeats = 2;
  s.first_seed = 7;
  auto a = run_sweep(s, 1);
  auto b = run_sweep(s, 3);
  std::ostringstream ca, cb;
  write_sweep_csv(ca, a);
  write_sweep_csv(cb, b);
  EXPECT_EQ(ca.str(), cb.str());
  const auto text = ca.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1 + 2 * 2 + 2);
  ASSERT_EQ(a.rows.size(), 4u);
  EXPECT_EQ(a.rows[1].value, 0.5);
  EXPECT_EQ(a.rows[1].seed, 8u);
  EXPECT_EQ(a.rows[2].value, 1.3);
  EXPECT_EQ(a.rows[2].seed, 7u);
  EXPECT_EQ(a.aggregates[0].mean.macro_val, (a.rows[0].macro_val + a.rows[1].macro_val) / 2);
}

TEST(Sweep, SingleValueEqualsRepeatedRuns) {
  SweepSpec s;
  s.base = tiny_experiment();
  s.variable = SweepVariable::TaskCount;
  s.grid = {2};
  s.repeats = 2;
  auto rep = run_sweep(s);
  for (std::uint64_t seed = 0; seed < 2; ++seed) {
    auto e = s.base;
    e.suite.T = 2;
    e.suite.seed = e.train.seed = seed;
    auto r = run_experiment(e);
    EXPECT_EQ(rep.rows[seed].macro_test, r.scheduled.report.macro_test);
    EXPECT_EQ(rep.rows[seed].mean_entropy, r.scheduled.report.mean_entropy());
  }
}

TEST(Sweep, SingleTaskGridHasNoConflictGroups) {
  auto e = tiny_experiment();
  e.suite.T = 1;
  for (const auto& t : e.generate().tasks) EXPECT_EQ(t.conflict_group, -1);
}
