#pragma once

// Flat key-value run configuration.
//
//   # comment
//   key = value
//
// Keys use dotted namespaces. Every key has a default; the resolved echo lists
// every key in a fixed order and parses back to the same configuration.

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdint>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "promptsched/csv.hpp"
#include "promptsched/experiment.hpp"

namespace promptsched {

struct RunConfig {
  ExperimentConfig experiment;
  std::uint64_t seed = 0;
  std::vector<double> temperature_grid{0.5, 0.7, 0.9, 1.1, 1.3};
  std::vector<double> task_count_grid{2, 4, 8, 12, 16};
  std::size_t repeats = 5;

  /// Experiment configuration with the seed applied to data and model.
  ExperimentConfig resolved(std::uint64_t s) const {
    ExperimentConfig e = experiment;
    e.train.seed = s;
    e.suite.seed = s;
    return e;
  }
  void validate() const {
    resolved(seed).validate();
    if (repeats == 0) throw Error("config: sweep.repeats must be at least 1");
  }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::uint64_t parse_u64(const std::string& v, const std::string& key) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || p != v.data() + v.size())
    throw Error("key '" + key + "': expected a non-negative integer, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw Error("key '" + key + "': expected true or false, got '" + v + "'");
}

inline std::vector<double> parse_list(const std::string& v, const std::string& key) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(trim(item), "key '" + key + "'"));
  if (out.empty()) throw Error("key '" + key + "': expected a comma-separated list of numbers");
  return out;
}

inline std::string format_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_double(v[i]);
  return out;
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

// `ref` is a generic lambda returning a reference to the field, so one
// accessor serves both the const getter and the setter.
template <class F>
Field uint_field(const std::string& key, F ref) {
  return Field{key, [ref](const RunConfig& c) { return std::to_string(ref(c)); },
               [ref, key](RunConfig& c, const std::string& v) { ref(c) = static_cast<std::size_t>(parse_u64(v, key)); }};
}

template <class F>
Field double_field(const std::string& key, F ref) {
  return Field{key, [ref](const RunConfig& c) { return format_double(ref(c)); },
               [ref, key](RunConfig& c, const std::string& v) { ref(c) = parse_double(v, "key '" + key + "'"); }};
}

template <class F>
Field bool_field(const std::string& key, F ref) {
  return Field{key, [ref](const RunConfig& c) { return std::string(ref(c) ? "true" : "false"); },
               [ref, key](RunConfig& c, const std::string& v) { ref(c) = parse_bool(v, key); }};
}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> f = [] {
    std::vector<Field> v;
    v.push_back(Field{"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
                      [](RunConfig& c, const std::string& s) { c.seed = parse_u64(s, "seed"); }});
    v.push_back(uint_field("train.steps", [](auto& c) -> auto& { return c.experiment.train.steps; }));
    v.push_back(uint_field("train.batch_size", [](auto& c) -> auto& { return c.experiment.train.batch_size; }));
    v.push_back(Field{"train.optimizer",
                      [](const RunConfig& c) {
                        return std::string(c.experiment.train.optimizer.kind == OptimizerKind::Adam ? "adam" : "sgd");
                      },
                      [](RunConfig& c, const std::string& s) {
                        if (s == "adam") c.experiment.train.optimizer.kind = OptimizerKind::Adam;
                        else if (s == "sgd") c.experiment.train.optimizer.kind = OptimizerKind::Sgd;
                        else throw Error("key 'train.optimizer': expected adam or sgd, got '" + s + "'");
                      }});
    v.push_back(double_field("train.learning_rate", [](auto& c) -> auto& { return c.experiment.train.optimizer.learning_rate; }));
    v.push_back(double_field("train.adam.beta1", [](auto& c) -> auto& { return c.experiment.train.optimizer.beta1; }));
    v.push_back(double_field("train.adam.beta2", [](auto& c) -> auto& { return c.experiment.train.optimizer.beta2; }));
    v.push_back(double_field("train.adam.epsilon", [](auto& c) -> auto& { return c.experiment.train.optimizer.epsilon; }));
    v.push_back(double_field("train.scheduler_lr_scale", [](auto& c) -> auto& { return c.experiment.train.scheduler_lr_scale; }));
    v.push_back(Field{"train.lambda.strategy",
                      [](const RunConfig& c) { return strategy_name(c.experiment.train.lambda_strategy); },
                      [](RunConfig& c, const std::string& s) {
                        try {
                          c.experiment.train.lambda_strategy = parse_strategy(s);
                        } catch (const Error&) {
                          throw Error("key 'train.lambda.strategy': expected fixed, grad-norm or inverse-loss, got '" + s + "'");
                        }
                      }});
    v.push_back(double_field("train.lambda.epsilon_floor", [](auto& c) -> auto& { return c.experiment.train.lambda_update.epsilon_floor; }));
    v.push_back(double_field("train.lambda.smoothing", [](auto& c) -> auto& { return c.experiment.train.lambda_update.smoothing; }));
    v.push_back(bool_field("train.freeze_backbone", [](auto& c) -> auto& { return c.experiment.train.freeze_backbone; }));
    v.push_back(uint_field("train.eval_every", [](auto& c) -> auto& { return c.experiment.train.eval_every; }));
    v.push_back(uint_field("train.adapt_steps", [](auto& c) -> auto& { return c.experiment.train.adapt_steps; }));
    v.push_back(uint_field("scheduler.K", [](auto& c) -> auto& { return c.experiment.train.K; }));
    v.push_back(double_field("scheduler.tau", [](auto& c) -> auto& { return c.experiment.train.tau; }));
    v.push_back(bool_field("scheduler.pin_onehot", [](auto& c) -> auto& { return c.experiment.train.pins.onehot_schedule; }));
    v.push_back(bool_field("fusion.pin_gate_open", [](auto& c) -> auto& { return c.experiment.train.pins.gate_open; }));
    v.push_back(uint_field("encoder.vocab_size", [](auto& c) -> auto& { return c.experiment.train.encoder.vocab_size; }));
    v.push_back(uint_field("encoder.d", [](auto& c) -> auto& { return c.experiment.train.encoder.d; }));
    v.push_back(uint_field("encoder.n_layers", [](auto& c) -> auto& { return c.experiment.train.encoder.n_layers; }));
    v.push_back(uint_field("encoder.n_heads", [](auto& c) -> auto& { return c.experiment.train.encoder.n_heads; }));
    v.push_back(uint_field("encoder.ffn_mult", [](auto& c) -> auto& { return c.experiment.train.encoder.ffn_mult; }));
    v.push_back(uint_field("encoder.max_len", [](auto& c) -> auto& { return c.experiment.train.encoder.max_len; }));
    v.push_back(uint_field("encoder.m", [](auto& c) -> auto& { return c.experiment.train.encoder.m; }));
    v.push_back(bool_field("encoder.pool_prompt_positions", [](auto& c) -> auto& { return c.experiment.train.encoder.pool_prompt_positions; }));
    v.push_back(bool_field("encoder.position_encoding", [](auto& c) -> auto& { return c.experiment.train.encoder.position_encoding; }));
    v.push_back(uint_field("suite.T", [](auto& c) -> auto& { return c.experiment.suite.T; }));
    v.push_back(Field{"suite.profile", [](const RunConfig& c) { return c.experiment.suite.profile; },
                      [](RunConfig& c, const std::string& s) {
                        if (s != "none" && s != "conflict")
                          throw Error("key 'suite.profile': expected none or conflict, got '" + s + "'");
                        c.experiment.suite.profile = s;
                      }});
    v.push_back(uint_field("suite.vocab_size", [](auto& c) -> auto& { return c.experiment.suite.vocab_size; }));
    v.push_back(uint_field("suite.seq_len", [](auto& c) -> auto& { return c.experiment.suite.seq_len; }));
    v.push_back(uint_field("suite.train_size", [](auto& c) -> auto& { return c.experiment.suite.train_size; }));
    v.push_back(uint_field("suite.val_size", [](auto& c) -> auto& { return c.experiment.suite.val_size; }));
    v.push_back(uint_field("suite.test_size", [](auto& c) -> auto& { return c.experiment.suite.test_size; }));
    v.push_back(uint_field("suite.heldout", [](auto& c) -> auto& { return c.experiment.heldout; }));
    v.push_back(bool_field("transfer.enabled", [](auto& c) -> auto& { return c.experiment.transfer; }));
    v.push_back(Field{"sweep.temperature.grid", [](const RunConfig& c) { return format_list(c.temperature_grid); },
                      [](RunConfig& c, const std::string& s) { c.temperature_grid = parse_list(s, "sweep.temperature.grid"); }});
    v.push_back(Field{"sweep.task_count.grid", [](const RunConfig& c) { return format_list(c.task_count_grid); },
                      [](RunConfig& c, const std::string& s) { c.task_count_grid = parse_list(s, "sweep.task_count.grid"); }});
    v.push_back(uint_field("sweep.repeats", [](auto& c) -> auto& { return c.repeats; }));
    return v;
  }();
  return f;
}

}  // namespace config_detail

/// Parses config text. Errors name the line and the key.
inline RunConfig parse_config(const std::string& text, const std::string& source = "config") {
  RunConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = source + ":" + std::to_string(lineno);
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(where + ": expected 'key = value'");
    const auto key = config_detail::trim(line.substr(0, eq));
    const auto value = config_detail::trim(line.substr(eq + 1));
    const auto& fs = config_detail::fields();
    auto it = std::find_if(fs.begin(), fs.end(), [&](const auto& f) { return f.key == key; });
    if (it == fs.end()) throw Error(where + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw Error(where + ": key '" + key + "' given twice");
    try {
      it->set(cfg, value);
    } catch (const Error& e) {
      throw Error(where + ": " + e.what());
    }
  }
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("config: cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

/// Every key with its resolved value, one per line, in a fixed order.
inline std::string resolved_config_text(const RunConfig& cfg) {
  std::string out = "# resolved configuration; every key is listed with its effective value\n";
  for (const auto& f : config_detail::fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

/// FNV-1a of the resolved echo, as 16 hex digits.
inline std::string config_hash(const RunConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash_name(resolved_config_text(cfg))));
  return buf;
}

}  // namespace promptsched
