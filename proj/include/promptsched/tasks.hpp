#pragma once

// Synthetic multi-task classification suites over random token sequences.
//
// Rule family (task t uses rule t mod 4):
//   majority      which of three candidate tokens occurs most often
//   presence      whether a marked token occurs at all
//   parity        parity of a marked token's count
//   first-vs-last whether the first token id is smaller than the last
//
// Under the "conflict" profile every complete group of four consecutive
// non-held-out tasks pairs its first two tasks: the second becomes a parity
// task over the first majority candidate of its partner and is labelled on
// exactly the partner's inputs, so the two heads read contradictory labels
// off identical sequences.

#include <algorithm>
#include <array>
#include <set>
#include <string>
#include <vector>

#include "promptsched/random.hpp"
#include "promptsched/tensor.hpp"

namespace promptsched {

enum class Rule { Majority, Presence, Parity, FirstVsLast };

inline std::string rule_name(Rule r) {
  switch (r) {
    case Rule::Majority: return "majority";
    case Rule::Presence: return "presence";
    case Rule::Parity: return "parity";
    case Rule::FirstVsLast: return "first-vs-last";
  }
  return "?";
}

struct Example {
  std::vector<std::size_t> tokens;
  std::size_t label = 0;
};

struct Task {
  std::size_t id = 0;
  Rule rule = Rule::Majority;
  std::vector<std::size_t> marked;  // rule tokens (three candidates for majority)
  std::size_t classes = 2;
  std::vector<Example> train, val, test;
  /// Tasks sharing a group id see identical inputs; -1 means no group.
  int conflict_group = -1;
  /// Seeds this task's batch sampling, independent of its position in a suite.
  std::uint64_t stream_seed = 0;

  std::size_t label(const std::vector<std::size_t>& tokens) const {
    auto count = [&](std::size_t tok) {
      return static_cast<std::size_t>(std::count(tokens.begin(), tokens.end(), tok));
    };
    switch (rule) {
      case Rule::Majority: {
        std::size_t best = 0;
        for (std::size_t c = 1; c < marked.size(); ++c)
          if (count(marked[c]) > count(marked[best])) best = c;
        return best;
      }
      case Rule::Presence: return count(marked[0]) > 0 ? 1 : 0;
      case Rule::Parity: return count(marked[0]) % 2;
      case Rule::FirstVsLast: return tokens.front() < tokens.back() ? 1 : 0;
    }
    return 0;
  }
};

struct SuiteConfig {
  std::size_t T = 8;
  std::uint64_t seed = 0;
  std::string profile = "conflict";  // "none" or "conflict"
  std::size_t vocab_size = 64;
  std::size_t seq_len = 12;
  std::size_t train_size = 256;
  std::size_t val_size = 128;
  std::size_t test_size = 128;
  /// The last `heldout` tasks never join a conflict group.
  std::size_t heldout = 0;

  void validate() const {
    if (T == 0) throw Error("tasks: T must be at least 1");
    if (heldout >= T) throw Error("tasks: heldout must be smaller than T");
    if (profile != "none" && profile != "conflict") throw Error("tasks: unknown profile '" + profile + "'");
    if (vocab_size < 8) throw Error("tasks: vocab_size must be at least 8");
    if (seq_len < 6) throw Error("tasks: seq_len must be at least 6");
    if (train_size == 0 || val_size == 0 || test_size == 0) throw Error("tasks: split sizes must be positive");
  }
};

struct TaskSuite {
  std::vector<Task> tasks;
  SuiteConfig config;

  std::size_t T() const { return tasks.size(); }
  std::vector<std::size_t> classes() const {
    std::vector<std::size_t> c;
    for (const auto& t : tasks) c.push_back(t.classes);
    return c;
  }
  /// Tasks at the given positions, keeping their identities and streams.
  TaskSuite subset(const std::vector<std::size_t>& which) const {
    TaskSuite s{{}, config};
    for (auto i : which) s.tasks.push_back(tasks.at(i));
    s.config.T = s.tasks.size();
    return s;
  }
  TaskSuite range(std::size_t begin, std::size_t end) const {
    std::vector<std::size_t> idx;
    for (auto i = begin; i < end; ++i) idx.push_back(i);
    return subset(idx);
  }
};

namespace detail {

inline std::size_t filler(Rng& rng, const std::vector<std::size_t>& avoid, std::size_t vocab) {
  for (;;) {
    auto t = rng.below(vocab);
    if (std::find(avoid.begin(), avoid.end(), t) == avoid.end()) return t;
  }
}

// Places `count` copies of `tok` at distinct free positions.
inline void plant(Rng& rng, std::vector<std::size_t>& seq, std::vector<char>& used, std::size_t tok, std::size_t count) {
  while (count > 0) {
    auto p = rng.below(seq.size());
    if (used[p]) continue;
    used[p] = 1;
    seq[p] = tok;
    --count;
  }
}

// One input drawn so that the task's own classes come out balanced.
inline std::vector<std::size_t> draw_input(Rng& rng, const Task& task, std::size_t vocab, std::size_t len) {
  std::vector<std::size_t> seq(len);
  std::vector<char> used(len, 0);
  for (auto& s : seq) s = filler(rng, task.marked, vocab);
  switch (task.rule) {
    case Rule::Majority: {
      const auto winner = rng.below(task.marked.size());
      const auto top = rng.between(2, 4);
      std::size_t free = len - top;
      for (std::size_t c = 0; c < task.marked.size(); ++c) {
        if (c == winner) {
          plant(rng, seq, used, task.marked[c], top);
          continue;
        }
        const auto n = std::min(free, rng.between(0, top - 1));
        plant(rng, seq, used, task.marked[c], n);
        free -= n;
      }
      break;
    }
    case Rule::Presence:
      if (rng.coin()) plant(rng, seq, used, task.marked[0], rng.between(1, 2));
      break;
    case Rule::Parity:
      plant(rng, seq, used, task.marked[0], rng.between(0, 3));
      break;
    case Rule::FirstVsLast:
      break;
  }
  return seq;
}

}  // namespace detail

/// Builds T tasks deterministically from (T, seed, profile).
inline TaskSuite generate_tasks(const SuiteConfig& cfg) {
  cfg.validate();
  TaskSuite suite{{}, cfg};
  Rng rng(cfg.seed, "tasks");
  const bool conflict = cfg.profile == "conflict";
  for (std::size_t t = 0; t < cfg.T; ++t) {
    Task task;
    task.id = t;
    task.rule = static_cast<Rule>(t % 4);
    task.stream_seed = mix_seed(cfg.seed, 1000 + t);
    const std::size_t n_marked = task.rule == Rule::Majority ? 3 : 1;
    while (task.marked.size() < n_marked) {
      auto tok = rng.below(cfg.vocab_size);
      if (std::find(task.marked.begin(), task.marked.end(), tok) == task.marked.end()) task.marked.push_back(tok);
    }
    task.classes = task.rule == Rule::Majority ? 3 : 2;
    const bool paired_second = conflict && t % 4 == 1 && (t / 4 + 1) * 4 <= cfg.T - cfg.heldout;
    if (paired_second) {
      // Parity of the partner's first majority candidate.
      task.rule = Rule::Parity;
      task.classes = 2;
      task.marked = {suite.tasks[t - 1].marked[0]};
      task.conflict_group = static_cast<int>(t / 4);
      suite.tasks[t - 1].conflict_group = task.conflict_group;
    }
    suite.tasks.push_back(std::move(task));
  }

  for (auto& task : suite.tasks) {
    if (task.conflict_group >= 0 && task.id % 4 == 1) {
      const auto& partner = suite.tasks[task.id - 1];
      auto relabel = [&](const std::vector<Example>& src) {
        std::vector<Example> out;
        for (const auto& ex : src) out.push_back({ex.tokens, task.label(ex.tokens)});
        return out;
      };
      task.train = relabel(partner.train);
      task.val = relabel(partner.val);
      task.test = relabel(partner.test);
      continue;
    }
    Rng data(mix_seed(cfg.seed, 2000 + task.id), "examples");
    std::set<std::vector<std::size_t>> seen;
    auto fill = [&](std::vector<Example>& split, std::size_t n) {
      while (split.size() < n) {
        auto seq = detail::draw_input(data, task, cfg.vocab_size, cfg.seq_len);
        if (!seen.insert(seq).second) continue;
        split.push_back({seq, task.label(seq)});
      }
    };
    fill(task.train, cfg.train_size);
    fill(task.val, cfg.val_size);
    fill(task.test, cfg.test_size);
  }
  return suite;
}

}  // namespace promptsched
