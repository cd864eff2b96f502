#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <filesystem>
#include <ostream>
#include <string>
#include <system_error>
#include <vector>

#include "promptsched/tensor.hpp"

namespace promptsched {

/// Shortest decimal form that round-trips to the same double ('.' separator,
/// locale independent).
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw Error("format_double: conversion failed");
  return std::string(buf, p);
}

inline double parse_double(const std::string& s, const std::string& what) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = b + s.size();
  if (!s.empty() && *b == '+') ++b;
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e || s.empty()) throw Error(what + ": '" + s + "' is not a number");
  return v;
}

/// Writes one comma-separated row terminated by '\n'.
inline void write_csv_row(std::ostream& os, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) os << ',';
    os << cells[i];
  }
  os << '\n';
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("io: cannot open " + path.string() + " for writing");
  return os;
}

}  // namespace promptsched
