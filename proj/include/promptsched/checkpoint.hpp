#pragma once

// Checkpoint directory layout:
//   manifest.txt     key = value lines: format, config_hash, step, then one
//                    "param.<name> = <d0>x<d1>..." line per parameter
//   <name>.bin       the parameter's values as little-endian IEEE-754 f64
//
// Loading verifies every shape against the manifest and every buffer size.

#include <bit>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "promptsched/csv.hpp"
#include "promptsched/params.hpp"

namespace promptsched {

inline constexpr const char* kCheckpointFormat = "promptsched-checkpoint-1";

struct Checkpoint {
  std::string config_hash;
  std::size_t step = 0;
  ParameterStore params;
};

namespace detail {

inline std::string shape_token(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

inline Shape parse_shape_token(const std::string& tok, const std::string& where) {
  Shape s;
  std::stringstream ss(tok);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    std::size_t v = 0;
    auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (ec != std::errc() || p != part.data() + part.size() || v == 0)
      throw Error("checkpoint: " + where + ": bad shape '" + tok + "'");
    s.push_back(v);
  }
  if (s.empty()) throw Error("checkpoint: " + where + ": empty shape");
  return s;
}

inline void put_le(std::ostream& os, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  os.write(b, 8);
}

inline double get_le(const unsigned char* b) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ck) {
  std::filesystem::create_directories(dir);
  auto manifest = open_output(dir / "manifest.txt");
  manifest << "format = " << kCheckpointFormat << '\n';
  manifest << "config_hash = " << ck.config_hash << '\n';
  manifest << "step = " << ck.step << '\n';
  for (const auto& [name, t] : ck.params.items()) {
    manifest << "param." << name << " = " << detail::shape_token(t.shape) << '\n';
    auto bin = open_output(dir / (name + ".bin"));
    for (double v : t.values) detail::put_le(bin, v);
    if (!bin) throw Error("checkpoint: failed writing " + name + ".bin");
  }
  if (!manifest) throw Error("checkpoint: failed writing manifest.txt");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw Error("checkpoint: cannot read " + (dir / "manifest.txt").string());
  Checkpoint ck;
  bool format_seen = false, step_seen = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "manifest line " + std::to_string(lineno);
    if (eq == std::string::npos) throw Error("checkpoint: " + where + ": expected 'key = value'");
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    if (key == "format") {
      if (value != kCheckpointFormat) throw Error("checkpoint: unsupported format '" + value + "'");
      format_seen = true;
    } else if (key == "config_hash") {
      ck.config_hash = value;
    } else if (key == "step") {
      auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), ck.step);
      if (ec != std::errc() || p != value.data() + value.size()) throw Error("checkpoint: " + where + ": bad step");
      step_seen = true;
    } else if (key.rfind("param.", 0) == 0) {
      const auto name = key.substr(6);
      const auto shape = detail::parse_shape_token(value, where);
      std::ifstream bin(dir / (name + ".bin"), std::ios::binary);
      if (!bin) throw Error("checkpoint: missing buffer " + name + ".bin");
      std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
      Tensor t = Tensor::zeros(shape);
      if (bytes.size() != 8 * t.size())
        throw Error("checkpoint: " + name + ".bin holds " + std::to_string(bytes.size()) + " bytes, expected " +
                    std::to_string(8 * t.size()) + " for shape " + shape_str(shape));
      for (std::size_t i = 0; i < t.size(); ++i) t.values[i] = detail::get_le(bytes.data() + 8 * i);
      ck.params.add(name, std::move(t));
    } else {
      throw Error("checkpoint: " + where + ": unknown key '" + key + "'");
    }
  }
  if (!format_seen || !step_seen) throw Error("checkpoint: manifest lacks format or step");
  return ck;
}

}  // namespace promptsched
