#pragma once

// File plumbing shared by the trace, mask and report writers: whole-file
// reads, temp-then-rename writes, and the fixed float formatting used in
// every JSON/CSV artifact.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "lingua/error.hpp"

namespace lingua {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

namespace detail {

inline std::filesystem::path temp_sibling(const std::filesystem::path& target) {
  static thread_local std::mt19937_64 rng(std::random_device{}());
  char suffix[24];
  std::snprintf(suffix, sizeof suffix, ".tmp-%016llx", static_cast<unsigned long long>(rng()));
  return target.parent_path() / (target.filename().string() + suffix);
}

inline void write_plain(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  out.flush();
  if (!out) throw Error(ErrorCode::io, "short write to " + path.string());
}

inline std::filesystem::path absolute_target(const std::filesystem::path& target) {
  auto abs = std::filesystem::absolute(target);
  if (!abs.has_filename()) abs = abs.parent_path();
  return abs;
}

}  // namespace detail

// Readers never observe a partially written file.
inline void write_file_atomic(const std::filesystem::path& target, const std::string& contents) {
  const auto abs = detail::absolute_target(target);
  if (!abs.parent_path().empty()) std::filesystem::create_directories(abs.parent_path());
  const auto tmp = detail::temp_sibling(abs);
  try {
    detail::write_plain(tmp, contents);
    std::filesystem::rename(tmp, abs);
  } catch (...) {
    std::error_code ec;
    std::filesystem::remove(tmp, ec);
    throw;
  }
}

// Builds the directory under a temporary name and swaps it into place.
inline void write_directory_atomic(const std::filesystem::path& target,
                                   const std::vector<std::pair<std::string, std::string>>& files) {
  const auto abs = detail::absolute_target(target);
  if (!abs.parent_path().empty()) std::filesystem::create_directories(abs.parent_path());
  if (std::filesystem::exists(abs) && !std::filesystem::is_directory(abs))
    throw Error(ErrorCode::io, abs.string() + " exists and is not a directory");
  const auto tmp = detail::temp_sibling(abs);
  std::error_code ec;
  try {
    std::filesystem::create_directory(tmp);
    for (const auto& [name, contents] : files) detail::write_plain(tmp / name, contents);
    if (std::filesystem::exists(abs)) {
      const auto old = detail::temp_sibling(abs);
      std::filesystem::rename(abs, old);
      std::filesystem::rename(tmp, abs);
      std::filesystem::remove_all(old, ec);
    } else {
      std::filesystem::rename(tmp, abs);
    }
  } catch (...) {
    std::filesystem::remove_all(tmp, ec);
    throw;
  }
}

// Fixed 9-significant-digit rendering used for every reported float.
inline std::string format_double(double v) {
  if (v == 0.0) return "0";  // folds -0
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// Value that prints (shortest round-trip) with at most 9 significant digits;
// used before handing doubles to the JSON serializer.
inline double round_sig9(double v) {
  if (!std::isfinite(v) || v == 0.0) return v == 0.0 ? 0.0 : v;
  return std::strtod(format_double(v).c_str(), nullptr);
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace lingua
