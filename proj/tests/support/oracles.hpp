#pragma once

// Test-only reference computations. Each one follows the defining formula
// directly (explicit pair enumeration, long double accumulation) and shares
// no code path with the library routine it checks.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

inline long double dot(const Vec& a, const Vec& b) {
  long double acc = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<long double>(a[i]) * b[i];
  return acc;
}

inline double cosine(const Vec& a, const Vec& b) {
  return static_cast<double>(dot(a, b) / std::sqrt(dot(a, a) * dot(b, b)));
}

struct Label {
  std::string language;
  std::string semantic;
};

struct PairMeans {
  double same_lang_diff_sem = 0.0;
  double diff_lang_diff_sem = 0.0;
  double diff_lang_same_sem = 0.0;
  double lrds() const { return same_lang_diff_sem - diff_lang_diff_sem; }
  double sads() const { return diff_lang_same_sem - diff_lang_diff_sem; }
};

// Enumerates all ordered pairs i != j.
template <typename At>
PairMeans pair_means(std::size_t n, At at, const std::vector<Label>& labels) {
  long double s[3] = {0, 0, 0};
  std::size_t c[3] = {0, 0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const bool sl = labels[i].language == labels[j].language;
      const bool ss = labels[i].semantic == labels[j].semantic;
      int cls = -1;
      if (sl && !ss) cls = 0;
      if (!sl && !ss) cls = 1;
      if (!sl && ss) cls = 2;
      if (cls < 0) continue;
      s[cls] += at(i, j);
      ++c[cls];
    }
  }
  return {static_cast<double>(s[0] / c[0]), static_cast<double>(s[1] / c[1]), static_cast<double>(s[2] / c[2])};
}

// sum_{i<j} v_i[k] v_j[k] by explicit pairs.
inline double contribution(const std::vector<Vec>& group, std::size_t k) {
  long double acc = 0.0L;
  for (std::size_t i = 0; i + 1 < group.size(); ++i)
    for (std::size_t j = i + 1; j < group.size(); ++j) acc += static_cast<long double>(group[i][k]) * group[j][k];
  return static_cast<double>(acc);
}

inline std::vector<Vec> random_unit_vectors(std::size_t count, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<Vec> out(count, Vec(dim));
  for (auto& v : out) {
    for (auto& x : v) x = normal(rng);
    const double norm = std::sqrt(static_cast<double>(dot(v, v)));
    for (auto& x : v) x /= norm;
  }
  return out;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  static std::mt19937_64 rng(std::random_device{}());
  auto p = std::filesystem::temp_directory_path() / ("lingua-test-" + name + "-" + std::to_string(rng()));
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace oracle
