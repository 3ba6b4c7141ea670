#pragma once

// Key-region probing: per-neuron contribution of each language to its
// within-language similarity, cross-language standardization, thresholding.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lingua/activation.hpp"
#include "lingua/error.hpp"
#include "lingua/io.hpp"
#include "lingua/parallel.hpp"
#include "lingua/trace.hpp"

namespace lingua {

inline constexpr double kDefaultThreshold = 2.0;

// values[l * K + k]: sum over within-language pairs i<j of a_i[k] * a_j[k].
struct ContributionTable {
  std::vector<std::string> languages;
  std::size_t samples_per_language = 0;
  std::size_t neurons = 0;
  std::vector<double> values;

  double at(std::size_t l, std::size_t k) const { return values[l * neurons + k]; }
  std::span<const double> row(std::size_t l) const {
    return std::span<const double>(values).subspan(l * neurons, neurons);
  }
};

struct ZScoreTable {
  std::vector<std::string> languages;
  std::size_t neurons = 0;
  std::vector<double> values;        // L x K
  std::vector<double> mean;          // per neuron
  std::vector<double> stddev;        // per neuron, population
  std::vector<std::size_t> degenerate;  // flats with sigma == 0, ascending

  double at(std::size_t l, std::size_t k) const { return values[l * neurons + k]; }
};

struct KeyRegionSet {
  double threshold = kDefaultThreshold;
  TraceGeometry geometry;
  std::vector<std::string> languages;
  std::vector<std::vector<NeuronAddress>> regions;  // parallel to languages, ascending

  std::size_t sklr() const noexcept {
    std::size_t total = 0;
    for (const auto& r : regions) total += r.size();
    return total;
  }

  const std::vector<NeuronAddress>& region(const std::string& language) const {
    for (std::size_t l = 0; l < languages.size(); ++l)
      if (languages[l] == language) return regions[l];
    throw Error(ErrorCode::unknown_language, "no region for language '" + language + "'");
  }
};

// Vectors must be normalized and parallel to `meta`. Languages keep
// first-appearance order.
inline ContributionTable contribution_scores(std::span<const ActivationVector> vectors,
                                             std::span<const SampleMeta> meta, unsigned threads = 0) {
  if (vectors.size() != meta.size())
    throw Error(ErrorCode::dim_mismatch, "vector count does not match metadata");
  ContributionTable table;
  table.languages = languages_in_order(meta);
  std::vector<std::vector<std::size_t>> members(table.languages.size());
  for (std::size_t i = 0; i < meta.size(); ++i) {
    const auto l = static_cast<std::size_t>(
        std::find(table.languages.begin(), table.languages.end(), meta[i].language) - table.languages.begin());
    members[l].push_back(i);
  }
  for (std::size_t l = 0; l < members.size(); ++l)
    if (members[l].size() < 2)
      throw Error(ErrorCode::insufficient, "language '" + table.languages[l] + "' has fewer than 2 samples");
  for (const auto& m : members)
    if (m.size() != members.front().size())
      throw Error(ErrorCode::unbalanced, "languages have unequal sample counts");
  if (members.empty()) throw Error(ErrorCode::insufficient, "no samples");

  table.samples_per_language = members.front().size();
  table.neurons = vectors.front().values.size();
  for (const auto& v : vectors) {
    if (v.values.size() != table.neurons) throw Error(ErrorCode::dim_mismatch, "vectors differ in dimension");
    if (!v.norm_applied) throw Error(ErrorCode::range, "vector '" + v.sample_id + "' is not normalized");
  }
  table.values.assign(table.languages.size() * table.neurons, 0.0);

  // sum_{i<j} a_i a_j == sum_j a_j * (a_0 + ... + a_{j-1}); one pass over the
  // samples per neuron, no pair tensor.
  parallel_for(table.neurons, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t l = 0; l < members.size(); ++l) {
      for (std::size_t k = begin; k < end; ++k) {
        double prefix = 0.0;
        double acc = 0.0;
        for (std::size_t idx : members[l]) {
          const double a = vectors[idx].values[k];
          acc += a * prefix;
          prefix += a;
        }
        table.values[l * table.neurons + k] = acc;
      }
    }
  });
  return table;
}

// (2 / (n (n - 1))) * sum_k contribution; equals the language's average
// within-language similarity.
inline double contribution_average(const ContributionTable& table, std::size_t language_index) {
  const double n = static_cast<double>(table.samples_per_language);
  double sum = 0.0;
  for (double v : table.row(language_index)) sum += v;
  return 2.0 * sum / (n * (n - 1.0));
}

// A neuron whose spread is at rounding level relative to its magnitude is
// treated as constant across languages.
inline constexpr double kDegenerateRelativeSpread = 1e-12;

inline ZScoreTable zscore_table(const ContributionTable& contribs, unsigned threads = 0) {
  const std::size_t nl = contribs.languages.size();
  if (nl < 2) throw Error(ErrorCode::insufficient, "z-scores need at least 2 languages");
  const std::size_t k_total = contribs.neurons;
  ZScoreTable z;
  z.languages = contribs.languages;
  z.neurons = k_total;
  z.values.assign(nl * k_total, 0.0);
  z.mean.assign(k_total, 0.0);
  z.stddev.assign(k_total, 0.0);
  std::vector<char> degenerate(k_total, 0);

  parallel_for(k_total, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      double mu = 0.0;
      double scale = 0.0;
      for (std::size_t l = 0; l < nl; ++l) {
        mu += contribs.at(l, k);
        scale = std::max(scale, std::abs(contribs.at(l, k)));
      }
      mu /= static_cast<double>(nl);
      double var = 0.0;
      for (std::size_t l = 0; l < nl; ++l) {
        const double d = contribs.at(l, k) - mu;
        var += d * d;
      }
      const double sigma = std::sqrt(var / static_cast<double>(nl));
      z.mean[k] = mu;
      z.stddev[k] = sigma;
      if (sigma == 0.0 || sigma <= kDegenerateRelativeSpread * scale) {
        degenerate[k] = 1;
        continue;
      }
      for (std::size_t l = 0; l < nl; ++l) z.values[l * k_total + k] = (contribs.at(l, k) - mu) / sigma;
    }
  });
  for (std::size_t k = 0; k < k_total; ++k)
    if (degenerate[k]) z.degenerate.push_back(k);
  return z;
}

// Neurons with z strictly above the threshold, per language.
inline KeyRegionSet select_key_regions(const ZScoreTable& z, double threshold, const TraceGeometry& geometry) {
  if (!(threshold > 0.0)) throw Error(ErrorCode::range, "threshold must be > 0");
  if (z.neurons != geometry.total_neurons())
    throw Error(ErrorCode::geometry, "z-score table width does not match geometry");
  KeyRegionSet set;
  set.threshold = threshold;
  set.geometry = geometry;
  set.languages = z.languages;
  set.regions.resize(z.languages.size());
  for (std::size_t l = 0; l < z.languages.size(); ++l)
    for (std::size_t k = 0; k < z.neurons; ++k)
      if (z.at(l, k) > threshold) set.regions[l].push_back(geometry.address(k));
  return set;
}

// Full pipeline from a balanced trace.
inline KeyRegionSet probe_trace(const ActivationTrace& trace, double threshold = kDefaultThreshold,
                                unsigned threads = 0) {
  const auto balance = validate_balanced(trace);
  if (!balance.ok) throw Error(ErrorCode::unbalanced, balance.violations.front());
  const auto vectors = trace_vectors(trace, std::nullopt, threads);
  const auto z = zscore_table(contribution_scores(vectors, trace.samples(), threads), threads);
  return select_key_regions(z, threshold, trace.geometry());
}

// counts[l][m]: neurons of language l's region in layer m.
inline std::vector<std::vector<std::size_t>> layer_histogram(const KeyRegionSet& regions,
                                                             const TraceGeometry& geometry) {
  std::vector<std::vector<std::size_t>> counts(regions.regions.size(),
                                               std::vector<std::size_t>(geometry.num_layers(), 0));
  for (std::size_t l = 0; l < regions.regions.size(); ++l) {
    for (const auto& a : regions.regions[l]) {
      if (!geometry.contains(a))
        throw Error(ErrorCode::geometry, "region neuron (" + std::to_string(a.layer) + ", " +
                                             std::to_string(a.index) + ") outside geometry");
      ++counts[l][a.layer];
    }
  }
  return counts;
}

struct LanguageSize {
  std::string language;
  std::size_t count = 0;
  double fraction = 0.0;
};

inline std::vector<LanguageSize> language_sizes(const KeyRegionSet& regions) {
  const double k = static_cast<double>(regions.geometry.total_neurons());
  std::vector<LanguageSize> out;
  for (std::size_t l = 0; l < regions.languages.size(); ++l) {
    const std::size_t c = regions.regions[l].size();
    out.push_back({regions.languages[l], c, k > 0 ? static_cast<double>(c) / k : 0.0});
  }
  return out;
}

// Percentage with one decimal, as in "3.2%".
inline std::string percent_1dp(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f%%", fraction * 100.0);
  return buf;
}

// Neurons key to one or more languages, and to two or more.
struct RegionOverlap {
  std::size_t union_size = 0;
  std::size_t shared = 0;
};

inline RegionOverlap region_overlap(const KeyRegionSet& regions) {
  std::map<NeuronAddress, std::size_t> hits;
  for (const auto& r : regions.regions)
    for (const auto& a : r) ++hits[a];
  RegionOverlap o;
  o.union_size = hits.size();
  for (const auto& [a, c] : hits)
    if (c > 1) ++o.shared;
  return o;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::ordered_json to_json(const KeyRegionSet& set) {
  nlohmann::ordered_json j;
  j["format_version"] = 1;
  j["threshold"] = round_sig9(set.threshold);
  j["model_name"] = set.geometry.model_name();
  j["num_layers"] = set.geometry.num_layers();
  j["neurons_per_layer"] = set.geometry.neurons_per_layer();
  nlohmann::ordered_json regions = nlohmann::ordered_json::object();
  for (std::size_t l = 0; l < set.languages.size(); ++l) {
    nlohmann::ordered_json list = nlohmann::ordered_json::array();
    for (const auto& a : set.regions[l]) list.push_back({a.layer, a.index});
    regions[set.languages[l]] = std::move(list);
  }
  j["regions"] = std::move(regions);
  j["sklr"] = set.sklr();
  const auto overlap = region_overlap(set);
  j["overlap"] = {{"union_size", overlap.union_size}, {"shared_neurons", overlap.shared}};
  return j;
}

inline std::vector<NeuronAddress> addresses_from_json(const nlohmann::ordered_json& list, const TraceGeometry& g) {
  if (!list.is_array()) throw Error(ErrorCode::format, "neuron list must be an array");
  std::vector<NeuronAddress> out;
  out.reserve(list.size());
  for (const auto& e : list) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number_integer() ||
        e[0].get<long long>() < 0 || e[1].get<long long>() < 0)
      throw Error(ErrorCode::format, "neuron entries must be [layer, index] pairs");
    NeuronAddress a{e[0].get<std::size_t>(), e[1].get<std::size_t>()};
    if (!g.contains(a))
      throw Error(ErrorCode::geometry, "neuron (" + std::to_string(a.layer) + ", " + std::to_string(a.index) +
                                           ") outside geometry");
    out.push_back(a);
  }
  return out;
}

inline KeyRegionSet regions_from_json(const nlohmann::ordered_json& j) {
  KeyRegionSet set;
  set.geometry = geometry_from_json(j);
  const auto& t = detail::require(j, "threshold");
  if (!t.is_number()) throw Error(ErrorCode::format, "threshold must be a number");
  set.threshold = t.get<double>();
  const auto& regions = detail::require(j, "regions");
  if (!regions.is_object()) throw Error(ErrorCode::format, "regions must be an object");
  for (const auto& [lang, list] : regions.items()) {
    set.languages.push_back(lang);
    auto addrs = addresses_from_json(list, set.geometry);
    std::sort(addrs.begin(), addrs.end());
    set.regions.push_back(std::move(addrs));
  }
  return set;
}

inline std::string histogram_csv(const KeyRegionSet& set, const std::vector<std::vector<std::size_t>>& counts) {
  std::string out = "language,layer,count\n";
  for (std::size_t l = 0; l < counts.size(); ++l)
    for (std::size_t m = 0; m < counts[l].size(); ++m)
      out += csv_field(set.languages[l]) + "," + std::to_string(m) + "," + std::to_string(counts[l][m]) + "\n";
  return out;
}

inline nlohmann::ordered_json to_json(const std::vector<LanguageSize>& sizes) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& s : sizes)
    j[s.language] = {{"count", s.count}, {"fraction", round_sig9(s.fraction)}, {"percent", percent_1dp(s.fraction)}};
  return j;
}

}  // namespace lingua
