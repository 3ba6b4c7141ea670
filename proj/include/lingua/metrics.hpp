#pragma once

// Language-region and semantic-alignment development scores over a
// similarity map, plus per-language average similarity and layer profiles.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lingua/activation.hpp"
#include "lingua/error.hpp"
#include "lingua/io.hpp"
#include "lingua/trace.hpp"

namespace lingua {

struct PairClass {
  bool same_language = false;
  bool same_semantics = false;
  bool is_self_pair = false;
};

inline PairClass classify(const SampleMeta& a, const SampleMeta& b, bool self) {
  return {a.language == b.language, a.semantic_id == b.semantic_id, self};
}

// Unordered pairs i<j per class.
struct PairCounts {
  std::size_t same_language_diff_semantics = 0;
  std::size_t diff_language_diff_semantics = 0;
  std::size_t diff_language_same_semantics = 0;
  std::size_t same_language_same_semantics = 0;

  std::size_t total() const noexcept {
    return same_language_diff_semantics + diff_language_diff_semantics + diff_language_same_semantics +
           same_language_same_semantics;
  }
};

struct MetricsReport {
  double lrds = 0.0;
  double sads = 0.0;
  std::vector<std::pair<std::string, double>> per_language_avg;
  PairCounts pair_counts;
  std::size_t num_languages = 0;
  std::size_t samples_per_language = 0;
  std::optional<std::size_t> layer;
};

struct LayerMetrics {
  std::size_t layer = 0;
  double lrds = 0.0;
  double sads = 0.0;
};

namespace detail {

struct PairSums {
  PairCounts counts;
  double same_lang_diff_sem = 0.0;
  double diff_lang_diff_sem = 0.0;
  double diff_lang_same_sem = 0.0;
};

inline void check_order(const SimilarityMap& map, std::span<const SampleMeta> meta) {
  if (map.size != meta.size())
    throw Error(ErrorCode::dim_mismatch, "similarity map has " + std::to_string(map.size) + " rows, metadata has " +
                                             std::to_string(meta.size()) + " samples");
  for (std::size_t i = 0; i < meta.size(); ++i)
    if (map.order[i] != meta[i].sample_id)
      throw Error(ErrorCode::dim_mismatch, "map row " + std::to_string(i) + " is '" + map.order[i] +
                                               "', metadata expects '" + meta[i].sample_id + "'");
}

// Balanced, L >= 2, n >= 2.
inline ValidationReport require_metric_input(std::span<const SampleMeta> meta) {
  auto report = validate_balanced(meta);
  if (!report.ok) {
    if (meta.empty()) throw Error(ErrorCode::insufficient, "no samples");
    throw Error(ErrorCode::unbalanced, report.violations.front());
  }
  if (report.languages.size() < 2)
    throw Error(ErrorCode::insufficient, "need at least 2 languages, have " + std::to_string(report.languages.size()));
  if (report.samples_per_language < 2)
    throw Error(ErrorCode::insufficient, "need at least 2 samples per language");
  return report;
}

inline PairSums pair_sums(const SimilarityMap& map, std::span<const SampleMeta> meta) {
  PairSums s;
  for (std::size_t i = 0; i < meta.size(); ++i) {
    for (std::size_t j = i + 1; j < meta.size(); ++j) {
      const auto cls = classify(meta[i], meta[j], false);
      const double v = map.at(i, j);
      if (cls.same_language && !cls.same_semantics) {
        s.same_lang_diff_sem += v;
        ++s.counts.same_language_diff_semantics;
      } else if (!cls.same_language && !cls.same_semantics) {
        s.diff_lang_diff_sem += v;
        ++s.counts.diff_language_diff_semantics;
      } else if (!cls.same_language && cls.same_semantics) {
        s.diff_lang_same_sem += v;
        ++s.counts.diff_language_same_semantics;
      } else {
        ++s.counts.same_language_same_semantics;
      }
    }
  }
  return s;
}

inline double mean_or_throw(double sum, std::size_t count, const char* what) {
  if (count == 0) throw Error(ErrorCode::insufficient, std::string("no pairs in class ") + what);
  return sum / static_cast<double>(count);
}

inline double lrds_from(const PairSums& s) {
  return mean_or_throw(s.same_lang_diff_sem, s.counts.same_language_diff_semantics, "same-language/different-semantics") -
         mean_or_throw(s.diff_lang_diff_sem, s.counts.diff_language_diff_semantics, "cross-language/different-semantics");
}

inline double sads_from(const PairSums& s) {
  return mean_or_throw(s.diff_lang_same_sem, s.counts.diff_language_same_semantics, "cross-language/same-semantics") -
         mean_or_throw(s.diff_lang_diff_sem, s.counts.diff_language_diff_semantics, "cross-language/different-semantics");
}

}  // namespace detail

// Mean same-language similarity minus mean cross-language similarity, both
// over pairs with different semantics.
inline double lrds(const SimilarityMap& map, std::span<const SampleMeta> meta) {
  detail::check_order(map, meta);
  detail::require_metric_input(meta);
  return detail::lrds_from(detail::pair_sums(map, meta));
}

// Mean same-semantics similarity minus mean different-semantics similarity,
// both over cross-language pairs.
inline double sads(const SimilarityMap& map, std::span<const SampleMeta> meta) {
  detail::check_order(map, meta);
  detail::require_metric_input(meta);
  return detail::sads_from(detail::pair_sums(map, meta));
}

inline double language_average_similarity(const SimilarityMap& map, std::span<const SampleMeta> meta,
                                          const std::string& language) {
  detail::check_order(map, meta);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < meta.size(); ++i)
    if (meta[i].language == language) rows.push_back(i);
  const std::size_t n = rows.size();
  if (n < 2) throw Error(ErrorCode::insufficient, "language '" + language + "' has fewer than 2 samples");
  double sum = 0.0;
  for (std::size_t a = 0; a + 1 < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b) sum += map.at(rows[a], rows[b]);
  return 2.0 * sum / (static_cast<double>(n) * static_cast<double>(n - 1));
}

inline MetricsReport compute_metrics(const SimilarityMap& map, std::span<const SampleMeta> meta) {
  detail::check_order(map, meta);
  const auto balance = detail::require_metric_input(meta);
  const auto sums = detail::pair_sums(map, meta);
  MetricsReport r;
  r.lrds = detail::lrds_from(sums);
  r.sads = detail::sads_from(sums);
  r.pair_counts = sums.counts;
  r.num_languages = balance.languages.size();
  r.samples_per_language = balance.samples_per_language;
  r.layer = map.layer;
  for (const auto& l : balance.languages) r.per_language_avg.emplace_back(l, language_average_similarity(map, meta, l));
  return r;
}

inline MetricsReport trace_metrics(const ActivationTrace& trace, unsigned threads = 0) {
  detail::require_metric_input(trace.samples());
  return compute_metrics(trace_similarity(trace, std::nullopt, threads), trace.samples());
}

// LRDS and SADS of every layer's own similarity map.
inline std::vector<LayerMetrics> layerwise_profile(const ActivationTrace& trace, unsigned threads = 0) {
  detail::require_metric_input(trace.samples());
  std::vector<LayerMetrics> profile;
  for (std::size_t m = 0; m < trace.geometry().num_layers(); ++m) {
    const auto map = trace_similarity(trace, m, threads);
    const auto sums = detail::pair_sums(map, trace.samples());
    profile.push_back({m, detail::lrds_from(sums), detail::sads_from(sums)});
  }
  return profile;
}

inline nlohmann::ordered_json to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["scope"] = r.layer ? "layer" : "full_model";
  if (r.layer) j["layer"] = *r.layer;
  j["lrds"] = round_sig9(r.lrds);
  j["sads"] = round_sig9(r.sads);
  j["num_languages"] = r.num_languages;
  j["samples_per_language"] = r.samples_per_language;
  nlohmann::ordered_json avg = nlohmann::ordered_json::object();
  for (const auto& [l, v] : r.per_language_avg) avg[l] = round_sig9(v);
  j["per_language_avg"] = avg;
  j["pair_counts"] = {{"same_language_diff_semantics", r.pair_counts.same_language_diff_semantics},
                      {"diff_language_diff_semantics", r.pair_counts.diff_language_diff_semantics},
                      {"diff_language_same_semantics", r.pair_counts.diff_language_same_semantics},
                      {"same_language_same_semantics", r.pair_counts.same_language_same_semantics}};
  return j;
}

inline nlohmann::ordered_json to_json(const std::vector<LayerMetrics>& profile) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& p : profile) j.push_back({{"layer", p.layer}, {"lrds", round_sig9(p.lrds)}, {"sads", round_sig9(p.sads)}});
  return j;
}

inline std::string profile_csv(const std::vector<LayerMetrics>& profile) {
  std::string out = "layer,lrds,sads\n";
  for (const auto& p : profile)
    out += std::to_string(p.layer) + "," + format_double(p.lrds) + "," + format_double(p.sads) + "\n";
  return out;
}

}  // namespace lingua
