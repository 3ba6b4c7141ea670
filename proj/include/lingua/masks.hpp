#pragma once

// Deactivation masks (key-region and seeded random baselines) and the
// perplexity-increase table built from masked evaluation runs.
//
// Mask contract for consumers: every listed neuron's hidden activation is
// forced to zero at every token position before the following projection.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "lingua/error.hpp"
#include "lingua/io.hpp"
#include "lingua/probing.hpp"
#include "lingua/trace.hpp"

namespace lingua {

// Seeded sampler identifier written into every random mask.
inline constexpr const char* kRandomSampler = "fisher-yates-prefix/mt19937_64/v1";

struct KeyRegionProvenance {
  std::string language;
  double threshold = kDefaultThreshold;
};

struct RandomProvenance {
  double fraction = 0.0;
  std::uint64_t seed = 0;
};

struct DeactivationMask {
  TraceGeometry geometry;
  std::vector<NeuronAddress> neurons;  // ascending, unique
  std::variant<KeyRegionProvenance, RandomProvenance> provenance;

  std::size_t size() const noexcept { return neurons.size(); }
};

namespace detail {

// Uniform integer in [0, range) by rejection; independent of any standard
// library distribution so the stream is portable.
inline std::uint64_t uniform_below(std::mt19937_64& engine, std::uint64_t range) {
  const std::uint64_t reject_below = (0 - range) % range;  // 2^64 mod range
  std::uint64_t r = engine();
  while (r < reject_below) r = engine();
  return r % range;
}

inline std::vector<NeuronAddress> canonical(std::vector<NeuronAddress> neurons, const TraceGeometry& g) {
  for (const auto& a : neurons)
    if (!g.contains(a))
      throw Error(ErrorCode::geometry, "mask neuron (" + std::to_string(a.layer) + ", " + std::to_string(a.index) +
                                           ") outside geometry");
  std::sort(neurons.begin(), neurons.end());
  neurons.erase(std::unique(neurons.begin(), neurons.end()), neurons.end());
  return neurons;
}

}  // namespace detail

inline DeactivationMask region_mask(const KeyRegionSet& regions, const std::string& language) {
  const auto& region = regions.region(language);
  return {regions.geometry, detail::canonical(region, regions.geometry),
          KeyRegionProvenance{language, regions.threshold}};
}

inline std::size_t random_mask_size(std::size_t total_neurons, double fraction) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(total_neurons)));
}

// round(fraction * K) distinct neurons: the first draws of a partial
// Fisher-Yates shuffle of [0, K) driven by mt19937_64(seed).
inline DeactivationMask random_mask(const TraceGeometry& geometry, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw Error(ErrorCode::range, "fraction must be in (0, 1]");
  const std::size_t k = geometry.total_neurons();
  const std::size_t count = random_mask_size(k, fraction);
  std::vector<std::size_t> pool(k);
  for (std::size_t i = 0; i < k; ++i) pool[i] = i;
  std::mt19937_64 engine(seed);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(detail::uniform_below(engine, k - i));
    std::swap(pool[i], pool[j]);
  }
  std::sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count));
  DeactivationMask mask{geometry, {}, RandomProvenance{fraction, seed}};
  mask.neurons.reserve(count);
  for (std::size_t i = 0; i < count; ++i) mask.neurons.push_back(geometry.address(pool[i]));
  return mask;
}

// Zeroes the masked neurons in a token-major activation buffer (any number
// of K-wide rows).
template <typename T>
void apply_mask(const DeactivationMask& mask, const TraceGeometry& geometry, std::span<T> activations) {
  if (!mask.geometry.same_shape(geometry))
    throw Error(ErrorCode::geometry, "mask geometry does not match target geometry");
  const std::size_t k = geometry.total_neurons();
  if (activations.size() % k != 0) throw Error(ErrorCode::geometry, "activation buffer is not a multiple of K");
  for (std::size_t row = 0; row < activations.size(); row += k)
    for (const auto& a : mask.neurons) activations[row + geometry.flat(a)] = T{0};
}

inline nlohmann::ordered_json to_json(const DeactivationMask& mask) {
  nlohmann::ordered_json j;
  j["format_version"] = 1;
  j["model_name"] = mask.geometry.model_name();
  j["num_layers"] = mask.geometry.num_layers();
  j["neurons_per_layer"] = mask.geometry.neurons_per_layer();
  if (const auto* kr = std::get_if<KeyRegionProvenance>(&mask.provenance)) {
    j["provenance"] = {{"kind", "key_region"}, {"language", kr->language}, {"threshold", round_sig9(kr->threshold)}};
  } else {
    const auto& rp = std::get<RandomProvenance>(mask.provenance);
    j["provenance"] = {{"kind", "random"}, {"fraction", rp.fraction}, {"seed", rp.seed}, {"sampler", kRandomSampler}};
  }
  j["size"] = mask.neurons.size();
  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  for (const auto& a : mask.neurons) list.push_back({a.layer, a.index});
  j["neurons"] = std::move(list);
  return j;
}

inline DeactivationMask mask_from_json(const nlohmann::ordered_json& j) {
  if (detail::require_uint(j, "format_version") != 1) throw Error(ErrorCode::format, "unsupported mask format_version");
  DeactivationMask mask;
  mask.geometry = geometry_from_json(j);
  const auto& p = detail::require(j, "provenance");
  const std::string kind = detail::require_string(p, "kind");
  if (kind == "key_region") {
    const auto& t = detail::require(p, "threshold");
    if (!t.is_number()) throw Error(ErrorCode::format, "provenance.threshold must be a number");
    mask.provenance = KeyRegionProvenance{detail::require_string(p, "language"), t.get<double>()};
  } else if (kind == "random") {
    const auto& f = detail::require(p, "fraction");
    if (!f.is_number()) throw Error(ErrorCode::format, "provenance.fraction must be a number");
    mask.provenance = RandomProvenance{f.get<double>(), detail::require(p, "seed").get<std::uint64_t>()};
  } else {
    throw Error(ErrorCode::format, "unknown provenance kind '" + kind + "'");
  }
  auto neurons = addresses_from_json(detail::require(j, "neurons"), mask.geometry);
  const std::size_t declared = neurons.size();
  mask.neurons = detail::canonical(std::move(neurons), mask.geometry);
  if (mask.neurons.size() != declared) throw Error(ErrorCode::format, "mask lists a neuron more than once");
  return mask;
}

// ---------------------------------------------------------------------------
// Perplexity deltas

struct PerplexityRun {
  std::string label;
  std::optional<std::string> masked_language;  // set for key-region masks
  std::vector<std::pair<std::string, double>> perplexity;
  std::optional<std::size_t> neuron_count;
};

struct PerplexityDeltaTable {
  std::vector<std::string> languages;
  std::vector<double> baseline;                  // parallel to languages
  std::vector<PerplexityRun> runs;
  std::vector<std::vector<double>> masked;       // [run][language]
  std::vector<std::vector<double>> deltas;       // percent, [run][language]
  std::vector<std::optional<bool>> diagonal_dominant;  // per run
};

inline double percent_increase(double baseline, double masked) { return (masked - baseline) / baseline * 100.0; }

inline PerplexityDeltaTable perplexity_delta_table(const std::vector<std::pair<std::string, double>>& baseline,
                                                   const std::vector<PerplexityRun>& runs) {
  PerplexityDeltaTable t;
  std::map<std::string, std::size_t> index;
  for (const auto& [lang, ppl] : baseline) {
    if (!(ppl > 0.0)) throw Error(ErrorCode::nonpositive, "baseline perplexity for '" + lang + "' is not positive");
    if (!index.emplace(lang, t.languages.size()).second)
      throw Error(ErrorCode::language_set_mismatch, "baseline lists '" + lang + "' twice");
    t.languages.push_back(lang);
    t.baseline.push_back(ppl);
  }
  for (const auto& run : runs) {
    std::vector<double> masked(t.languages.size(), 0.0);
    std::vector<char> seen(t.languages.size(), 0);
    for (const auto& [lang, ppl] : run.perplexity) {
      const auto it = index.find(lang);
      if (it == index.end() || seen[it->second])
        throw Error(ErrorCode::language_set_mismatch, "run '" + run.label + "' language set differs from baseline");
      if (!(ppl > 0.0))
        throw Error(ErrorCode::nonpositive, "run '" + run.label + "' perplexity for '" + lang + "' is not positive");
      seen[it->second] = 1;
      masked[it->second] = ppl;
    }
    if (std::count(seen.begin(), seen.end(), 1) != static_cast<std::ptrdiff_t>(t.languages.size()))
      throw Error(ErrorCode::language_set_mismatch, "run '" + run.label + "' does not cover every baseline language");

    std::vector<double> deltas(t.languages.size());
    for (std::size_t l = 0; l < t.languages.size(); ++l) deltas[l] = percent_increase(t.baseline[l], masked[l]);

    std::optional<bool> dominant;
    if (run.masked_language) {
      const auto it = index.find(*run.masked_language);
      if (it == index.end())
        throw Error(ErrorCode::language_set_mismatch, "masked language '" + *run.masked_language + "' not in baseline");
      bool d = true;
      for (std::size_t l = 0; l < deltas.size(); ++l)
        if (l != it->second && !(deltas[it->second] > deltas[l])) d = false;
      dominant = d;
    }
    t.runs.push_back(run);
    t.masked.push_back(std::move(masked));
    t.deltas.push_back(std::move(deltas));
    t.diagonal_dominant.push_back(dominant);
  }
  return t;
}

// Rows: evaluated language; columns: baseline then one per mask.
inline std::string delta_table_csv(const PerplexityDeltaTable& t) {
  std::string out = "language,baseline_perplexity";
  for (const auto& r : t.runs) out += "," + csv_field(r.label);
  out += "\n";
  for (std::size_t l = 0; l < t.languages.size(); ++l) {
    out += csv_field(t.languages[l]) + "," + format_double(t.baseline[l]);
    for (std::size_t r = 0; r < t.runs.size(); ++r) out += "," + format_double(t.deltas[r][l]);
    out += "\n";
  }
  const bool counts = std::any_of(t.runs.begin(), t.runs.end(), [](const auto& r) { return r.neuron_count.has_value(); });
  if (counts) {
    out += "key_neuron_number,";
    for (const auto& r : t.runs) out += "," + (r.neuron_count ? std::to_string(*r.neuron_count) : std::string());
    out += "\n";
  }
  return out;
}

// Unrounded values.
inline nlohmann::ordered_json to_json(const PerplexityDeltaTable& t) {
  nlohmann::ordered_json j;
  j["languages"] = t.languages;
  nlohmann::ordered_json base = nlohmann::ordered_json::object();
  for (std::size_t l = 0; l < t.languages.size(); ++l) base[t.languages[l]] = t.baseline[l];
  j["baseline"] = base;
  nlohmann::ordered_json runs = nlohmann::ordered_json::array();
  for (std::size_t r = 0; r < t.runs.size(); ++r) {
    nlohmann::ordered_json run;
    run["label"] = t.runs[r].label;
    run["masked_language"] = t.runs[r].masked_language ? nlohmann::ordered_json(*t.runs[r].masked_language)
                                                       : nlohmann::ordered_json(nullptr);
    if (t.runs[r].neuron_count) run["neuron_count"] = *t.runs[r].neuron_count;
    nlohmann::ordered_json ppl = nlohmann::ordered_json::object();
    nlohmann::ordered_json delta = nlohmann::ordered_json::object();
    for (std::size_t l = 0; l < t.languages.size(); ++l) {
      ppl[t.languages[l]] = t.masked[r][l];
      delta[t.languages[l]] = t.deltas[r][l];
    }
    run["perplexity"] = ppl;
    run["delta_percent"] = delta;
    run["diagonal_dominant"] = t.diagonal_dominant[r] ? nlohmann::ordered_json(*t.diagonal_dominant[r])
                                                      : nlohmann::ordered_json(nullptr);
    runs.push_back(std::move(run));
  }
  j["runs"] = std::move(runs);
  return j;
}

namespace detail {

inline std::vector<std::pair<std::string, double>> perplexity_map(const nlohmann::ordered_json& j, const std::string& what) {
  if (!j.is_object()) throw Error(ErrorCode::format, what + " must be an object of language -> perplexity");
  std::vector<std::pair<std::string, double>> out;
  for (const auto& [lang, v] : j.items()) {
    if (!v.is_number()) throw Error(ErrorCode::format, what + "." + lang + " must be a number");
    out.emplace_back(lang, v.get<double>());
  }
  return out;
}

}  // namespace detail

// {baseline: {lang: ppl}, runs: [{label, masked_language?, neuron_count?, perplexity: {lang: ppl}}]}
inline PerplexityDeltaTable delta_table_from_json(const nlohmann::ordered_json& j) {
  const auto baseline = detail::perplexity_map(detail::require(j, "baseline"), "baseline");
  const auto& runs_json = detail::require(j, "runs");
  if (!runs_json.is_array()) throw Error(ErrorCode::format, "runs must be an array");
  std::vector<PerplexityRun> runs;
  for (const auto& rj : runs_json) {
    PerplexityRun run;
    run.label = detail::require_string(rj, "label");
    if (rj.contains("masked_language") && !rj["masked_language"].is_null())
      run.masked_language = detail::require_string(rj, "masked_language");
    if (rj.contains("neuron_count")) run.neuron_count = detail::require_uint(rj, "neuron_count");
    run.perplexity = detail::perplexity_map(detail::require(rj, "perplexity"), "runs[" + run.label + "].perplexity");
    runs.push_back(std::move(run));
  }
  return perplexity_delta_table(baseline, runs);
}

}  // namespace lingua
