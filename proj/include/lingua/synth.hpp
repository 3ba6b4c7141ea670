#pragma once

// Synthetic traces with planted language regions and shared semantic
// directions. Every value is a pure function of (spec, seed).
//
// Per token, neuron k of a sample in language l with semantic id s:
//   semantic_weight * u_s[k]      (k in the semantic layers)
// + language_boost                (k in l's planted region)
// + noise_sigma * N(0, 1)
// with u_s ~ N(0, I) drawn once per semantic id.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lingua/error.hpp"
#include "lingua/io.hpp"
#include "lingua/masks.hpp"
#include "lingua/parallel.hpp"
#include "lingua/probing.hpp"
#include "lingua/trace.hpp"

namespace lingua {

struct SynthSpec {
  TraceGeometry geometry;
  std::vector<std::string> languages;
  std::size_t samples_per_language = 0;
  std::vector<std::string> semantic_ids;
  std::size_t region_size = 0;
  std::vector<std::size_t> region_layers;    // empty: every layer
  std::vector<std::size_t> semantic_layers;  // empty: every layer
  double language_boost = 0.0;
  double semantic_weight = 0.0;
  double noise_sigma = 1.0;
  std::size_t tokens_per_sample = 1;
  StorageMode storage_mode = StorageMode::pooled;
};

inline std::vector<std::string> numbered_ids(const std::string& prefix, std::size_t count) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < count; ++i) ids.push_back(prefix + std::to_string(i));
  return ids;
}

// M=4 x 256 (K=1024), 4 languages, 50 semantic ids, 32-neuron regions,
// 8 tokens per sample.
inline SynthSpec desk_spec(double language_boost = 5.0, double semantic_weight = 1.0) {
  SynthSpec s;
  s.geometry = TraceGeometry::uniform("synthetic-desk", 4, 256);
  s.languages = {"en", "zh", "fr", "ar"};
  s.samples_per_language = 50;
  s.semantic_ids = numbered_ids("v", 50);
  s.region_size = 32;
  s.language_boost = language_boost;
  s.semantic_weight = semantic_weight;
  s.noise_sigma = 1.0;
  s.tokens_per_sample = 8;
  return s;
}

struct SemanticBasis {
  std::string semantic_id;
  std::uint64_t stream = 0;
  std::size_t support_size = 0;
};

struct GroundTruth {
  std::uint64_t seed = 0;
  TraceGeometry geometry;
  std::vector<std::string> languages;
  std::vector<std::vector<NeuronAddress>> planted;  // parallel to languages, ascending
  std::vector<SemanticBasis> semantic_basis;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

enum class Stream : std::uint64_t { regions = 1, semantic = 2, noise = 3 };

inline std::uint64_t stream_seed(std::uint64_t seed, Stream purpose, std::uint64_t index) {
  return splitmix64(splitmix64(seed ^ (static_cast<std::uint64_t>(purpose) << 56)) + index);
}

// Box-Muller on 53-bit uniforms; bit-reproducible wherever mt19937_64 and
// libm agree.
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) : engine_(seed) {}

  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline std::vector<std::size_t> layer_neurons(const TraceGeometry& g, const std::vector<std::size_t>& layers) {
  std::vector<std::size_t> out;
  const auto add = [&](std::size_t m) {
    for (std::size_t i = 0; i < g.layer_width(m); ++i) out.push_back(g.layer_offset(m) + i);
  };
  if (layers.empty()) {
    for (std::size_t m = 0; m < g.num_layers(); ++m) add(m);
  } else {
    for (std::size_t m : std::set<std::size_t>(layers.begin(), layers.end())) add(m);
  }
  return out;
}

inline void validate(const SynthSpec& s) {
  const auto fail = [](const std::string& msg) { throw Error(ErrorCode::spec, msg); };
  if (s.geometry.total_neurons() == 0) fail("geometry is empty");
  if (s.languages.empty()) fail("no languages");
  if (std::set<std::string>(s.languages.begin(), s.languages.end()).size() != s.languages.size())
    fail("language codes must be unique");
  if (s.samples_per_language == 0) fail("samples_per_language must be positive");
  if (s.semantic_ids.size() != s.samples_per_language) fail("semantic_ids must have exactly n entries");
  if (std::set<std::string>(s.semantic_ids.begin(), s.semantic_ids.end()).size() != s.semantic_ids.size())
    fail("semantic ids must be unique");
  for (std::size_t m : s.region_layers)
    if (m >= s.geometry.num_layers()) fail("region layer " + std::to_string(m) + " out of range");
  for (std::size_t m : s.semantic_layers)
    if (m >= s.geometry.num_layers()) fail("semantic layer " + std::to_string(m) + " out of range");
  const std::size_t candidates = layer_neurons(s.geometry, s.region_layers).size();
  if (s.region_size * s.languages.size() > candidates)
    fail("region_size * L exceeds the neurons available in the region layers");
  if (!(s.language_boost >= 0.0)) fail("language_boost must be >= 0");
  if (!(s.semantic_weight >= 0.0)) fail("semantic_weight must be >= 0");
  if (!(s.noise_sigma > 0.0)) fail("noise_sigma must be > 0");
  if (s.tokens_per_sample == 0) fail("tokens_per_sample must be positive");
}

}  // namespace detail

struct SynthResult {
  ActivationTrace trace;
  GroundTruth truth;
};

// Samples are language-major (all of language 0, then language 1, ...), each
// block in semantic_ids order; sample i draws noise from its own substream.
inline SynthResult generate(const SynthSpec& spec, std::uint64_t seed, unsigned threads = 0) {
  detail::validate(spec);
  const auto& g = spec.geometry;
  const std::size_t k = g.total_neurons();
  const std::size_t nl = spec.languages.size();
  const std::size_t n = spec.samples_per_language;
  const std::size_t tokens = spec.tokens_per_sample;

  GroundTruth truth;
  truth.seed = seed;
  truth.geometry = g;
  truth.languages = spec.languages;

  // Disjoint regions: consecutive blocks of a shuffled candidate list.
  auto candidates = detail::layer_neurons(g, spec.region_layers);
  std::mt19937_64 region_engine(detail::stream_seed(seed, detail::Stream::regions, 0));
  const std::size_t planted_total = spec.region_size * nl;
  for (std::size_t i = 0; i < planted_total; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(detail::uniform_below(region_engine, candidates.size() - i));
    std::swap(candidates[i], candidates[j]);
  }
  std::vector<std::vector<char>> in_region(nl, std::vector<char>(k, 0));
  for (std::size_t l = 0; l < nl; ++l) {
    std::vector<std::size_t> flats(candidates.begin() + static_cast<std::ptrdiff_t>(l * spec.region_size),
                                   candidates.begin() + static_cast<std::ptrdiff_t>((l + 1) * spec.region_size));
    std::sort(flats.begin(), flats.end());
    std::vector<NeuronAddress> addrs;
    for (std::size_t f : flats) {
      in_region[l][f] = 1;
      addrs.push_back(g.address(f));
    }
    truth.planted.push_back(std::move(addrs));
  }

  const auto semantic_support = detail::layer_neurons(g, spec.semantic_layers);
  std::vector<std::vector<double>> semantic(n, std::vector<double>(k, 0.0));
  for (std::size_t s = 0; s < n; ++s) {
    const std::uint64_t stream = detail::stream_seed(seed, detail::Stream::semantic, s);
    detail::NormalStream normal(stream);
    for (std::size_t f : semantic_support) semantic[s][f] = normal.next();
    truth.semantic_basis.push_back({spec.semantic_ids[s], stream, semantic_support.size()});
  }

  std::vector<SampleMeta> samples;
  samples.reserve(nl * n);
  for (std::size_t l = 0; l < nl; ++l)
    for (std::size_t s = 0; s < n; ++s)
      samples.push_back({spec.languages[l] + "/" + spec.semantic_ids[s], spec.languages[l], spec.semantic_ids[s], tokens});

  const std::size_t per_sample = spec.storage_mode == StorageMode::pooled ? k : k * tokens;
  std::vector<float> data(samples.size() * per_sample);
  parallel_for(samples.size(), threads, [&](std::size_t begin, std::size_t end) {
    std::vector<float> token_stack(tokens * k);
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t l = i / n;
      const std::size_t s = i % n;
      detail::NormalStream noise(detail::stream_seed(seed, detail::Stream::noise, i));
      for (std::size_t t = 0; t < tokens; ++t) {
        for (std::size_t f = 0; f < k; ++f) {
          double v = spec.semantic_weight * semantic[s][f] + spec.noise_sigma * noise.next();
          if (in_region[l][f]) v += spec.language_boost;
          token_stack[t * k + f] = static_cast<float>(v);
        }
      }
      float* dst = data.data() + i * per_sample;
      if (spec.storage_mode == StorageMode::per_token) {
        std::copy(token_stack.begin(), token_stack.end(), dst);
      } else {
        const auto pooled = pool_sample(g, std::span<const float>(token_stack), tokens);
        for (std::size_t f = 0; f < k; ++f) dst[f] = static_cast<float>(pooled[f]);
      }
    }
  });

  nlohmann::ordered_json metadata;
  metadata["generator"] = {{"name", "lingua-synth"}, {"seed", seed}};
  return {ActivationTrace(g, spec.storage_mode, std::move(samples), std::move(data), std::move(metadata)),
          std::move(truth)};
}

struct RecoveryScore {
  std::string language;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline RecoveryScore score_sets(std::string language, const std::vector<NeuronAddress>& recovered,
                                const std::vector<NeuronAddress>& planted) {
  const std::set<NeuronAddress> truth(planted.begin(), planted.end());
  const std::set<NeuronAddress> found(recovered.begin(), recovered.end());
  std::size_t hit = 0;
  for (const auto& a : found) hit += truth.count(a);
  RecoveryScore r{std::move(language)};
  if (found.empty()) r.precision = truth.empty() ? 1.0 : 0.0;
  else r.precision = static_cast<double>(hit) / static_cast<double>(found.size());
  if (truth.empty()) r.recall = found.empty() ? 1.0 : 0.0;
  else r.recall = static_cast<double>(hit) / static_cast<double>(truth.size());
  r.f1 = (r.precision + r.recall) > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

// One score per ground-truth language; a language absent from `regions`
// counts as an empty recovery.
inline std::vector<RecoveryScore> score_recovery(const KeyRegionSet& regions, const GroundTruth& truth) {
  if (!regions.geometry.same_shape(truth.geometry))
    throw Error(ErrorCode::geometry, "region geometry does not match ground truth");
  static const std::vector<NeuronAddress> none;
  std::vector<RecoveryScore> out;
  for (std::size_t l = 0; l < truth.languages.size(); ++l) {
    const auto it = std::find(regions.languages.begin(), regions.languages.end(), truth.languages[l]);
    const auto& recovered =
        it == regions.languages.end() ? none : regions.regions[static_cast<std::size_t>(it - regions.languages.begin())];
    out.push_back(score_sets(truth.languages[l], recovered, truth.planted[l]));
  }
  return out;
}

inline nlohmann::ordered_json to_json(const SynthSpec& s) {
  nlohmann::ordered_json j;
  j["model_name"] = s.geometry.model_name();
  j["num_layers"] = s.geometry.num_layers();
  j["neurons_per_layer"] = s.geometry.neurons_per_layer();
  j["languages"] = s.languages;
  j["samples_per_language"] = s.samples_per_language;
  j["region_size"] = s.region_size;
  j["region_layers"] = s.region_layers;
  j["semantic_layers"] = s.semantic_layers;
  j["language_boost"] = round_sig9(s.language_boost);
  j["semantic_weight"] = round_sig9(s.semantic_weight);
  j["noise_sigma"] = round_sig9(s.noise_sigma);
  j["tokens_per_sample"] = s.tokens_per_sample;
  j["storage_mode"] = to_string(s.storage_mode);
  return j;
}

inline nlohmann::ordered_json to_json(const GroundTruth& t, const SynthSpec& spec) {
  nlohmann::ordered_json j;
  j["format_version"] = 1;
  j["seed"] = t.seed;
  j["spec"] = to_json(spec);
  nlohmann::ordered_json planted = nlohmann::ordered_json::object();
  for (std::size_t l = 0; l < t.languages.size(); ++l) {
    nlohmann::ordered_json list = nlohmann::ordered_json::array();
    for (const auto& a : t.planted[l]) list.push_back({a.layer, a.index});
    planted[t.languages[l]] = std::move(list);
  }
  j["planted"] = std::move(planted);
  nlohmann::ordered_json basis = nlohmann::ordered_json::object();
  for (const auto& b : t.semantic_basis)
    basis[b.semantic_id] = {{"stream_seed", b.stream}, {"support_size", b.support_size}, {"distribution", "normal(0,1)"}};
  j["semantic_basis"] = std::move(basis);
  return j;
}

inline GroundTruth ground_truth_from_json(const nlohmann::ordered_json& j) {
  GroundTruth t;
  t.seed = detail::require(j, "seed").get<std::uint64_t>();
  t.geometry = geometry_from_json(detail::require(j, "spec"));
  const auto& planted = detail::require(j, "planted");
  if (!planted.is_object()) throw Error(ErrorCode::format, "planted must be an object");
  for (const auto& [lang, list] : planted.items()) {
    t.languages.push_back(lang);
    auto addrs = addresses_from_json(list, t.geometry);
    std::sort(addrs.begin(), addrs.end());
    t.planted.push_back(std::move(addrs));
  }
  return t;
}

// Trace directory plus ground_truth.json.
inline void write_synthetic(const SynthResult& result, const SynthSpec& spec, const std::filesystem::path& dir) {
  std::vector<char> blob;
  detail::encode_f32le(result.trace.raw(), blob);
  write_directory_atomic(dir, {{"manifest.json", manifest_json(result.trace).dump(2) + "\n"},
                               {"activations.bin", std::string(blob.begin(), blob.end())},
                               {"ground_truth.json", to_json(result.truth, spec).dump(2) + "\n"}});
}

}  // namespace lingua
