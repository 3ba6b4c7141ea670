#pragma once

// Normalized activation vectors and cosine-similarity maps, over the whole
// model or a single layer.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lingua/error.hpp"
#include "lingua/io.hpp"
#include "lingua/parallel.hpp"
#include "lingua/trace.hpp"

namespace lingua {

inline constexpr double kZeroNormFloor = 1e-12;

struct ActivationVector {
  std::string sample_id;
  std::vector<double> values;
  bool norm_applied = false;
};

namespace detail {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline ActivationVector normalized(std::string sample_id, std::span<const double> raw) {
  const double norm = std::sqrt(dot(raw, raw));
  if (!(norm >= kZeroNormFloor))
    throw Error(ErrorCode::zero_vector, "sample '" + sample_id + "' has zero activation norm");
  ActivationVector v{std::move(sample_id), std::vector<double>(raw.begin(), raw.end()), true};
  for (auto& x : v.values) x /= norm;
  return v;
}

}  // namespace detail

// Concatenation of the per-layer means (already laid out in layer order),
// scaled to unit Euclidean norm.
inline ActivationVector build_vector(const TraceGeometry& geometry, std::span<const double> pooled,
                                     std::string sample_id = {}) {
  if (pooled.size() != geometry.total_neurons())
    throw Error(ErrorCode::geometry, "pooled sample has " + std::to_string(pooled.size()) +
                                         " values, geometry has K=" +
                                         std::to_string(geometry.total_neurons()));
  return detail::normalized(std::move(sample_id), pooled);
}

// Layer `layer` of the pooled sample, normalized on its own.
inline ActivationVector layer_slice_vector(const TraceGeometry& geometry, std::span<const double> pooled,
                                           std::size_t layer, std::string sample_id = {}) {
  if (layer >= geometry.num_layers())
    throw Error(ErrorCode::range, "layer " + std::to_string(layer) + " >= M=" +
                                      std::to_string(geometry.num_layers()));
  if (pooled.size() != geometry.total_neurons())
    throw Error(ErrorCode::geometry, "pooled sample does not match geometry");
  return detail::normalized(std::move(sample_id),
                            pooled.subspan(geometry.layer_offset(layer), geometry.layer_width(layer)));
}

// One vector per trace sample, in trace order. `layer` selects a layer slice.
inline std::vector<ActivationVector> trace_vectors(const ActivationTrace& trace,
                                                   std::optional<std::size_t> layer = std::nullopt,
                                                   unsigned threads = 0) {
  if (layer && *layer >= trace.geometry().num_layers())
    throw Error(ErrorCode::range, "layer " + std::to_string(*layer) + " out of range");
  std::vector<ActivationVector> out(trace.sample_count());
  parallel_for(trace.sample_count(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto pooled = trace.pooled(i);
      const auto& id = trace.samples()[i].sample_id;
      out[i] = layer ? layer_slice_vector(trace.geometry(), pooled, *layer, id)
                     : build_vector(trace.geometry(), pooled, id);
    }
  });
  return out;
}

struct SimilarityMap {
  std::vector<std::string> order;
  std::size_t size = 0;
  std::vector<double> values;            // row-major size x size
  std::optional<std::size_t> layer;      // nullopt: full model

  double at(std::size_t i, std::size_t j) const { return values[i * size + j]; }
};

// S_ij = a_i . a_j for unit vectors. Each entry is one sequential dot
// product, so the result is identical for every worker count.
inline SimilarityMap similarity_map(std::span<const ActivationVector> vectors, unsigned threads = 0,
                                    std::optional<std::size_t> layer = std::nullopt) {
  if (vectors.size() < 2) throw Error(ErrorCode::insufficient, "similarity map needs at least 2 vectors");
  const std::size_t dim = vectors.front().values.size();
  for (const auto& v : vectors) {
    if (v.values.size() != dim)
      throw Error(ErrorCode::dim_mismatch, "vector '" + v.sample_id + "' has dimension " +
                                               std::to_string(v.values.size()) + ", expected " +
                                               std::to_string(dim));
    if (!v.norm_applied) throw Error(ErrorCode::range, "vector '" + v.sample_id + "' is not normalized");
  }
  SimilarityMap map;
  map.size = vectors.size();
  map.layer = layer;
  map.values.assign(map.size * map.size, 0.0);
  for (const auto& v : vectors) map.order.push_back(v.sample_id);

  const std::size_t n = map.size;
  // Rows interleave short and long upper-triangle work when partitioned.
  parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      const std::size_t i = (r % 2 == 0) ? r / 2 : n - 1 - r / 2;
      for (std::size_t j = i; j < n; ++j) {
        const double s = detail::dot(vectors[i].values, vectors[j].values);
        map.values[i * n + j] = s;
        map.values[j * n + i] = s;
      }
    }
  });
  return map;
}

inline SimilarityMap trace_similarity(const ActivationTrace& trace, std::optional<std::size_t> layer = std::nullopt,
                                      unsigned threads = 0) {
  const auto vectors = trace_vectors(trace, layer, threads);
  return similarity_map(vectors, threads, layer);
}

// Applies a row/column permutation: result(i, j) = map(perm[i], perm[j]).
inline SimilarityMap reorder(const SimilarityMap& map, std::span<const std::size_t> perm) {
  if (perm.size() != map.size) throw Error(ErrorCode::dim_mismatch, "permutation size mismatch");
  SimilarityMap out;
  out.size = map.size;
  out.layer = map.layer;
  out.values.resize(map.values.size());
  for (std::size_t i = 0; i < map.size; ++i) {
    out.order.push_back(map.order.at(perm[i]));
    for (std::size_t j = 0; j < map.size; ++j) out.values[i * map.size + j] = map.at(perm[i], perm[j]);
  }
  return out;
}

// Ordering that groups samples into language blocks (first-appearance
// language order) with each block sorted by the first language's semantic
// order, so translations line up across blocks.
inline std::vector<std::size_t> language_block_order(std::span<const SampleMeta> samples) {
  const auto languages = languages_in_order(samples);
  std::vector<std::string> semantic_order;
  std::set<std::string> seen;
  for (const auto& s : samples)
    if (seen.insert(s.semantic_id).second) semantic_order.push_back(s.semantic_id);
  std::map<std::string, std::size_t> sem_rank;
  for (std::size_t i = 0; i < semantic_order.size(); ++i) sem_rank[semantic_order[i]] = i;
  std::map<std::string, std::size_t> lang_rank;
  for (std::size_t i = 0; i < languages.size(); ++i) lang_rank[languages[i]] = i;

  std::vector<std::size_t> perm(samples.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
    const auto ka = std::pair(lang_rank[samples[a].language], sem_rank[samples[a].semantic_id]);
    const auto kb = std::pair(lang_rank[samples[b].language], sem_rank[samples[b].semantic_id]);
    return ka < kb;
  });
  return perm;
}

inline std::string similarity_csv(const SimilarityMap& map) {
  std::string out = "sample_id";
  for (const auto& id : map.order) out += "," + csv_field(id);
  out += "\n";
  for (std::size_t i = 0; i < map.size; ++i) {
    out += csv_field(map.order[i]);
    for (std::size_t j = 0; j < map.size; ++j) out += "," + format_double(map.at(i, j));
    out += "\n";
  }
  return out;
}

// Raw matrix as f32le bytes, row-major, plus the sidecar manifest.
inline std::string similarity_raw(const SimilarityMap& map) {
  std::vector<float> f(map.values.begin(), map.values.end());
  std::vector<char> bytes;
  detail::encode_f32le(f, bytes);
  return {bytes.begin(), bytes.end()};
}

inline nlohmann::ordered_json similarity_sidecar(const SimilarityMap& map, const std::string& data_file) {
  nlohmann::ordered_json j;
  j["format_version"] = 1;
  j["dtype"] = "f32le";
  j["rows"] = map.size;
  j["cols"] = map.size;
  j["layout"] = "row_major";
  j["scope"] = map.layer ? nlohmann::ordered_json("layer") : nlohmann::ordered_json("full_model");
  if (map.layer) j["layer"] = *map.layer;
  j["data_file"] = data_file;
  j["order"] = map.order;
  return j;
}

}  // namespace lingua
