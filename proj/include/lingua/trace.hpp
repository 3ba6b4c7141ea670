#pragma once

// Activation traces: geometry, sample metadata, the on-disk directory format
// (manifest.json + activations.bin) and token-mean pooling.

#include <algorithm>
#include <bit>
#include <compare>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lingua/error.hpp"
#include "lingua/io.hpp"

namespace lingua {

struct NeuronAddress {
  std::size_t layer = 0;
  std::size_t index = 0;

  friend auto operator<=>(const NeuronAddress&, const NeuronAddress&) = default;
};

class TraceGeometry {
 public:
  TraceGeometry() = default;

  TraceGeometry(std::string model_name, std::vector<std::size_t> neurons_per_layer)
      : model_name_(std::move(model_name)), widths_(std::move(neurons_per_layer)) {
    if (widths_.empty()) throw Error(ErrorCode::geometry, "geometry needs at least one layer");
    offsets_.reserve(widths_.size() + 1);
    offsets_.push_back(0);
    for (std::size_t m = 0; m < widths_.size(); ++m) {
      if (widths_[m] == 0)
        throw Error(ErrorCode::geometry, "layer " + std::to_string(m) + " has zero neurons");
      offsets_.push_back(offsets_.back() + widths_[m]);
    }
  }

  // M layers of identical width.
  static TraceGeometry uniform(std::string model_name, std::size_t num_layers, std::size_t width) {
    return TraceGeometry(std::move(model_name), std::vector<std::size_t>(num_layers, width));
  }

  const std::string& model_name() const noexcept { return model_name_; }
  std::size_t num_layers() const noexcept { return widths_.size(); }
  const std::vector<std::size_t>& neurons_per_layer() const noexcept { return widths_; }
  std::size_t layer_width(std::size_t layer) const { return widths_.at(layer); }
  std::size_t layer_offset(std::size_t layer) const { return offsets_.at(layer); }
  std::size_t total_neurons() const noexcept { return offsets_.empty() ? 0 : offsets_.back(); }

  bool contains(const NeuronAddress& a) const noexcept {
    return a.layer < widths_.size() && a.index < widths_[a.layer];
  }

  std::size_t flat(const NeuronAddress& a) const {
    if (!contains(a))
      throw Error(ErrorCode::geometry, "neuron (" + std::to_string(a.layer) + ", " +
                                           std::to_string(a.index) + ") outside geometry");
    return offsets_[a.layer] + a.index;
  }

  NeuronAddress address(std::size_t flat_index) const {
    if (flat_index >= total_neurons())
      throw Error(ErrorCode::geometry, "flat index " + std::to_string(flat_index) + " >= K");
    const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), flat_index);
    const auto layer = static_cast<std::size_t>(it - offsets_.begin()) - 1;
    return {layer, flat_index - offsets_[layer]};
  }

  // Same layer layout, model name ignored.
  bool same_shape(const TraceGeometry& other) const noexcept { return widths_ == other.widths_; }

  friend bool operator==(const TraceGeometry& a, const TraceGeometry& b) {
    return a.model_name_ == b.model_name_ && a.widths_ == b.widths_;
  }

 private:
  std::string model_name_;
  std::vector<std::size_t> widths_;
  std::vector<std::size_t> offsets_;
};

enum class StorageMode { pooled, per_token };

inline std::string to_string(StorageMode mode) {
  return mode == StorageMode::pooled ? "pooled" : "per_token";
}

inline StorageMode parse_storage_mode(const std::string& s) {
  if (s == "pooled") return StorageMode::pooled;
  if (s == "per_token") return StorageMode::per_token;
  throw Error(ErrorCode::format, "unknown storage_mode '" + s + "'");
}

struct SampleMeta {
  std::string sample_id;
  std::string language;
  std::string semantic_id;
  std::size_t token_count = 1;

  friend bool operator==(const SampleMeta&, const SampleMeta&) = default;
};

// Mean over tokens of a token-major stack (T tokens, each the K-wide
// concatenation of its layer vectors). Accumulates in double.
template <typename T>
std::vector<double> pool_sample(const TraceGeometry& geometry, std::span<const T> tokens,
                                std::size_t token_count) {
  if (token_count == 0) throw Error(ErrorCode::empty, "cannot pool a sample with no tokens");
  const std::size_t k = geometry.total_neurons();
  if (tokens.size() != token_count * k)
    throw Error(ErrorCode::geometry, "token stack holds " + std::to_string(tokens.size()) +
                                         " values, expected " + std::to_string(token_count * k));
  std::vector<double> sum(k, 0.0);
  for (std::size_t t = 0; t < token_count; ++t) {
    const auto row = tokens.subspan(t * k, k);
    for (std::size_t i = 0; i < k; ++i) sum[i] += static_cast<double>(row[i]);
  }
  const double inv = 1.0 / static_cast<double>(token_count);
  for (auto& v : sum) v *= inv;
  return sum;
}

// Immutable after construction; all accessors are const and safe to share
// across threads.
class ActivationTrace {
 public:
  ActivationTrace(TraceGeometry geometry, StorageMode mode, std::vector<SampleMeta> samples,
                  std::vector<float> data, nlohmann::ordered_json metadata = nlohmann::ordered_json::object())
      : geometry_(std::move(geometry)), mode_(mode), samples_(std::move(samples)),
        data_(std::move(data)), metadata_(std::move(metadata)) {
    const std::size_t k = geometry_.total_neurons();
    if (k == 0) throw Error(ErrorCode::geometry, "trace geometry is empty");
    std::set<std::string> ids;
    std::set<std::pair<std::string, std::string>> cells;
    offsets_.reserve(samples_.size() + 1);
    offsets_.push_back(0);
    for (const auto& s : samples_) {
      if (s.token_count == 0)
        throw Error(ErrorCode::format, "sample '" + s.sample_id + "' has token_count 0");
      if (!ids.insert(s.sample_id).second)
        throw Error(ErrorCode::duplicate_sample, "sample_id '" + s.sample_id + "' repeated");
      if (!cells.emplace(s.language, s.semantic_id).second)
        throw Error(ErrorCode::duplicate_sample,
                    "(" + s.language + ", " + s.semantic_id + ") appears more than once");
      offsets_.push_back(offsets_.back() + values_per_sample(s));
    }
    if (offsets_.back() != data_.size())
      throw Error(ErrorCode::geometry, "activation data holds " + std::to_string(data_.size()) +
                                           " values, samples declare " +
                                           std::to_string(offsets_.back()));
  }

  const TraceGeometry& geometry() const noexcept { return geometry_; }
  StorageMode storage_mode() const noexcept { return mode_; }
  const std::vector<SampleMeta>& samples() const noexcept { return samples_; }
  std::size_t sample_count() const noexcept { return samples_.size(); }
  const nlohmann::ordered_json& metadata() const noexcept { return metadata_; }
  std::span<const float> raw() const noexcept { return data_; }

  std::size_t values_per_sample(const SampleMeta& s) const noexcept {
    const std::size_t k = geometry_.total_neurons();
    return mode_ == StorageMode::pooled ? k : k * s.token_count;
  }

  // Stored values for sample i: K floats (pooled) or T*K floats token-major.
  std::span<const float> sample_values(std::size_t i) const {
    if (i >= samples_.size()) throw Error(ErrorCode::range, "sample index out of range");
    return std::span<const float>(data_).subspan(offsets_[i], offsets_[i + 1] - offsets_[i]);
  }

  // Per-layer token means of sample i, concatenated in layer order.
  std::vector<double> pooled(std::size_t i) const {
    const auto values = sample_values(i);
    if (mode_ == StorageMode::pooled) return {values.begin(), values.end()};
    return pool_sample(geometry_, values, samples_[i].token_count);
  }

 private:
  TraceGeometry geometry_;
  StorageMode mode_;
  std::vector<SampleMeta> samples_;
  std::vector<float> data_;
  nlohmann::ordered_json metadata_;
  std::vector<std::size_t> offsets_;
};

// ---------------------------------------------------------------------------
// Balance validation

struct ValidationReport {
  bool ok = false;
  std::vector<std::string> languages;  // first-appearance order
  std::vector<std::size_t> counts;     // parallel to languages
  std::size_t samples_per_language = 0;
  std::vector<std::string> semantic_ids;  // union, first-appearance order
  std::vector<std::string> violations;
};

// Languages in order of first appearance.
inline std::vector<std::string> languages_in_order(std::span<const SampleMeta> samples) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& s : samples)
    if (seen.insert(s.language).second) out.push_back(s.language);
  return out;
}

inline ValidationReport validate_balanced(std::span<const SampleMeta> samples) {
  ValidationReport report;
  if (samples.empty()) {
    report.violations.push_back("empty trace");
    return report;
  }
  report.languages = languages_in_order(samples);
  std::map<std::string, std::set<std::string>> grid;
  std::set<std::string> seen_sem;
  for (const auto& s : samples) {
    grid[s.language].insert(s.semantic_id);
    if (seen_sem.insert(s.semantic_id).second) report.semantic_ids.push_back(s.semantic_id);
  }
  std::map<std::string, std::size_t> counts;
  for (const auto& s : samples) ++counts[s.language];
  for (const auto& l : report.languages) report.counts.push_back(counts[l]);

  const auto [lo, hi] = std::minmax_element(report.counts.begin(), report.counts.end());
  if (*lo != *hi) {
    std::string detail;
    for (std::size_t i = 0; i < report.languages.size(); ++i)
      detail += (i ? ", " : "") + report.languages[i] + ":" + std::to_string(report.counts[i]);
    report.violations.push_back("unequal counts {" + detail + "}");
  }
  for (const auto& l : report.languages) {
    std::vector<std::string> missing;
    for (const auto& sem : report.semantic_ids)
      if (!grid[l].count(sem)) missing.push_back(sem);
    if (!missing.empty()) {
      std::string detail;
      for (std::size_t i = 0; i < missing.size() && i < 5; ++i) detail += (i ? ", " : "") + missing[i];
      if (missing.size() > 5) detail += ", ...";
      report.violations.push_back("incomplete grid: language '" + l + "' lacks semantic ids {" +
                                  detail + "}");
    }
  }
  for (const auto& [l, sems] : grid) {
    if (sems.size() != counts[l])
      report.violations.push_back("duplicate semantic id within language '" + l + "'");
  }
  report.ok = report.violations.empty();
  if (report.ok) report.samples_per_language = report.counts.front();
  return report;
}

inline ValidationReport validate_balanced(const ActivationTrace& trace) {
  return validate_balanced(std::span<const SampleMeta>(trace.samples()));
}

inline nlohmann::ordered_json to_json(const ValidationReport& r) {
  nlohmann::ordered_json j;
  j["ok"] = r.ok;
  j["num_languages"] = r.languages.size();
  j["samples_per_language"] = r.samples_per_language;
  nlohmann::ordered_json counts = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < r.languages.size(); ++i) counts[r.languages[i]] = r.counts[i];
  j["counts"] = counts;
  j["num_semantic_ids"] = r.semantic_ids.size();
  j["violations"] = r.violations;
  return j;
}

// ---------------------------------------------------------------------------
// On-disk format

namespace detail {

inline void encode_f32le(std::span<const float> values, std::vector<char>& out) {
  const std::size_t start = out.size();
  out.resize(start + values.size() * 4);
  char* dst = out.data() + start;
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(dst, values.data(), values.size() * 4);
  } else {
    for (float v : values) {
      const auto bits = std::bit_cast<std::uint32_t>(v);
      for (int b = 0; b < 4; ++b) *dst++ = static_cast<char>((bits >> (8 * b)) & 0xFFu);
    }
  }
}

inline void decode_f32le(const char* src, std::size_t count, float* dst) {
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(dst, src, count * 4);
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b)
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(src[i * 4 + b])) << (8 * b);
      dst[i] = std::bit_cast<float>(bits);
    }
  }
}

template <typename Json>
const Json& require(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key))
    throw Error(ErrorCode::format, std::string("manifest missing field '") + key + "'");
  return j.at(key);
}

template <typename Json>
std::size_t require_uint(const Json& j, const char* key) {
  const auto& v = require(j, key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.template get<long long>() >= 0))
    throw Error(ErrorCode::format, std::string("field '") + key + "' must be a non-negative integer");
  return v.template get<std::size_t>();
}

template <typename Json>
std::string require_string(const Json& j, const char* key) {
  const auto& v = require(j, key);
  if (!v.is_string()) throw Error(ErrorCode::format, std::string("field '") + key + "' must be a string");
  return v.template get<std::string>();
}

inline const std::set<std::string>& manifest_keys() {
  static const std::set<std::string> keys{"format_version", "model_name", "num_layers",
                                          "neurons_per_layer", "storage_mode", "dtype", "samples"};
  return keys;
}

}  // namespace detail

inline nlohmann::ordered_json geometry_json(const TraceGeometry& g) {
  nlohmann::ordered_json j;
  j["model_name"] = g.model_name();
  j["num_layers"] = g.num_layers();
  j["neurons_per_layer"] = g.neurons_per_layer();
  return j;
}

// Parses {model_name, num_layers, neurons_per_layer} from any object that
// carries them (trace manifests, mask files, region files).
template <typename Json>
TraceGeometry geometry_from_json(const Json& j) {
  const std::string model = detail::require_string(j, "model_name");
  const std::size_t m = detail::require_uint(j, "num_layers");
  const auto& widths_json = detail::require(j, "neurons_per_layer");
  if (!widths_json.is_array()) throw Error(ErrorCode::format, "neurons_per_layer must be an array");
  std::vector<std::size_t> widths;
  for (const auto& w : widths_json) {
    if (!w.is_number_integer() || w.template get<long long>() < 0)
      throw Error(ErrorCode::format, "neurons_per_layer entries must be non-negative integers");
    widths.push_back(w.template get<std::size_t>());
  }
  if (widths.size() != m)
    throw Error(ErrorCode::geometry, "num_layers is " + std::to_string(m) + " but neurons_per_layer has " +
                                         std::to_string(widths.size()) + " entries");
  return TraceGeometry(model, std::move(widths));
}

inline nlohmann::ordered_json manifest_json(const ActivationTrace& trace) {
  const auto& g = trace.geometry();
  nlohmann::ordered_json j;
  j["format_version"] = 1;
  j["model_name"] = g.model_name();
  j["num_layers"] = g.num_layers();
  j["neurons_per_layer"] = g.neurons_per_layer();
  j["storage_mode"] = to_string(trace.storage_mode());
  j["dtype"] = "f32le";
  nlohmann::ordered_json samples = nlohmann::ordered_json::array();
  std::size_t offset = 0;
  for (const auto& s : trace.samples()) {
    const std::size_t length = trace.values_per_sample(s) * 4;
    samples.push_back({{"sample_id", s.sample_id},
                       {"language", s.language},
                       {"semantic_id", s.semantic_id},
                       {"token_count", s.token_count},
                       {"byte_offset", offset},
                       {"byte_length", length}});
    offset += length;
  }
  j["samples"] = std::move(samples);
  for (const auto& [key, value] : trace.metadata().items()) j[key] = value;
  return j;
}

// Writes `dir` as a fresh trace directory, replacing any previous one.
inline void write_trace(const ActivationTrace& trace, const std::filesystem::path& dir) {
  std::vector<char> blob;
  blob.reserve(trace.raw().size() * 4);
  detail::encode_f32le(trace.raw(), blob);
  write_directory_atomic(dir, {{"manifest.json", manifest_json(trace).dump(2) + "\n"},
                               {"activations.bin", std::string(blob.begin(), blob.end())}});
}

inline ActivationTrace open_trace(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  const auto blob_path = dir / "activations.bin";
  if (!std::filesystem::is_regular_file(manifest_path))
    throw Error(ErrorCode::format, "missing " + manifest_path.string());
  if (!std::filesystem::is_regular_file(blob_path))
    throw Error(ErrorCode::format, "missing " + blob_path.string());

  nlohmann::ordered_json manifest;
  try {
    manifest = nlohmann::ordered_json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::format, std::string("manifest.json: ") + e.what());
  }
  if (!manifest.is_object()) throw Error(ErrorCode::format, "manifest.json is not an object");
  if (detail::require_uint(manifest, "format_version") != 1)
    throw Error(ErrorCode::format, "unsupported format_version");
  if (detail::require_string(manifest, "dtype") != "f32le")
    throw Error(ErrorCode::format, "unsupported dtype");
  TraceGeometry geometry = geometry_from_json(manifest);
  const StorageMode mode = parse_storage_mode(detail::require_string(manifest, "storage_mode"));

  const auto& samples_json = detail::require(manifest, "samples");
  if (!samples_json.is_array()) throw Error(ErrorCode::format, "samples must be an array");

  const std::size_t k = geometry.total_neurons();
  const auto blob_size = static_cast<std::size_t>(std::filesystem::file_size(blob_path));
  std::vector<SampleMeta> samples;
  samples.reserve(samples_json.size());
  std::size_t expected_offset = 0;
  for (const auto& sj : samples_json) {
    SampleMeta s;
    s.sample_id = detail::require_string(sj, "sample_id");
    s.language = detail::require_string(sj, "language");
    s.semantic_id = detail::require_string(sj, "semantic_id");
    s.token_count = detail::require_uint(sj, "token_count");
    if (s.token_count == 0)
      throw Error(ErrorCode::format, "sample '" + s.sample_id + "' has token_count 0");
    const std::size_t offset = detail::require_uint(sj, "byte_offset");
    const std::size_t length = detail::require_uint(sj, "byte_length");
    const std::size_t declared = 4 * (mode == StorageMode::pooled ? k : k * s.token_count);
    if (length != declared)
      throw Error(ErrorCode::format, "sample '" + s.sample_id + "' byte_length " + std::to_string(length) +
                                         " != " + std::to_string(declared) + " implied by geometry");
    if (offset != expected_offset)
      throw Error(ErrorCode::format, "sample '" + s.sample_id + "' byte_offset " + std::to_string(offset) +
                                         " != " + std::to_string(expected_offset));
    expected_offset += length;
    samples.push_back(std::move(s));
  }
  if (blob_size != expected_offset)
    throw Error(ErrorCode::format, "activations.bin is " + std::to_string(blob_size) +
                                       " bytes, manifest declares " + std::to_string(expected_offset));

  const std::string blob = read_file(blob_path);
  if (blob.size() != expected_offset) throw Error(ErrorCode::format, "activations.bin truncated during read");
  std::vector<float> data(expected_offset / 4);
  detail::decode_f32le(blob.data(), data.size(), data.data());

  nlohmann::ordered_json metadata = nlohmann::ordered_json::object();
  for (const auto& [key, value] : manifest.items())
    if (!detail::manifest_keys().count(key)) metadata[key] = value;

  return ActivationTrace(std::move(geometry), mode, std::move(samples), std::move(data), std::move(metadata));
}

}  // namespace lingua
