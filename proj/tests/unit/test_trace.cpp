#include <algorithm>
#include <cstring>
#include <functional>
#include <fstream>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "lingua/trace.hpp"
#include "oracles.hpp"

using namespace lingua;

namespace {

nlohmann::ordered_json small_manifest(std::size_t samples, std::size_t floats_per_sample) {
  nlohmann::ordered_json j;
  j["format_version"] = 1;
  j["model_name"] = "tiny";
  j["num_layers"] = 2;
  j["neurons_per_layer"] = {3, 3};
  j["storage_mode"] = "pooled";
  j["dtype"] = "f32le";
  j["samples"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < samples; ++i) {
    j["samples"].push_back({{"sample_id", "s" + std::to_string(i)},
                            {"language", i % 2 ? "fr" : "en"},
                            {"semantic_id", "v" + std::to_string(i / 2)},
                            {"token_count", 3},
                            {"byte_offset", i * floats_per_sample * 4},
                            {"byte_length", floats_per_sample * 4}});
  }
  return j;
}

void write_raw(const std::filesystem::path& dir, const nlohmann::ordered_json& manifest, std::size_t floats) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "manifest.json") << manifest.dump();
  std::vector<float> values(floats);
  for (std::size_t i = 0; i < floats; ++i) values[i] = static_cast<float>(i) * 0.5f;
  std::ofstream blob(dir / "activations.bin", std::ios::binary);
  blob.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(floats * 4));
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::usage;
}

std::vector<SampleMeta> grid(std::size_t languages, std::size_t n) {
  std::vector<SampleMeta> out;
  for (std::size_t l = 0; l < languages; ++l)
    for (std::size_t s = 0; s < n; ++s)
      out.push_back({"l" + std::to_string(l) + "-" + std::to_string(s), "l" + std::to_string(l), "v" + std::to_string(s), 1});
  return out;
}

}  // namespace

TEST(TraceGeometry, TotalNeuronsIsSumOfWidths) {
  TraceGeometry g("m", {3, 5, 2});
  EXPECT_EQ(g.total_neurons(), 10u);
  EXPECT_EQ(g.layer_offset(2), 8u);
}

TEST(TraceGeometry, BloomShapedGeometry) {
  const auto g = TraceGeometry::uniform("bloom-7b1", 30, 16384);
  EXPECT_EQ(g.total_neurons(), 491520u);
}

TEST(TraceGeometry, FlatAddressBijection) {
  TraceGeometry g("m", {4, 1, 7, 3});
  for (std::size_t f = 0; f < g.total_neurons(); ++f) {
    const auto a = g.address(f);
    EXPECT_TRUE(g.contains(a));
    EXPECT_EQ(g.flat(a), f);
    EXPECT_EQ(f, g.layer_offset(a.layer) + a.index);
  }
  EXPECT_EQ(code_of([&] { g.address(g.total_neurons()); }), ErrorCode::geometry);
  EXPECT_EQ(code_of([&] { g.flat({1, 1}); }), ErrorCode::geometry);
}

TEST(TraceGeometry, RejectsEmptyAndZeroWidthLayers) {
  EXPECT_EQ(code_of([] { TraceGeometry("m", {}); }), ErrorCode::geometry);
  EXPECT_EQ(code_of([] { TraceGeometry("m", {2, 0}); }), ErrorCode::geometry);
}

TEST(OpenTrace, SmallPooledTrace) {
  const auto dir = oracle::temp_dir("small");
  write_raw(dir, small_manifest(4, 6), 24);
  const auto trace = open_trace(dir);
  EXPECT_EQ(trace.geometry().total_neurons(), 6u);
  EXPECT_EQ(trace.sample_count(), 4u);
  EXPECT_EQ(trace.storage_mode(), StorageMode::pooled);
  const auto v = trace.pooled(1);
  ASSERT_EQ(v.size(), 6u);
  EXPECT_DOUBLE_EQ(v[0], 3.0);  // float index 6 * 0.5
  std::filesystem::remove_all(dir);
}

TEST(OpenTrace, TruncatedBlobIsFormatError) {
  const auto dir = oracle::temp_dir("trunc");
  write_raw(dir, small_manifest(4, 6), 23);
  EXPECT_EQ(code_of([&] { open_trace(dir); }), ErrorCode::format);
  std::filesystem::remove_all(dir);
}

TEST(OpenTrace, OversizedBlobIsFormatError) {
  const auto dir = oracle::temp_dir("long");
  write_raw(dir, small_manifest(4, 6), 25);
  EXPECT_EQ(code_of([&] { open_trace(dir); }), ErrorCode::format);
  std::filesystem::remove_all(dir);
}

TEST(OpenTrace, ByteLengthDisagreeingWithGeometryIsFormatError) {
  const auto dir = oracle::temp_dir("len");
  write_raw(dir, small_manifest(4, 5), 20);
  EXPECT_EQ(code_of([&] { open_trace(dir); }), ErrorCode::format);
  std::filesystem::remove_all(dir);
}

TEST(OpenTrace, NonContiguousOffsetIsFormatError) {
  const auto dir = oracle::temp_dir("off");
  auto m = small_manifest(4, 6);
  m["samples"][2]["byte_offset"] = 4;
  write_raw(dir, m, 24);
  EXPECT_EQ(code_of([&] { open_trace(dir); }), ErrorCode::format);
  std::filesystem::remove_all(dir);
}

TEST(OpenTrace, LayerCountMismatchIsGeometryError) {
  const auto dir = oracle::temp_dir("geom");
  auto m = small_manifest(4, 6);
  m["num_layers"] = 3;
  write_raw(dir, m, 24);
  EXPECT_EQ(code_of([&] { open_trace(dir); }), ErrorCode::geometry);
  std::filesystem::remove_all(dir);
}

TEST(OpenTrace, DuplicateSampleRejected) {
  const auto dir = oracle::temp_dir("dup");
  auto m = small_manifest(4, 6);
  m["samples"][3]["semantic_id"] = "v0";  // (fr, v0) twice
  write_raw(dir, m, 24);
  EXPECT_EQ(code_of([&] { open_trace(dir); }), ErrorCode::duplicate_sample);
  m = small_manifest(4, 6);
  m["samples"][3]["sample_id"] = "s0";
  write_raw(dir, m, 24);
  EXPECT_EQ(code_of([&] { open_trace(dir); }), ErrorCode::duplicate_sample);
  std::filesystem::remove_all(dir);
}

TEST(OpenTrace, MalformedManifestIsFormatError) {
  const auto dir = oracle::temp_dir("bad");
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "manifest.json") << "{ not json";
  std::ofstream(dir / "activations.bin") << "";
  EXPECT_EQ(code_of([&] { open_trace(dir); }), ErrorCode::format);
  auto m = small_manifest(1, 6);
  m.erase("dtype");
  write_raw(dir, m, 6);
  EXPECT_EQ(code_of([&] { open_trace(dir); }), ErrorCode::format);
  EXPECT_EQ(code_of([&] { open_trace(dir / "missing"); }), ErrorCode::format);
  std::filesystem::remove_all(dir);
}

TEST(OpenTrace, BloomShapedManifest) {
  const auto dir = oracle::temp_dir("bloom");
  const auto g = TraceGeometry::uniform("bloom-7b1", 30, 16384);
  std::vector<float> data(g.total_neurons() * 2, 0.25f);
  ActivationTrace t(g, StorageMode::pooled, {{"a", "en", "v0", 5}, {"b", "fr", "v0", 7}}, std::move(data));
  write_trace(t, dir);
  const auto back = open_trace(dir);
  EXPECT_EQ(back.geometry().total_neurons(), 491520u);
  EXPECT_EQ(back.geometry().num_layers(), 30u);
  std::filesystem::remove_all(dir);
}

TEST(WriteTrace, PooledRoundTripIsBitExact) {
  std::mt19937_64 rng(11);
  std::normal_distribution<float> normal;
  TraceGeometry g("rt", {5, 3});
  std::vector<SampleMeta> samples = grid(3, 4);
  std::vector<float> data(samples.size() * g.total_neurons());
  for (auto& x : data) x = normal(rng);
  data[3] = -0.0f;
  data[4] = 1e-40f;  // subnormal
  nlohmann::ordered_json meta;
  meta["token_policy"] = "all";
  ActivationTrace t(g, StorageMode::pooled, samples, data, meta);

  const auto dir = oracle::temp_dir("rt");
  write_trace(t, dir / "trace");
  const auto back = open_trace(dir / "trace");
  EXPECT_EQ(back.geometry(), t.geometry());
  EXPECT_EQ(back.samples(), t.samples());
  EXPECT_EQ(back.metadata(), t.metadata());
  ASSERT_EQ(back.raw().size(), t.raw().size());
  EXPECT_EQ(std::memcmp(back.raw().data(), t.raw().data(), t.raw().size() * 4), 0);

  // Rewriting replaces the directory in place.
  write_trace(back, dir / "trace");
  EXPECT_EQ(read_file(dir / "trace" / "manifest.json"), manifest_json(t).dump(2) + "\n");
  std::filesystem::remove_all(dir);
}

TEST(WriteTrace, PerTokenLayoutIsTokenMajor) {
  TraceGeometry g("pt", {2, 1});
  // One sample, 2 tokens: token0 = (1,2 | 3), token1 = (5,6 | 7).
  ActivationTrace t(g, StorageMode::per_token, {{"s", "en", "v", 2}}, {1, 2, 3, 5, 6, 7});
  const auto dir = oracle::temp_dir("pt");
  write_trace(t, dir);
  const auto blob = read_file(dir / "activations.bin");
  ASSERT_EQ(blob.size(), 24u);
  float third;
  std::memcpy(&third, blob.data() + 8, 4);
  EXPECT_EQ(third, 3.0f);
  const auto j = nlohmann::json::parse(read_file(dir / "manifest.json"));
  EXPECT_EQ(j["samples"][0]["byte_length"], 24);
  const auto back = open_trace(dir);
  EXPECT_EQ(back.pooled(0), (std::vector<double>{3, 4, 5}));
  std::filesystem::remove_all(dir);
}

TEST(ActivationTraceModel, DataSizeMustMatchGeometry) {
  TraceGeometry g("m", {2});
  EXPECT_EQ(code_of([&] { ActivationTrace(g, StorageMode::pooled, {{"a", "en", "v", 1}}, {1, 2, 3}); }),
            ErrorCode::geometry);
  EXPECT_EQ(code_of([&] { ActivationTrace(g, StorageMode::per_token, {{"a", "en", "v", 2}}, {1, 2}); }),
            ErrorCode::geometry);
}

TEST(ValidateBalanced, PaperScaleGridIsBalanced) {
  const auto samples = grid(9, 100);
  const auto r = validate_balanced(samples);
  EXPECT_TRUE(r.ok);
  EXPECT_EQ(r.samples_per_language, 100u);
  EXPECT_EQ(r.languages.size(), 9u);
  EXPECT_TRUE(r.violations.empty());
}

TEST(ValidateBalanced, UnequalCounts) {
  std::vector<SampleMeta> s{{"a", "en", "v0", 1}, {"b", "en", "v1", 1}, {"c", "en", "v2", 1},
                            {"d", "fr", "v0", 1}, {"e", "fr", "v1", 1}};
  const auto r = validate_balanced(s);
  EXPECT_FALSE(r.ok);
  ASSERT_FALSE(r.violations.empty());
  EXPECT_NE(r.violations.front().find("unequal counts"), std::string::npos);
  EXPECT_EQ(r.counts, (std::vector<std::size_t>{3, 2}));
}

TEST(ValidateBalanced, IncompleteGrid) {
  auto s = grid(2, 8);
  s[8 + 7].semantic_id = "w7";  // second language lacks v7, has w7 instead
  const auto r = validate_balanced(s);
  EXPECT_FALSE(r.ok);
  const bool found = std::any_of(r.violations.begin(), r.violations.end(), [](const std::string& v) {
    return v.find("incomplete grid") != std::string::npos && v.find("v7") != std::string::npos;
  });
  EXPECT_TRUE(found);
}

TEST(ValidateBalanced, EmptyTraceIsNotBalanced) {
  EXPECT_FALSE(validate_balanced(std::vector<SampleMeta>{}).ok);
}

TEST(PoolSample, SingleTokenIsIdentity) {
  TraceGeometry g("m", {2, 1});
  const std::vector<float> tok{0.5f, -1.25f, 3.0f};
  EXPECT_EQ(pool_sample(g, std::span<const float>(tok), 1), (std::vector<double>{0.5, -1.25, 3.0}));
}

TEST(PoolSample, TwoTokenMean) {
  TraceGeometry g("m", {2});
  const std::vector<double> tok{1, 0, 3, 0};
  EXPECT_EQ(pool_sample(g, std::span<const double>(tok), 2), (std::vector<double>{2, 0}));
}

TEST(PoolSample, EmptyAndMisshapenInput) {
  TraceGeometry g("m", {2});
  const std::vector<float> none;
  EXPECT_EQ(code_of([&] { pool_sample(g, std::span<const float>(none), 0); }), ErrorCode::empty);
  const std::vector<float> three{1, 2, 3};
  EXPECT_EQ(code_of([&] { pool_sample(g, std::span<const float>(three), 2); }), ErrorCode::geometry);
}

TEST(PoolSample, PermutationInvariantAndConstantPreserving) {
  TraceGeometry g("m", {4, 3});
  const std::size_t k = g.total_neurons();
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t t = 1 + rng() % 9;
    std::vector<double> tokens(t * k);
    for (auto& x : tokens) x = normal(rng);
    std::vector<std::size_t> order(t);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<double> shuffled;
    for (auto i : order) shuffled.insert(shuffled.end(), tokens.begin() + i * k, tokens.begin() + (i + 1) * k);
    const auto a = pool_sample(g, std::span<const double>(tokens), t);
    const auto b = pool_sample(g, std::span<const double>(shuffled), t);
    for (std::size_t i = 0; i < k; ++i) EXPECT_NEAR(a[i], b[i], 1e-12);

    std::vector<double> c(k);
    for (auto& x : c) x = normal(rng);
    std::vector<double> constant;
    for (std::size_t i = 0; i < t; ++i) constant.insert(constant.end(), c.begin(), c.end());
    const auto p = pool_sample(g, std::span<const double>(constant), t);
    for (std::size_t i = 0; i < k; ++i) EXPECT_NEAR(p[i], c[i], 1e-12);
  }
}
