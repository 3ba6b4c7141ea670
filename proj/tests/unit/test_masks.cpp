#include <functional>
#include <set>

#include <gtest/gtest.h>

#include "lingua/masks.hpp"

using namespace lingua;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::usage;
}

const TraceGeometry kBloom = TraceGeometry::uniform("bloom-7b1", 30, 16384);

KeyRegionSet two_language_regions() {
  TraceGeometry g("m", {3, 4});
  KeyRegionSet set;
  set.threshold = 2.0;
  set.geometry = g;
  set.languages = {"en", "fr"};
  set.regions = {{{0, 2}, {1, 1}}, {}};
  return set;
}

}  // namespace

TEST(RegionMask, CopiesRegion) {
  const auto set = two_language_regions();
  const auto m = region_mask(set, "en");
  EXPECT_EQ(m.neurons, set.regions[0]);
  const auto& p = std::get<KeyRegionProvenance>(m.provenance);
  EXPECT_EQ(p.language, "en");
  EXPECT_EQ(p.threshold, 2.0);
  EXPECT_EQ(region_mask(set, "fr").size(), 0u);
  EXPECT_EQ(code_of([&] { region_mask(set, "de"); }), ErrorCode::unknown_language);
}

TEST(RegionMask, FullScaleCount) {
  KeyRegionSet set;
  set.geometry = kBloom;
  set.languages = {"en"};
  set.regions.resize(1);
  for (std::size_t i = 0; i < 15935; ++i) set.regions[0].push_back(kBloom.address(i * 30));
  EXPECT_EQ(region_mask(set, "en").size(), 15935u);
}

TEST(RandomMask, TenPercentOfBloom) {
  const auto m = random_mask(kBloom, 0.10, 7);
  EXPECT_EQ(m.size(), 49152u);
  const std::set<NeuronAddress> unique(m.neurons.begin(), m.neurons.end());
  EXPECT_EQ(unique.size(), m.size());
  for (const auto& a : m.neurons) EXPECT_TRUE(kBloom.contains(a));
  const auto& p = std::get<RandomProvenance>(m.provenance);
  EXPECT_EQ(p.seed, 7u);
}

TEST(RandomMask, FullFractionCoversEverything) {
  TraceGeometry g("m", {5, 3});
  const auto m = random_mask(g, 1.0, 0);
  ASSERT_EQ(m.size(), 8u);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(g.flat(m.neurons[i]), i);
}

TEST(RandomMask, SizeRounding) {
  EXPECT_EQ(random_mask_size(491520, 0.10), 49152u);
  EXPECT_EQ(random_mask_size(10, 0.25), 3u);
  EXPECT_EQ(random_mask_size(10, 0.24), 2u);
}

TEST(RandomMask, SeedDeterminism) {
  const auto g = TraceGeometry::uniform("m", 4, 256);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    EXPECT_EQ(random_mask(g, 0.1, seed).neurons, random_mask(g, 0.1, seed).neurons);
    EXPECT_NE(random_mask(g, 0.1, seed).neurons, random_mask(g, 0.1, seed + 100).neurons);
  }
}

TEST(RandomMask, RoughlyUniformOverLayers) {
  const auto g = TraceGeometry::uniform("m", 4, 1000);
  std::vector<std::size_t> per_layer(4, 0);
  for (std::uint64_t seed = 0; seed < 20; ++seed)
    for (const auto& a : random_mask(g, 0.25, seed).neurons) ++per_layer[a.layer];
  // 20 masks x 1000 picks; each layer expects 5000 with sd near 40.
  for (auto c : per_layer) EXPECT_NEAR(static_cast<double>(c), 5000.0, 250.0);
}

TEST(RandomMask, FractionRange) {
  TraceGeometry g("m", {4});
  EXPECT_EQ(code_of([&] { random_mask(g, 0.0, 1); }), ErrorCode::range);
  EXPECT_EQ(code_of([&] { random_mask(g, 1.5, 1); }), ErrorCode::range);
  EXPECT_EQ(code_of([&] { random_mask(g, -0.1, 1); }), ErrorCode::range);
}

TEST(UniformBelow, StaysInRange) {
  std::mt19937_64 e(3);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) ++hits[detail::uniform_below(e, 7)];
  for (int h : hits) EXPECT_GT(h, 800);
}

TEST(MaskJson, RoundTrip) {
  const auto set = two_language_regions();
  const auto region = region_mask(set, "en");
  const auto back = mask_from_json(to_json(region));
  EXPECT_EQ(back.neurons, region.neurons);
  EXPECT_EQ(back.geometry, region.geometry);
  EXPECT_EQ(std::get<KeyRegionProvenance>(back.provenance).language, "en");

  const auto rnd = random_mask(TraceGeometry::uniform("m", 3, 50), 0.2, 11);
  const auto j = to_json(rnd);
  EXPECT_EQ(j["provenance"]["kind"], "random");
  EXPECT_EQ(j["provenance"]["sampler"], kRandomSampler);
  EXPECT_EQ(j["size"], 30);
  const auto rback = mask_from_json(j);
  EXPECT_EQ(rback.neurons, rnd.neurons);
  EXPECT_EQ(std::get<RandomProvenance>(rback.provenance).seed, 11u);
}

TEST(MaskJson, RejectsDuplicatesAndOutOfRange) {
  auto j = to_json(region_mask(two_language_regions(), "en"));
  auto dup = j;
  dup["neurons"].push_back({0, 2});
  EXPECT_EQ(code_of([&] { mask_from_json(dup); }), ErrorCode::format);
  auto oob = j;
  oob["neurons"].push_back({0, 7});
  EXPECT_EQ(code_of([&] { mask_from_json(oob); }), ErrorCode::geometry);
}

TEST(ApplyMask, ZeroesOnlyMaskedNeuronsAndIsIdempotent) {
  const auto set = two_language_regions();
  const auto mask = region_mask(set, "en");
  std::vector<float> acts(14);
  for (std::size_t i = 0; i < acts.size(); ++i) acts[i] = static_cast<float>(i + 1);
  apply_mask(mask, set.geometry, std::span<float>(acts));
  // Flat indices 2 and 4 in each 7-wide row.
  const std::vector<float> expected{1, 2, 0, 4, 0, 6, 7, 8, 9, 0, 11, 0, 13, 14};
  EXPECT_EQ(acts, expected);
  apply_mask(mask, set.geometry, std::span<float>(acts));
  EXPECT_EQ(acts, expected);
  EXPECT_EQ(code_of([&] { apply_mask(mask, TraceGeometry("m", {7}), std::span<float>(acts)); }), ErrorCode::geometry);
  std::vector<float> ragged(9);
  EXPECT_EQ(code_of([&] { apply_mask(mask, set.geometry, std::span<float>(ragged)); }), ErrorCode::geometry);
}

TEST(DeltaTable, PercentIncrease) {
  EXPECT_NEAR(percent_increase(13.94, 17.01), 22.02, 0.01);
  EXPECT_NEAR(percent_increase(14.45, 59.10), 309.0, 0.1);
  EXPECT_EQ(percent_increase(10.0, 10.0), 0.0);
}

TEST(DeltaTable, DiagonalDominance) {
  const std::vector<std::pair<std::string, double>> base{{"en", 10.0}, {"fr", 20.0}};
  const std::vector<PerplexityRun> runs{
      {"en", "en", {{"en", 15.0}, {"fr", 21.0}}, 5},
      {"fr", "fr", {{"fr", 20.0}, {"en", 10.0}}, 7},
      {"random", std::nullopt, {{"en", 11.0}, {"fr", 22.0}}, std::nullopt},
  };
  const auto t = perplexity_delta_table(base, runs);
  EXPECT_NEAR(t.deltas[0][0], 50.0, 1e-12);
  EXPECT_NEAR(t.deltas[0][1], 5.0, 1e-12);
  EXPECT_EQ(t.diagonal_dominant[0], true);
  EXPECT_EQ(t.diagonal_dominant[1], false);  // all deltas zero: no strict dominance
  EXPECT_FALSE(t.diagonal_dominant[2].has_value());
  EXPECT_EQ(t.masked[1][0], 10.0);
  EXPECT_EQ(delta_table_csv(t),
            "language,baseline_perplexity,en,fr,random\n"
            "en,10,50,0,10\n"
            "fr,20,5,0,10\n"
            "key_neuron_number,,5,7,\n");
}

TEST(DeltaTable, Errors) {
  const std::vector<std::pair<std::string, double>> base{{"en", 10.0}, {"fr", 20.0}};
  EXPECT_EQ(code_of([&] { perplexity_delta_table(base, {{"x", std::nullopt, {{"en", 1.0}}, std::nullopt}}); }),
            ErrorCode::language_set_mismatch);
  EXPECT_EQ(code_of([&] {
              perplexity_delta_table(base, {{"x", std::nullopt, {{"en", 1.0}, {"de", 2.0}}, std::nullopt}});
            }),
            ErrorCode::language_set_mismatch);
  EXPECT_EQ(code_of([&] { perplexity_delta_table({{"en", 0.0}}, {}); }), ErrorCode::nonpositive);
  EXPECT_EQ(code_of([&] {
              perplexity_delta_table(base, {{"x", std::nullopt, {{"en", 1.0}, {"fr", -2.0}}, std::nullopt}});
            }),
            ErrorCode::nonpositive);
  EXPECT_EQ(code_of([&] { perplexity_delta_table(base, {{"x", "de", {{"en", 1.0}, {"fr", 2.0}}, std::nullopt}}); }),
            ErrorCode::language_set_mismatch);
}

TEST(DeltaTable, JsonInput) {
  const auto j = nlohmann::ordered_json::parse(R"({
    "baseline": {"en": 13.94, "vi": 14.45},
    "runs": [{"label": "vi", "masked_language": "vi", "neuron_count": 46313,
              "perplexity": {"en": 17.01, "vi": 59.10}}]
  })");
  const auto t = delta_table_from_json(j);
  EXPECT_EQ(t.languages, (std::vector<std::string>{"en", "vi"}));
  EXPECT_NEAR(t.deltas[0][0], 22.0, 0.1);
  EXPECT_NEAR(t.deltas[0][1], 309.0, 0.1);
  EXPECT_EQ(t.diagonal_dominant[0], true);
  EXPECT_EQ(t.runs[0].neuron_count, 46313u);
  const auto out = to_json(t);
  EXPECT_EQ(out["languages"][1], "vi");
  EXPECT_EQ(code_of([] { delta_table_from_json(nlohmann::ordered_json::parse(R"({"runs": []})")); }), ErrorCode::format);
}
