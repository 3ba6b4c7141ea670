#pragma once

// `lingua` command-line front end. Kept in a header so tests drive the same
// code path as the installed binary.

#include <filesystem>
#include <iostream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lingua/activation.hpp"
#include "lingua/error.hpp"
#include "lingua/io.hpp"
#include "lingua/masks.hpp"
#include "lingua/metrics.hpp"
#include "lingua/probing.hpp"
#include "lingua/synth.hpp"
#include "lingua/trace.hpp"

namespace lingua::cli {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kFormat = 3,
  kGeometry = 4,
  kData = 5,
  kNumeric = 6,
  kLanguage = 7,
  kSpec = 8,
};

inline int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::usage: return kUsage;
    case ErrorCode::format:
    case ErrorCode::io:
    case ErrorCode::duplicate_sample: return kFormat;
    case ErrorCode::geometry: return kGeometry;
    case ErrorCode::insufficient:
    case ErrorCode::unbalanced:
    case ErrorCode::empty: return kData;
    case ErrorCode::zero_vector:
    case ErrorCode::range:
    case ErrorCode::dim_mismatch: return kNumeric;
    case ErrorCode::unknown_language:
    case ErrorCode::language_set_mismatch:
    case ErrorCode::nonpositive: return kLanguage;
    case ErrorCode::spec: return kSpec;
  }
  return kInternal;
}

inline std::string error_json(std::string_view code, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = code;
  j["message"] = message;
  return j.dump();
}

namespace detail {

struct Options {
  unsigned threads = 0;

  std::string trace_dir;
  std::vector<std::string> trace_dirs;
  std::string out;
  std::string format = "json";

  std::optional<std::size_t> layer;
  std::string order = "trace";

  bool layerwise = false;
  std::vector<std::string> labels;
  double threshold = kDefaultThreshold;
  std::string histogram_out;
  std::string sizes_out;

  std::string regions_file;
  std::string region_language;
  std::optional<double> random_fraction;
  std::uint64_t seed = 0;
  std::string geometry_source;
  std::optional<std::size_t> num_layers;
  std::optional<std::size_t> layer_width;
  std::string model_name = "model";

  std::string input_file;
  std::string json_out;

  std::string preset = "desk";
  std::optional<double> beta;
  std::optional<double> gamma;
  std::optional<double> noise;
  std::optional<std::size_t> samples;
  std::vector<std::string> languages;
  std::optional<std::size_t> region_size;
  std::vector<std::size_t> region_layers;
  std::vector<std::size_t> semantic_layers;
  std::optional<std::size_t> tokens;
  std::string storage = "pooled";

  std::string out_dir;
};

inline void require_dir(const std::string& path, const char* what) {
  if (!std::filesystem::is_directory(path)) throw Error(ErrorCode::usage, std::string(what) + " '" + path + "' is not a directory");
}

inline void require_file(const std::string& path, const char* what) {
  if (!std::filesystem::is_regular_file(path)) throw Error(ErrorCode::usage, std::string(what) + " '" + path + "' does not exist");
}

inline void require_output(const std::string& path) {
  if (!path.empty() && std::filesystem::is_directory(path))
    throw Error(ErrorCode::usage, "output '" + path + "' is a directory");
}

inline void emit(const std::string& path, const std::string& contents, std::ostream& out) {
  if (path.empty() || path == "-") out << contents;
  else write_file_atomic(path, contents);
}

inline std::string dump(const nlohmann::ordered_json& j) { return j.dump(2) + "\n"; }

inline nlohmann::ordered_json load_json(const std::string& path) {
  try {
    return nlohmann::ordered_json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::format, path + ": " + e.what());
  }
}

inline nlohmann::ordered_json similarity_json(const SimilarityMap& map) {
  nlohmann::ordered_json j;
  j["scope"] = map.layer ? "layer" : "full_model";
  if (map.layer) j["layer"] = *map.layer;
  j["order"] = map.order;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < map.size; ++i) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (std::size_t j2 = 0; j2 < map.size; ++j2) row.push_back(round_sig9(map.at(i, j2)));
    rows.push_back(std::move(row));
  }
  j["values"] = std::move(rows);
  return j;
}

inline nlohmann::ordered_json histogram_json(const KeyRegionSet& regions,
                                             const std::vector<std::vector<std::size_t>>& counts) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (std::size_t l = 0; l < counts.size(); ++l) j[regions.languages[l]] = counts[l];
  return j;
}

// -- subcommands ------------------------------------------------------------

inline int cmd_validate(const Options& o, std::ostream& out) {
  require_dir(o.trace_dir, "trace");
  require_output(o.out);
  const auto trace = open_trace(o.trace_dir);
  const auto report = validate_balanced(trace);
  auto j = to_json(report);
  j["model_name"] = trace.geometry().model_name();
  j["total_neurons"] = trace.geometry().total_neurons();
  j["storage_mode"] = to_string(trace.storage_mode());
  emit(o.out, dump(j), out);
  return report.ok ? kOk : kData;
}

inline int cmd_similarity(const Options& o, std::ostream& out) {
  require_dir(o.trace_dir, "trace");
  require_output(o.out);
  if (o.format == "raw" && (o.out.empty() || o.out == "-"))
    throw Error(ErrorCode::usage, "--format raw needs --out");
  if (o.order != "trace" && o.order != "blocks") throw Error(ErrorCode::usage, "--order must be trace or blocks");
  const auto trace = open_trace(o.trace_dir);
  auto map = trace_similarity(trace, o.layer, o.threads);
  if (o.order == "blocks") {
    const auto perm = language_block_order(trace.samples());
    map = reorder(map, perm);
  }
  if (o.format == "csv") {
    emit(o.out, similarity_csv(map), out);
  } else if (o.format == "json") {
    emit(o.out, dump(similarity_json(map)), out);
  } else if (o.format == "raw") {
    const std::filesystem::path data(o.out);
    write_file_atomic(data, similarity_raw(map));
    write_file_atomic(data.string() + ".json", dump(similarity_sidecar(map, data.filename().string())));
  } else {
    throw Error(ErrorCode::usage, "--format must be csv, json or raw");
  }
  return kOk;
}

struct TraceSummary {
  MetricsReport metrics;
  std::vector<LayerMetrics> profile;
  std::size_t sklr = 0;
};

inline TraceSummary summarize(const ActivationTrace& trace, const Options& o, bool with_sklr) {
  TraceSummary s;
  s.metrics = trace_metrics(trace, o.threads);
  if (o.layerwise) s.profile = layerwise_profile(trace, o.threads);
  if (with_sklr) s.sklr = probe_trace(trace, o.threshold, o.threads).sklr();
  return s;
}

inline int cmd_metrics(const Options& o, std::ostream& out) {
  if (o.trace_dirs.empty()) throw Error(ErrorCode::usage, "metrics needs at least one trace directory");
  for (const auto& d : o.trace_dirs) require_dir(d, "trace");
  require_output(o.out);
  if (o.format != "json" && o.format != "csv") throw Error(ErrorCode::usage, "--format must be json or csv");
  if (!o.labels.empty() && o.labels.size() != o.trace_dirs.size())
    throw Error(ErrorCode::usage, "--labels needs one label per trace");

  if (o.trace_dirs.size() == 1) {
    const auto trace = open_trace(o.trace_dirs.front());
    const auto s = summarize(trace, o, false);
    if (o.format == "csv") {
      if (!o.layerwise) throw Error(ErrorCode::usage, "--format csv needs --layerwise for a single trace");
      emit(o.out, profile_csv(s.profile), out);
    } else {
      auto j = to_json(s.metrics);
      if (o.layerwise) j["layerwise"] = to_json(s.profile);
      emit(o.out, dump(j), out);
    }
    return kOk;
  }

  // Several traces (checkpoints, model sizes): one series row per trace.
  std::vector<std::string> labels = o.labels;
  if (labels.empty())
    for (const auto& d : o.trace_dirs) labels.push_back(std::filesystem::path(d).filename().string());
  nlohmann::ordered_json series = nlohmann::ordered_json::array();
  std::string csv = o.layerwise ? "label,layer,lrds,sads\n" : "label,lrds,sads,sklr\n";
  for (std::size_t i = 0; i < o.trace_dirs.size(); ++i) {
    const auto trace = open_trace(o.trace_dirs[i]);
    const auto s = summarize(trace, o, true);
    nlohmann::ordered_json row;
    row["label"] = labels[i];
    row["lrds"] = round_sig9(s.metrics.lrds);
    row["sads"] = round_sig9(s.metrics.sads);
    row["sklr"] = s.sklr;
    row["metrics"] = to_json(s.metrics);
    if (o.layerwise) row["layerwise"] = to_json(s.profile);
    series.push_back(std::move(row));
    if (o.layerwise) {
      for (const auto& p : s.profile)
        csv += csv_field(labels[i]) + "," + std::to_string(p.layer) + "," + format_double(p.lrds) + "," +
               format_double(p.sads) + "\n";
    } else {
      csv += csv_field(labels[i]) + "," + format_double(s.metrics.lrds) + "," + format_double(s.metrics.sads) + "," +
             std::to_string(s.sklr) + "\n";
    }
  }
  nlohmann::ordered_json j;
  j["threshold"] = round_sig9(o.threshold);
  j["series"] = std::move(series);
  emit(o.out, o.format == "csv" ? csv : dump(j), out);
  return kOk;
}

inline int cmd_probe(const Options& o, std::ostream& out) {
  require_dir(o.trace_dir, "trace");
  require_output(o.out);
  require_output(o.histogram_out);
  require_output(o.sizes_out);
  if (!(o.threshold > 0.0)) throw Error(ErrorCode::usage, "--threshold must be > 0");
  const auto trace = open_trace(o.trace_dir);
  const auto regions = probe_trace(trace, o.threshold, o.threads);
  emit(o.out, dump(to_json(regions)), out);
  if (!o.histogram_out.empty())
    write_file_atomic(o.histogram_out, histogram_csv(regions, layer_histogram(regions, trace.geometry())));
  if (!o.sizes_out.empty()) write_file_atomic(o.sizes_out, dump(to_json(language_sizes(regions))));
  return kOk;
}

inline TraceGeometry geometry_for_random_mask(const Options& o) {
  if (!o.geometry_source.empty()) {
    if (std::filesystem::is_directory(o.geometry_source))
      return geometry_from_json(load_json((std::filesystem::path(o.geometry_source) / "manifest.json").string()));
    return geometry_from_json(load_json(o.geometry_source));
  }
  if (o.num_layers && o.layer_width) return TraceGeometry::uniform(o.model_name, *o.num_layers, *o.layer_width);
  throw Error(ErrorCode::usage, "--random needs --geometry <trace dir or json> or --num-layers with --width");
}

inline int cmd_mask(const Options& o, std::ostream& out) {
  require_output(o.out);
  const bool region = !o.region_language.empty();
  if (region == o.random_fraction.has_value())
    throw Error(ErrorCode::usage, "mask needs exactly one of --region LANG or --random FRAC");
  if (region) {
    if (o.regions_file.empty()) throw Error(ErrorCode::usage, "--region needs --regions <regions.json>");
    require_file(o.regions_file, "regions file");
    const auto regions = regions_from_json(load_json(o.regions_file));
    emit(o.out, dump(to_json(region_mask(regions, o.region_language))), out);
  } else {
    if (!o.geometry_source.empty() && !std::filesystem::exists(o.geometry_source))
      throw Error(ErrorCode::usage, "geometry source '" + o.geometry_source + "' does not exist");
    const auto geometry = geometry_for_random_mask(o);
    emit(o.out, dump(to_json(random_mask(geometry, *o.random_fraction, o.seed))), out);
  }
  return kOk;
}

inline int cmd_delta_table(const Options& o, std::ostream& out) {
  require_file(o.input_file, "delta-table input");
  require_output(o.out);
  require_output(o.json_out);
  const auto table = delta_table_from_json(load_json(o.input_file));
  emit(o.out, delta_table_csv(table), out);
  if (!o.json_out.empty()) write_file_atomic(o.json_out, dump(to_json(table)));
  return kOk;
}

inline SynthSpec synth_spec(const Options& o) {
  if (o.preset != "desk") throw Error(ErrorCode::usage, "unknown preset '" + o.preset + "'");
  SynthSpec spec = desk_spec();
  if (o.beta) spec.language_boost = *o.beta;
  if (o.gamma) spec.semantic_weight = *o.gamma;
  if (o.noise) spec.noise_sigma = *o.noise;
  if (!o.languages.empty()) spec.languages = o.languages;
  if (o.samples) {
    spec.samples_per_language = *o.samples;
    spec.semantic_ids = numbered_ids("v", *o.samples);
  }
  if (o.region_size) spec.region_size = *o.region_size;
  spec.region_layers = o.region_layers;
  spec.semantic_layers = o.semantic_layers;
  if (o.tokens) spec.tokens_per_sample = *o.tokens;
  spec.storage_mode = parse_storage_mode(o.storage);
  if (o.num_layers || o.layer_width)
    spec.geometry = TraceGeometry::uniform("synthetic-desk", o.num_layers.value_or(spec.geometry.num_layers()),
                                           o.layer_width.value_or(spec.geometry.layer_width(0)));
  return spec;
}

inline int cmd_synth(const Options& o, std::ostream&) {
  if (o.out.empty()) throw Error(ErrorCode::usage, "synth needs --out <dir>");
  if (std::filesystem::exists(o.out) && !std::filesystem::is_directory(o.out))
    throw Error(ErrorCode::usage, "output '" + o.out + "' exists and is not a directory");
  const auto spec = synth_spec(o);
  const auto result = generate(spec, o.seed, o.threads);
  write_synthetic(result, spec, o.out);
  return kOk;
}

inline int cmd_report(const Options& o, std::ostream&) {
  require_dir(o.trace_dir, "trace");
  if (o.out_dir.empty()) throw Error(ErrorCode::usage, "report needs --out-dir");
  if (std::filesystem::exists(o.out_dir) && !std::filesystem::is_directory(o.out_dir))
    throw Error(ErrorCode::usage, "output '" + o.out_dir + "' exists and is not a directory");
  if (!(o.threshold > 0.0)) throw Error(ErrorCode::usage, "--threshold must be > 0");

  const auto trace = open_trace(o.trace_dir);
  const auto map = trace_similarity(trace, std::nullopt, o.threads);
  const auto metrics = compute_metrics(map, trace.samples());
  const auto profile = layerwise_profile(trace, o.threads);
  const auto regions = probe_trace(trace, o.threshold, o.threads);
  const auto histogram = layer_histogram(regions, trace.geometry());
  const auto sizes = language_sizes(regions);
  const auto overlap = region_overlap(regions);

  nlohmann::ordered_json j;
  j["model_name"] = trace.geometry().model_name();
  j["num_layers"] = trace.geometry().num_layers();
  j["total_neurons"] = trace.geometry().total_neurons();
  j["threshold"] = round_sig9(o.threshold);
  j["metrics"] = to_json(metrics);
  j["layerwise"] = to_json(profile);
  j["sklr"] = regions.sklr();
  j["overlap"] = {{"union_size", overlap.union_size}, {"shared_neurons", overlap.shared}};
  j["language_sizes"] = to_json(sizes);
  j["layer_histogram"] = histogram_json(regions, histogram);

  const auto blocks = reorder(map, language_block_order(trace.samples()));
  std::filesystem::create_directories(o.out_dir);
  const std::filesystem::path dir(o.out_dir);
  write_file_atomic(dir / "report.json", dump(j));
  write_file_atomic(dir / "regions.json", dump(to_json(regions)));
  write_file_atomic(dir / "layerwise.csv", profile_csv(profile));
  write_file_atomic(dir / "histogram.csv", histogram_csv(regions, histogram));
  write_file_atomic(dir / "similarity_blocks.csv", similarity_csv(blocks));
  return kOk;
}

}  // namespace detail

// Returns the process exit status; errors go to `err` as one JSON line.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  detail::Options o;
  CLI::App app{"Key linguistic region and semantic alignment analysis of transformer activation traces", "lingua"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--threads", o.threads, "Worker threads (0: LINGUA_THREADS or hardware)");

  auto* trace_cmd = app.add_subcommand("trace", "Trace utilities");
  trace_cmd->require_subcommand(1);
  trace_cmd->fallthrough();
  auto* validate = trace_cmd->add_subcommand("validate", "Check that a trace is balanced");
  validate->add_option("dir", o.trace_dir, "Trace directory")->required();
  validate->add_option("--out", o.out, "Report path (default stdout)");

  auto* sim = app.add_subcommand("similarity", "Pairwise cosine similarity map");
  sim->add_option("dir", o.trace_dir, "Trace directory")->required();
  sim->add_option("--out", o.out, "Output path (default stdout)");
  sim->add_option("--format", o.format, "csv | json | raw (f32le + .json sidecar)");
  sim->add_option("--layer", o.layer, "Single-layer map");
  sim->add_option("--order", o.order, "trace | blocks (language blocks, semantics aligned)");

  auto* met = app.add_subcommand("metrics", "LRDS / SADS / per-language average similarity");
  met->add_option("dirs", o.trace_dirs, "Trace directories (several: emit a series)")->required();
  met->add_flag("--layerwise", o.layerwise, "Add the per-layer profile");
  met->add_option("--labels", o.labels, "Series labels, one per trace")->delimiter(',');
  met->add_option("--threshold", o.threshold, "Key-region threshold used for series SKLR");
  met->add_option("--out", o.out, "Output path (default stdout)");
  met->add_option("--format", o.format, "json | csv");

  auto* probe = app.add_subcommand("probe", "Locate key linguistic regions");
  probe->add_option("dir", o.trace_dir, "Trace directory")->required();
  probe->add_option("--threshold", o.threshold, "z-score threshold (strict >)");
  probe->add_option("--out", o.out, "regions.json path (default stdout)");
  probe->add_option("--histogram", o.histogram_out, "Per-layer counts CSV");
  probe->add_option("--sizes", o.sizes_out, "Per-language region sizes JSON");

  auto* mask = app.add_subcommand("mask", "Build a deactivation mask");
  mask->add_option("--region", o.region_language, "Language whose key region is masked");
  mask->add_option("--regions", o.regions_file, "regions.json from probe");
  mask->add_option("--random", o.random_fraction, "Fraction of all neurons to mask at random");
  mask->add_option("--seed", o.seed, "Seed for --random");
  mask->add_option("--geometry", o.geometry_source, "Trace directory or JSON carrying the geometry");
  mask->add_option("--num-layers", o.num_layers, "Uniform geometry: layer count");
  mask->add_option("--width", o.layer_width, "Uniform geometry: neurons per layer");
  mask->add_option("--model", o.model_name, "Model name for a uniform geometry");
  mask->add_option("--out", o.out, "Mask path (default stdout)");

  auto* delta = app.add_subcommand("delta-table", "Perplexity increase table from masked runs");
  delta->add_option("input", o.input_file, "JSON with baseline and runs")->required();
  delta->add_option("--out", o.out, "CSV path (default stdout)");
  delta->add_option("--json", o.json_out, "Unrounded JSON path");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic trace with planted regions");
  synth->add_option("--preset", o.preset, "desk");
  synth->add_option("--seed", o.seed, "Generator seed");
  synth->add_option("--out", o.out, "Output trace directory")->required();
  synth->add_option("--beta", o.beta, "Language boost");
  synth->add_option("--gamma", o.gamma, "Semantic weight");
  synth->add_option("--noise", o.noise, "Noise sigma");
  synth->add_option("--samples", o.samples, "Samples per language");
  synth->add_option("--languages", o.languages, "Language codes")->delimiter(',');
  synth->add_option("--region-size", o.region_size, "Planted neurons per language");
  synth->add_option("--region-layers", o.region_layers, "Layers holding planted regions")->delimiter(',');
  synth->add_option("--semantic-layers", o.semantic_layers, "Layers carrying semantic signal")->delimiter(',');
  synth->add_option("--tokens", o.tokens, "Tokens per sample");
  synth->add_option("--num-layers", o.num_layers, "Layer count");
  synth->add_option("--width", o.layer_width, "Neurons per layer");
  synth->add_option("--storage", o.storage, "pooled | per_token");

  auto* report = app.add_subcommand("report", "Metrics, regions, histograms and block-ordered similarity");
  report->add_option("dir", o.trace_dir, "Trace directory")->required();
  report->add_option("--out-dir", o.out_dir, "Output directory")->required();
  report->add_option("--threshold", o.threshold, "z-score threshold");

  try {
    std::vector<const char*> argv{"lingua"};
    for (const auto& a : args) argv.push_back(a.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << error_json("E_USAGE", e.what()) << "\n";
    return kUsage;
  }

  try {
    if (validate->parsed()) return detail::cmd_validate(o, out);
    if (sim->parsed()) return detail::cmd_similarity(o, out);
    if (met->parsed()) return detail::cmd_metrics(o, out);
    if (probe->parsed()) return detail::cmd_probe(o, out);
    if (mask->parsed()) return detail::cmd_mask(o, out);
    if (delta->parsed()) return detail::cmd_delta_table(o, out);
    if (synth->parsed()) return detail::cmd_synth(o, out);
    if (report->parsed()) return detail::cmd_report(o, out);
    throw Error(ErrorCode::usage, "no subcommand");
  } catch (const Error& e) {
    err << error_json(error_name(e.code()), e.message()) << "\n";
    return exit_code(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    err << error_json("E_IO", e.what()) << "\n";
    return kFormat;
  } catch (const std::exception& e) {
    err << error_json("E_INTERNAL", e.what()) << "\n";
    return kInternal;
  }
}

}  // namespace lingua::cli
