#pragma once

// Command-line entry point. Subcommands:
//   fit-pca     fit the N->3 spectral projector on a corpus
//   synthesize  run one exemplar-based synthesis
//   evaluate    compute the metric report for an (exemplar, synthesis) pair
//   experiment  run a plan over a corpus (tables + band-wise figures)
//   batch-study batch-size ablation for the stochastic objective
//   visualize   pooled 3-channel PNG of a multispectral image
// Exit codes: 0 success, 1 usage/config error, 2 partial failure.
// Every run writes a snapshot of its resolved configuration next to its
// outputs, sufficient to reproduce the run.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mstex/error.hpp"
#include "mstex/harness.hpp"
#include "mstex/image_io.hpp"
#include "mstex/metrics.hpp"
#include "mstex/pca.hpp"
#include "mstex/synthesis.hpp"

namespace mstex::cli {

namespace detail {

inline std::vector<int> parse_int_list(const std::string& csv) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stoi(item));
  }
  return out;
}

inline std::array<std::vector<int>, 3> parse_groups(const std::string& spec) {
  std::array<std::vector<int>, 3> groups;
  std::stringstream ss(spec);
  std::string part;
  int idx = 0;
  while (std::getline(ss, part, ';')) {
    require(idx < 3, "expected exactly 3 pooling groups");
    groups[idx++] = parse_int_list(part);
  }
  require(idx == 3, "expected exactly 3 pooling groups");
  return groups;
}

inline std::vector<std::string> expand_corpus_args(const std::vector<std::string>& args) {
  std::vector<std::string> files;
  for (const auto& arg : args) {
    if (std::filesystem::is_directory(arg)) {
      std::vector<std::string> scanned;
      for (const auto& entry : std::filesystem::directory_iterator(arg)) {
        if (!entry.is_regular_file()) continue;
        const std::string p = entry.path().string();
        if (has_suffix(p, ".tif") || has_suffix(p, ".tiff") || has_suffix(p, ".json"))
          scanned.push_back(p);
      }
      std::sort(scanned.begin(), scanned.end());
      files.insert(files.end(), scanned.begin(), scanned.end());
    } else {
      files.push_back(arg);
    }
  }
  return files;
}

inline void write_invocation_snapshot(const std::string& path,
                                      const std::string& subcommand,
                                      const nlohmann::json& resolved) {
  nlohmann::json j;
  j["tool"] = "mstex";
  j["subcommand"] = subcommand;
  j["config"] = resolved;
  std::filesystem::create_directories(std::filesystem::path(path).parent_path().empty()
                                          ? "."
                                          : std::filesystem::path(path).parent_path().string());
  std::ofstream out(path);
  out << j.dump(2) << "\n";
}

// Apply "dotted.key=value" overrides onto the plan JSON; flags win over the
// file. Values parse as JSON when possible, else as strings.
inline void apply_override(nlohmann::json& plan, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0,
          "override must look like key=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  nlohmann::json* node = &plan;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  require(!parts.empty(), "empty override key");
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
  (*node)[parts.back()] = value;
}

}  // namespace detail

inline int run(std::vector<std::string> args) {
  CLI::App app{"multispectral texture synthesis via RGB CNN style distances"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  // --- fit-pca ------------------------------------------------------------
  auto* fit = app.add_subcommand("fit-pca", "fit the spectral projector on a corpus");
  std::vector<std::string> fit_corpus;
  std::string fit_out = "projector.json";
  std::string fit_bands;
  int fit_expected_bands = 0;
  fit->add_option("--corpus", fit_corpus, "exemplar files or directories")->required();
  fit->add_option("--out", fit_out, "output projector file");
  fit->add_option("--bands", fit_bands, "band selection, comma separated indices");
  fit->add_option("--expected-bands", fit_expected_bands,
                  "require this band count on load (0 = any)");

  // --- synthesize -----------------------------------------------------------
  auto* synth = app.add_subcommand("synthesize", "exemplar-based texture synthesis");
  std::string sy_exemplar, sy_weights, sy_method = "stochastic", sy_out = "out";
  std::string sy_projector, sy_palette, sy_stat = "covariance", sy_taps;
  int sy_iters = 500, sy_batch = 10, sy_width = 0, sy_height = 0;
  std::uint64_t sy_seed = 0;
  bool sy_init_exemplar = false;
  synth->add_option("--exemplar", sy_exemplar, "exemplar image")->required();
  synth->add_option("--weights", sy_weights, "network weights file")->required();
  synth->add_option("--method", sy_method, "stochastic|pca|pca_color|rgb");
  synth->add_option("--iters", sy_iters, "optimizer iterations");
  synth->add_option("--batch", sy_batch, "triplets per iteration (stochastic)");
  synth->add_option("--seed", sy_seed, "random seed");
  synth->add_option("--projector", sy_projector, "projector file (pca modes)");
  synth->add_option("--palette", sy_palette, "palette PNG (pca_color)");
  synth->add_option("--out", sy_out, "output directory");
  synth->add_option("--width", sy_width, "output width (0 = exemplar)");
  synth->add_option("--height", sy_height, "output height (0 = exemplar)");
  synth->add_option("--stat", sy_stat, "covariance|gram");
  synth->add_option("--taps", sy_taps, "tap layers, comma separated conv ordinals");
  synth->add_flag("--init-exemplar", sy_init_exemplar,
                  "debug: initialize with the exemplar itself");

  // --- evaluate -------------------------------------------------------------
  auto* eval = app.add_subcommand("evaluate", "metric report for an image pair");
  std::string ev_exemplar, ev_synthesis, ev_weights, ev_projector, ev_out;
  int ev_directions = 1000;
  std::uint64_t ev_dirs_seed = 1234;
  eval->add_option("--exemplar", ev_exemplar, "exemplar image")->required();
  eval->add_option("--synthesis", ev_synthesis, "synthesized image")->required();
  eval->add_option("--weights", ev_weights, "network weights file")->required();
  eval->add_option("--projector", ev_projector, "projector file (enables L_style^PCA)");
  eval->add_option("--directions", ev_directions, "sliced Wasserstein directions");
  eval->add_option("--dirs-seed", ev_dirs_seed, "direction sampling seed");
  eval->add_option("--out", ev_out, "report JSON path (default: stdout)");

  // --- experiment -----------------------------------------------------------
  auto* exp = app.add_subcommand("experiment", "run a corpus plan");
  std::string ex_plan;
  std::vector<std::string> ex_overrides;
  std::string ex_out_override;
  bool ex_rgb = false;
  exp->add_option("--plan", ex_plan, "plan JSON file")->required();
  exp->add_option("--set", ex_overrides, "plan overrides, dotted.key=value");
  exp->add_option("--out", ex_out_override, "override the plan output_dir");
  exp->add_flag("--rgb", ex_rgb, "RGB-band comparison (adds the rgb_baseline row)");

  // --- batch-study ----------------------------------------------------------
  auto* study = app.add_subcommand("batch-study", "stochastic batch-size ablation");
  std::string st_plan, st_sizes = "1,3,5,7,10";
  std::vector<std::string> st_overrides;
  std::string st_out_override;
  study->add_option("--plan", st_plan, "plan JSON file")->required();
  study->add_option("--batch-sizes", st_sizes, "comma separated batch sizes");
  study->add_option("--set", st_overrides, "plan overrides, dotted.key=value");
  study->add_option("--out", st_out_override, "override the plan output_dir");

  // --- visualize ------------------------------------------------------------
  auto* vis = app.add_subcommand("visualize", "pooled 3-channel PNG");
  std::string vi_input, vi_out = "visualization.png", vi_groups;
  vis->add_option("--input", vi_input, "multispectral image")->required();
  vis->add_option("--out", vi_out, "output PNG path");
  vis->add_option("--groups", vi_groups,
                  "three ';'-separated groups of comma separated band indices "
                  "(default: contiguous thirds)");

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (fit->parsed()) {
      const auto files = detail::expand_corpus_args(fit_corpus);
      require(!files.empty(), "fit-pca: corpus matched no files");
      std::vector<MultispectralImage> corpus;
      for (const auto& f : files) {
        auto img = load_multispectral(
            f, fit_expected_bands > 0 ? std::optional<int>(fit_expected_bands)
                                      : std::nullopt);
        if (!fit_bands.empty())
          img = select_bands(img, BandSelection{detail::parse_int_list(fit_bands)});
        corpus.push_back(std::move(img));
      }
      const Projector projector = fit_pca(corpus, "cli:" + std::to_string(files.size()) +
                                                      "-image-corpus");
      save_projector(projector, fit_out);
      std::cout << "k\teigenvalue\tratio\tcumulative\n";
      const double total = projector.eigenvalues.sum();
      for (int k = 1; k <= projector.eigenvalues.size(); ++k) {
        std::cout.precision(6);
        std::cout << k << "\t" << projector.eigenvalues(k - 1) << "\t"
                  << projector.eigenvalues(k - 1) / total << "\t"
                  << explained_variance_ratio(projector, k) << "\n";
      }
      nlohmann::json snapshot = {{"corpus", files},
                                 {"out", fit_out},
                                 {"bands", fit_bands},
                                 {"expected_bands", fit_expected_bands}};
      detail::write_invocation_snapshot(fit_out + ".invocation.json", "fit-pca", snapshot);
      return 0;
    }

    if (synth->parsed()) {
      const auto exemplar = load_multispectral(sy_exemplar);
      auto fx = FeatureExtractor::load(sy_weights);
      if (!sy_taps.empty()) fx.set_tap_layers(detail::parse_int_list(sy_taps));
      SynthesisConfig cfg;
      cfg.iterations = sy_iters;
      cfg.batch_size = sy_batch;
      cfg.rng_seed = sy_seed;
      cfg.out_width = sy_width;
      cfg.out_height = sy_height;
      cfg.init_with_exemplar = sy_init_exemplar;
      cfg.statistic = mstex::detail::parse_stat_kind(sy_stat);
      std::optional<Projector> projector;
      std::optional<PaletteImage> palette;
      if (sy_method == "stochastic") {
        cfg.objective = Objective::Stochastic;
      } else if (sy_method == "pca" || sy_method == "pca_color") {
        cfg.objective =
            sy_method == "pca" ? Objective::Projected : Objective::ProjectedColor;
        require(!sy_projector.empty(), "--projector is required for " + sy_method);
        projector = load_projector(sy_projector);
        if (sy_method == "pca_color") {
          require(!sy_palette.empty(), "--palette is required for pca_color");
          palette = load_png(sy_palette);
        }
      } else if (sy_method == "rgb") {
        cfg.objective = Objective::RgbPlain;
      } else {
        throw Error("unknown method '" + sy_method +
                    "' (want stochastic|pca|pca_color|rgb)");
      }
      std::filesystem::create_directories(sy_out);
      const auto result =
          synthesize(exemplar, cfg, fx, projector ? &*projector : nullptr,
                     palette ? &*palette : nullptr);
      save_multispectral(result.image, sy_out + "/synthesis.tif");
      std::ofstream(sy_out + "/trace.csv") << result.trace.to_csv();
      nlohmann::json snapshot = cfg.to_json();
      snapshot["exemplar"] = sy_exemplar;
      snapshot["weights"] = sy_weights;
      snapshot["method"] = sy_method;
      snapshot["projector"] = sy_projector;
      snapshot["palette"] = sy_palette;
      snapshot["taps"] = sy_taps;
      detail::write_invocation_snapshot(sy_out + "/config_snapshot.json", "synthesize",
                                        snapshot);
      std::cerr << "[mstex] synthesize done: final loss " << result.trace.final_loss
                << " after " << result.trace.rows.size() << " iterations\n";
      return 0;
    }

    if (eval->parsed()) {
      const auto exemplar = load_multispectral(ev_exemplar);
      const auto synthesis = load_multispectral(ev_synthesis);
      const auto fx = FeatureExtractor::load(ev_weights);
      std::optional<Projector> projector;
      if (!ev_projector.empty()) projector = load_projector(ev_projector);
      const auto dirs =
          DirectionSet::sample(exemplar.bands, ev_directions, ev_dirs_seed);
      const auto report = evaluate_pair(exemplar, synthesis, fx,
                                        projector ? &*projector : nullptr, dirs);
      const std::string text = report.to_json().dump(2);
      if (ev_out.empty()) {
        std::cout << text << "\n";
      } else {
        std::ofstream(ev_out) << text << "\n";
        nlohmann::json snapshot = {{"exemplar", ev_exemplar},
                                   {"synthesis", ev_synthesis},
                                   {"weights", ev_weights},
                                   {"projector", ev_projector},
                                   {"directions", ev_directions},
                                   {"dirs_seed", ev_dirs_seed}};
        detail::write_invocation_snapshot(ev_out + ".invocation.json", "evaluate",
                                          snapshot);
      }
      return 0;
    }

    if (exp->parsed() || study->parsed()) {
      const bool is_study = study->parsed();
      const std::string plan_path = is_study ? st_plan : ex_plan;
      const auto& overrides = is_study ? st_overrides : ex_overrides;
      const std::string out_override = is_study ? st_out_override : ex_out_override;

      std::ifstream in(plan_path);
      require(in.good(), "cannot open plan file: " + plan_path);
      nlohmann::json plan_json;
      try {
        in >> plan_json;
      } catch (const std::exception& e) {
        throw Error("invalid plan JSON " + plan_path + ": " + e.what());
      }
      for (const auto& assignment : overrides)
        detail::apply_override(plan_json, assignment);
      if (!out_override.empty()) plan_json["output_dir"] = out_override;
      const ExperimentPlan plan = parse_plan(plan_json);

      ExperimentResult result;
      if (is_study) {
        result = batch_size_study(plan, detail::parse_int_list(st_sizes));
      } else if (ex_rgb) {
        result = rgb_comparison(plan);
      } else {
        result = run_experiment(plan);
      }
      std::cerr << "[mstex] " << (is_study ? "batch-study" : "experiment")
                << " done: " << result.completed << " computed, " << result.skipped
                << " skipped, " << result.failures << " failed\n";
      std::cout << result.table.to_text();
      return result.failures > 0 ? 2 : 0;
    }

    if (vis->parsed()) {
      const auto img = load_multispectral(vi_input);
      const auto groups = vi_groups.empty() ? default_pooling_groups(img.bands)
                                            : detail::parse_groups(vi_groups);
      save_png(pooled_visualization(img, groups), vi_out);
      nlohmann::json snapshot = {{"input", vi_input}, {"groups", vi_groups}};
      detail::write_invocation_snapshot(vi_out + ".invocation.json", "visualize",
                                        snapshot);
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "[mstex] error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "[mstex] error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

inline int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(std::move(args));
}

}  // namespace mstex::cli
