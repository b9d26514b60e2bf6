#pragma once

// Corpus-level experiment orchestration.
//
// A plan file is JSON:
// {
//   "weights": "net.mnet",
//   "corpus": ["a.tif", ...],            // or "corpus_dir": "dir/"
//   "band_selection": [0, 1, 2, ...],    // optional
//   "methods": ["stochastic", "pca", "pca_color:pebbles"],
//   "palettes": {"pebbles": "pebbles.png"},
//   "projector": "fit",                  // or a projector file path
//   "seeds": [0],
//   "synthesis": {"iterations": 500, "batch_size": 10,
//                 "statistic": "covariance", "taps": [1, 3, 5, 8, 11]},
//   "metrics": {"directions": 1000, "seed": 1234},
//   "rgb_bands": [1, 2, 3],
//   "output_dir": "out",
//   "jobs": 1
// }
// Unknown keys are rejected. Per-image results are append-only JSON lines in
// <output_dir>/records.jsonl keyed by (exemplar_id, method, seed); completed
// records are skipped on rerun, and every table is an exact mean over the
// persisted records.

#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "mstex/error.hpp"
#include "mstex/image.hpp"
#include "mstex/image_io.hpp"
#include "mstex/metrics.hpp"
#include "mstex/pca.hpp"
#include "mstex/plot.hpp"
#include "mstex/style.hpp"
#include "mstex/synthesis.hpp"

namespace mstex {

struct ExperimentPlan {
  std::string weights_path;
  std::vector<std::string> corpus;
  std::string corpus_dir;
  std::vector<int> band_selection;
  std::vector<std::string> methods;
  std::map<std::string, std::string> palettes;
  std::string projector = "fit";
  std::vector<std::uint64_t> seeds = {0};
  SynthesisConfig synthesis;
  std::vector<int> tap_layers;  // optional override of the weights default
  int metric_directions = 1000;
  std::uint64_t metric_seed = 1234;
  std::vector<int> rgb_bands = {1, 2, 3};
  std::string output_dir;
  int jobs = 1;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["weights"] = weights_path;
    j["corpus"] = corpus;
    if (!corpus_dir.empty()) j["corpus_dir"] = corpus_dir;
    if (!band_selection.empty()) j["band_selection"] = band_selection;
    j["methods"] = methods;
    j["palettes"] = palettes;
    j["projector"] = projector;
    j["seeds"] = seeds;
    nlohmann::json syn;
    syn["iterations"] = synthesis.iterations;
    syn["batch_size"] = synthesis.batch_size;
    syn["statistic"] =
        synthesis.statistic == StatKind::Covariance ? "covariance" : "gram";
    syn["sample_with_replacement"] = synthesis.sample_with_replacement;
    if (!synthesis.style_weights.empty()) syn["style_weights"] = synthesis.style_weights;
    if (synthesis.out_height > 0) syn["out_height"] = synthesis.out_height;
    if (synthesis.out_width > 0) syn["out_width"] = synthesis.out_width;
    syn["optimizer"] = {{"history", synthesis.optimizer.history},
                        {"max_evals_per_step", synthesis.optimizer.max_evals_per_step},
                        {"wolfe_c1", synthesis.optimizer.wolfe_c1},
                        {"wolfe_c2", synthesis.optimizer.wolfe_c2}};
    if (!tap_layers.empty()) syn["taps"] = tap_layers;
    j["synthesis"] = syn;
    j["metrics"] = {{"directions", metric_directions}, {"seed", metric_seed}};
    j["rgb_bands"] = rgb_bands;
    j["output_dir"] = output_dir;
    j["jobs"] = jobs;
    return j;
  }
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j,
                                const std::set<std::string>& known,
                                const std::string& where) {
  for (const auto& [key, value] : j.items())
    require(known.count(key) > 0, "unknown key '" + key + "' in " + where);
}

inline StatKind parse_stat_kind(const std::string& s) {
  if (s == "covariance") return StatKind::Covariance;
  if (s == "gram") return StatKind::Gram;
  throw Error("unknown statistic kind '" + s + "' (want covariance|gram)");
}

// "stochastic_b<k>" labels from the batch-size study are plain stochastic
// runs; the batch size itself lives in the synthesis config.
inline Objective parse_objective_method(const std::string& method) {
  if (method.rfind("stochastic", 0) == 0) return Objective::Stochastic;
  if (method == "pca") return Objective::Projected;
  if (method.rfind("pca_color:", 0) == 0) return Objective::ProjectedColor;
  if (method == "rgb_baseline") return Objective::RgbPlain;
  throw Error("unknown method '" + method +
              "' (want stochastic|pca|pca_color:<palette>|rgb_baseline)");
}

}  // namespace detail

inline void apply_synthesis_json(const nlohmann::json& j, SynthesisConfig* cfg,
                                 std::vector<int>* taps) {
  detail::reject_unknown_keys(
      j,
      {"iterations", "batch_size", "rng_seed", "statistic", "taps", "out_height",
       "out_width", "sample_with_replacement", "style_weights", "optimizer"},
      "synthesis");
  if (j.contains("iterations")) cfg->iterations = j["iterations"].get<int>();
  if (j.contains("batch_size")) cfg->batch_size = j["batch_size"].get<int>();
  if (j.contains("rng_seed")) cfg->rng_seed = j["rng_seed"].get<std::uint64_t>();
  if (j.contains("statistic"))
    cfg->statistic = detail::parse_stat_kind(j["statistic"].get<std::string>());
  if (j.contains("out_height")) cfg->out_height = j["out_height"].get<int>();
  if (j.contains("out_width")) cfg->out_width = j["out_width"].get<int>();
  if (j.contains("sample_with_replacement"))
    cfg->sample_with_replacement = j["sample_with_replacement"].get<bool>();
  if (j.contains("style_weights"))
    cfg->style_weights = j["style_weights"].get<std::vector<double>>();
  if (j.contains("taps") && taps) *taps = j["taps"].get<std::vector<int>>();
  if (j.contains("optimizer")) {
    const auto& opt = j["optimizer"];
    detail::reject_unknown_keys(
        opt, {"history", "max_evals_per_step", "wolfe_c1", "wolfe_c2"}, "optimizer");
    if (opt.contains("history")) cfg->optimizer.history = opt["history"].get<int>();
    if (opt.contains("max_evals_per_step"))
      cfg->optimizer.max_evals_per_step = opt["max_evals_per_step"].get<int>();
    if (opt.contains("wolfe_c1")) cfg->optimizer.wolfe_c1 = opt["wolfe_c1"].get<double>();
    if (opt.contains("wolfe_c2")) cfg->optimizer.wolfe_c2 = opt["wolfe_c2"].get<double>();
  }
}

inline ExperimentPlan parse_plan(const nlohmann::json& j) {
  detail::reject_unknown_keys(
      j,
      {"weights", "corpus", "corpus_dir", "band_selection", "methods", "palettes",
       "projector", "seeds", "synthesis", "metrics", "rgb_bands", "output_dir", "jobs"},
      "plan");
  ExperimentPlan plan;
  plan.weights_path = j.value("weights", "");
  if (j.contains("corpus")) plan.corpus = j["corpus"].get<std::vector<std::string>>();
  plan.corpus_dir = j.value("corpus_dir", "");
  if (j.contains("band_selection"))
    plan.band_selection = j["band_selection"].get<std::vector<int>>();
  if (j.contains("methods")) plan.methods = j["methods"].get<std::vector<std::string>>();
  if (j.contains("palettes"))
    plan.palettes = j["palettes"].get<std::map<std::string, std::string>>();
  plan.projector = j.value("projector", "fit");
  if (j.contains("seeds")) plan.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  if (j.contains("synthesis"))
    apply_synthesis_json(j["synthesis"], &plan.synthesis, &plan.tap_layers);
  if (j.contains("metrics")) {
    detail::reject_unknown_keys(j["metrics"], {"directions", "seed"}, "metrics");
    plan.metric_directions = j["metrics"].value("directions", 1000);
    plan.metric_seed = j["metrics"].value("seed", std::uint64_t{1234});
  }
  if (j.contains("rgb_bands")) plan.rgb_bands = j["rgb_bands"].get<std::vector<int>>();
  plan.output_dir = j.value("output_dir", "");
  plan.jobs = j.value("jobs", 1);
  return plan;
}

inline ExperimentPlan load_plan(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open plan file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw Error("invalid plan JSON " + path + ": " + e.what());
  }
  return parse_plan(j);
}

// ---------------------------------------------------------------------------
// Records

struct PairRecord {
  std::string exemplar_id;
  std::string method;
  std::uint64_t seed = 0;
  int bands = 0;
  std::string image_path;  // relative to the output dir
  MetricsReport report;

  std::string key() const {
    return exemplar_id + "|" + method + "|" + std::to_string(seed);
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["exemplar_id"] = exemplar_id;
    j["method"] = method;
    j["seed"] = seed;
    j["bands"] = bands;
    j["image"] = image_path;
    j["metrics"] = report.scalars;
    j["per_band"] = report.per_band;
    return j;
  }

  static PairRecord from_json(const nlohmann::json& j) {
    PairRecord r;
    r.exemplar_id = j.at("exemplar_id").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.bands = j.value("bands", 0);
    r.image_path = j.value("image", "");
    r.report.scalars = j.at("metrics").get<std::map<std::string, double>>();
    if (j.contains("per_band"))
      r.report.per_band =
          j["per_band"].get<std::map<std::string, std::map<std::string, double>>>();
    return r;
  }
};

inline std::vector<PairRecord> load_records(const std::string& path) {
  std::vector<PairRecord> records;
  std::ifstream in(path);
  if (!in.good()) return records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      records.push_back(PairRecord::from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw Error("bad record at " + path + ":" + std::to_string(line_no) + ": " +
                  e.what());
    }
  }
  return records;
}

// ---------------------------------------------------------------------------
// Aggregation

struct AggregateTable {
  std::vector<std::string> methods;                    // row order
  std::vector<std::string> metrics;                    // column order
  std::map<std::string, std::map<std::string, double>> mean;  // method -> metric
  std::map<std::string, std::map<std::string, double>> stddev;
  std::map<std::string, int> count;  // records per method

  std::string to_csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "method";
    for (const auto& m : metrics) out << "," << m;
    out << ",n\n";
    for (const auto& method : methods) {
      out << method;
      for (const auto& m : metrics) {
        out << ",";
        const auto row = mean.find(method);
        if (row != mean.end() && row->second.count(m)) out << row->second.at(m);
      }
      out << "," << (count.count(method) ? count.at(method) : 0) << "\n";
    }
    return out.str();
  }

  std::string to_text() const {
    std::ostringstream out;
    out.precision(6);
    out << "method";
    for (const auto& m : metrics) out << "\t" << m;
    out << "\n";
    for (const auto& method : methods) {
      out << method;
      for (const auto& m : metrics) {
        out << "\t";
        const auto row = mean.find(method);
        if (row != mean.end() && row->second.count(m))
          out << row->second.at(m) << "±"
              << (stddev.count(method) && stddev.at(method).count(m)
                      ? stddev.at(method).at(m)
                      : 0.0);
        else
          out << "-";
      }
      out << "\n";
    }
    return out.str();
  }
};

// Exact means (and stds) of the persisted records, one row per method.
inline AggregateTable aggregate_records(const std::vector<PairRecord>& records,
                                        const std::vector<std::string>& method_order) {
  AggregateTable table;
  table.methods = method_order;
  std::set<std::string> metric_names;
  for (const auto& r : records)
    for (const auto& [k, v] : r.report.scalars) metric_names.insert(k);
  table.metrics.assign(metric_names.begin(), metric_names.end());
  for (const auto& method : method_order) {
    std::map<std::string, std::vector<double>> columns;
    for (const auto& r : records)
      if (r.method == method)
        for (const auto& [k, v] : r.report.scalars) columns[k].push_back(v);
    int n = 0;
    for (const auto& r : records)
      if (r.method == method) ++n;
    table.count[method] = n;
    for (const auto& [k, values] : columns) {
      double m = 0.0;
      for (double v : values) m += v;
      m /= double(values.size());
      double var = 0.0;
      for (double v : values) var += (v - m) * (v - m);
      table.mean[method][k] = m;
      table.stddev[method][k] =
          values.size() > 1 ? std::sqrt(var / double(values.size() - 1)) : 0.0;
    }
  }
  return table;
}

// Per-band means in long format: band,method,metric,value.
inline std::string bandwise_report_csv(const std::vector<PairRecord>& records,
                                       const std::vector<std::string>& method_order) {
  // band label -> method -> family -> accumulated values
  std::map<std::string, std::map<std::string, std::map<std::string, std::pair<double, int>>>>
      acc;
  std::vector<std::string> band_order;
  for (const auto& r : records) {
    for (const auto& [family, bands] : r.report.per_band)
      for (const auto& [label, value] : bands) {
        auto& cell = acc[label][r.method][family];
        cell.first += value;
        cell.second += 1;
        if (std::find(band_order.begin(), band_order.end(), label) == band_order.end())
          band_order.push_back(label);
      }
  }
  std::ostringstream out;
  out.precision(17);
  out << "band,method,metric,value\n";
  for (const auto& label : band_order)
    for (const auto& method : method_order) {
      if (!acc.count(label) || !acc.at(label).count(method)) continue;
      for (const auto& [family, cell] : acc.at(label).at(method))
        out << label << "," << method << "," << family << ","
            << cell.first / cell.second << "\n";
    }
  return out.str();
}

// One chart per per-band metric family: x = band position, one series per
// method.
inline void render_bandwise_figures(const std::vector<PairRecord>& records,
                                    const std::vector<std::string>& method_order,
                                    const std::vector<std::string>& band_order,
                                    const std::string& out_prefix) {
  std::set<std::string> families;
  for (const auto& r : records)
    for (const auto& [family, bands] : r.report.per_band) families.insert(family);
  for (const auto& family : families) {
    std::vector<PlotSeries> series;
    for (const auto& method : method_order) {
      PlotSeries s;
      s.name = method;
      for (std::size_t b = 0; b < band_order.size(); ++b) {
        double sum = 0.0;
        int n = 0;
        for (const auto& r : records) {
          if (r.method != method) continue;
          const auto fam = r.report.per_band.find(family);
          if (fam == r.report.per_band.end()) continue;
          const auto it = fam->second.find(band_order[b]);
          if (it == fam->second.end()) continue;
          sum += it->second;
          ++n;
        }
        if (n > 0) s.points.push_back({double(b), sum / n});
      }
      if (!s.points.empty()) series.push_back(std::move(s));
    }
    if (series.empty()) continue;
    std::string tag = family;
    for (char& c : tag)
      if (c == '^' || c == '/') c = '_';
    save_png(render_line_chart(series), out_prefix + tag + ".png");
    std::ofstream legend(out_prefix + tag + ".legend.txt");
    legend << chart_legend(series);
  }
}

// ---------------------------------------------------------------------------
// Experiment runner

struct ExperimentResult {
  AggregateTable table;
  int completed = 0;
  int skipped = 0;
  int failures = 0;
  std::string records_path;
};

namespace detail {

struct WorkItem {
  std::size_t exemplar_index;
  std::string method;
  std::uint64_t seed;
};

inline std::vector<std::string> scan_corpus_dir(const std::string& dir) {
  std::vector<std::string> files;
  require(std::filesystem::is_directory(dir), "corpus_dir is not a directory: " + dir);
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string p = entry.path().string();
    if (has_suffix(p, ".tif") || has_suffix(p, ".tiff") || has_suffix(p, ".json"))
      files.push_back(p);
  }
  std::sort(files.begin(), files.end());
  return files;
}

inline std::string sanitize_for_filename(std::string s) {
  for (char& c : s)
    if (c == ':' || c == '/' || c == '\\' || c == ' ') c = '-';
  return s;
}

}  // namespace detail

// Shared context resolved once per run.
struct ExperimentContext {
  ExperimentPlan plan;
  FeatureExtractor extractor;
  std::vector<MultispectralImage> corpus;  // band-selected
  std::optional<Projector> projector;
  std::map<std::string, PaletteImage> palettes;
  DirectionSet directions;

  static ExperimentContext prepare(const ExperimentPlan& plan, bool need_projector) {
    require(!plan.output_dir.empty(), "plan needs an output_dir");
    require(!plan.methods.empty(), "plan needs at least one method");
    require(!plan.weights_path.empty(), "plan needs a weights file");

    ExperimentContext ctx{plan, FeatureExtractor::load(plan.weights_path), {}, {}, {}, {}};
    if (!plan.tap_layers.empty()) ctx.extractor.set_tap_layers(plan.tap_layers);

    std::vector<std::string> files = plan.corpus;
    if (!plan.corpus_dir.empty()) {
      const auto scanned = detail::scan_corpus_dir(plan.corpus_dir);
      files.insert(files.end(), scanned.begin(), scanned.end());
    }
    require(!files.empty(), "plan corpus is empty");
    for (const auto& f : files) {
      MultispectralImage img = load_multispectral(f);
      if (!plan.band_selection.empty())
        img = select_bands(img, BandSelection{plan.band_selection});
      ctx.corpus.push_back(std::move(img));
    }
    const int bands = ctx.corpus.front().bands;
    for (const auto& img : ctx.corpus)
      require(img.bands == bands, "corpus band counts are inconsistent");

    for (const auto& [name, path] : plan.palettes)
      ctx.palettes.emplace(name, load_png(path));
    for (const auto& method : plan.methods) {
      if (method.rfind("pca_color:", 0) == 0) {
        const std::string palette = method.substr(std::string("pca_color:").size());
        require(ctx.palettes.count(palette) > 0,
                "method '" + method + "' references unknown palette '" + palette + "'");
      }
    }

    std::filesystem::create_directories(plan.output_dir);
    std::filesystem::create_directories(plan.output_dir + "/images");

    if (need_projector) {
      if (plan.projector == "fit") {
        ctx.projector = fit_pca(ctx.corpus, "plan:" + plan.output_dir);
        save_projector(*ctx.projector, plan.output_dir + "/projector.json");
      } else {
        ctx.projector = load_projector(plan.projector);
        require(ctx.projector->input_bands() == bands,
                "projector does not match the corpus band count");
      }
    }
    ctx.directions = DirectionSet::sample(bands, plan.metric_directions, plan.metric_seed);
    return ctx;
  }
};

namespace detail {

inline PairRecord run_work_item(const ExperimentContext& ctx, const WorkItem& item,
                                bool rgb_mode) {
  const auto& plan = ctx.plan;
  const MultispectralImage& exemplar = ctx.corpus[item.exemplar_index];
  SynthesisConfig cfg = plan.synthesis;
  cfg.rng_seed = item.seed;
  cfg.objective = parse_objective_method(item.method);

  const Projector* projector =
      ctx.projector.has_value() ? &ctx.projector.value() : nullptr;
  const PaletteImage* palette = nullptr;
  if (cfg.objective == Objective::ProjectedColor) {
    const std::string name = item.method.substr(std::string("pca_color:").size());
    palette = &ctx.palettes.at(name);
  }

  MultispectralImage synthesized;
  if (rgb_mode && cfg.objective == Objective::RgbPlain) {
    const MultispectralImage exemplar3 =
        select_bands(exemplar, BandSelection{plan.rgb_bands});
    synthesized = synthesize_rgb_baseline(exemplar3, cfg, ctx.extractor).image;
  } else {
    require(cfg.objective != Objective::RgbPlain,
            "rgb_baseline is only available in the RGB comparison");
    synthesized = synthesize(exemplar, cfg, ctx.extractor, projector, palette).image;
  }

  PairRecord record;
  record.exemplar_id = exemplar.source_id;
  record.method = item.method;
  record.seed = item.seed;
  record.bands = rgb_mode ? int(plan.rgb_bands.size()) : synthesized.bands;
  record.image_path = "images/" + sanitize_for_filename(exemplar.source_id) + "__" +
                      sanitize_for_filename(item.method) + "__s" +
                      std::to_string(item.seed) + ".tif";
  save_tiff(synthesized, plan.output_dir + "/" + record.image_path);

  if (rgb_mode) {
    const BandSelection rgb{plan.rgb_bands};
    const MultispectralImage ex3 = select_bands(exemplar, rgb);
    const MultispectralImage sy3 = cfg.objective == Objective::RgbPlain
                                       ? synthesized
                                       : select_bands(synthesized, rgb);
    const DirectionSet dirs3 =
        DirectionSet::sample(3, plan.metric_directions, derive_seed(plan.metric_seed, 3));
    record.report = evaluate_pair(ex3, sy3, ctx.extractor, nullptr, dirs3,
                                  plan.synthesis.statistic);
  } else {
    record.report = evaluate_pair(exemplar, synthesized, ctx.extractor,
                                  ctx.projector.has_value() ? &*ctx.projector : nullptr,
                                  ctx.directions, plan.synthesis.statistic);
  }
  return record;
}

inline ExperimentResult run_items(const ExperimentContext& ctx,
                                  const std::vector<WorkItem>& items,
                                  const std::string& records_name, bool rgb_mode) {
  const auto& plan = ctx.plan;
  const std::string records_path = plan.output_dir + "/" + records_name;
  std::set<std::string> done;
  for (const auto& r : load_records(records_path)) done.insert(r.key());

  ExperimentResult result;
  result.records_path = records_path;

  std::vector<WorkItem> todo;
  for (const auto& item : items) {
    const std::string key = ctx.corpus[item.exemplar_index].source_id + "|" +
                            item.method + "|" + std::to_string(item.seed);
    if (done.count(key)) {
      ++result.skipped;
    } else {
      todo.push_back(item);
    }
  }

  std::ofstream records_out(records_path, std::ios::app);
  require(records_out.good(), "cannot append to " + records_path);
  const int jobs = std::max(1, plan.jobs);
  for (std::size_t start = 0; start < todo.size(); start += jobs) {
    const std::size_t end = std::min(todo.size(), start + jobs);
    std::vector<std::future<PairRecord>> futures;
    for (std::size_t i = start; i < end; ++i)
      futures.push_back(std::async(jobs == 1 ? std::launch::deferred : std::launch::async,
                                   [&ctx, item = todo[i], rgb_mode] {
                                     return run_work_item(ctx, item, rgb_mode);
                                   }));
    for (std::size_t i = 0; i < futures.size(); ++i) {
      const auto& item = todo[start + i];
      try {
        const PairRecord record = futures[i].get();
        records_out << record.to_json().dump() << "\n";
        records_out.flush();
        ++result.completed;
      } catch (const std::exception& e) {
        std::cerr << "[mstex] item failed (" << ctx.corpus[item.exemplar_index].source_id
                  << ", " << item.method << ", seed " << item.seed << "): " << e.what()
                  << "\n";
        ++result.failures;
      }
    }
  }
  records_out.close();
  return result;
}

inline std::vector<WorkItem> plan_items(const ExperimentContext& ctx,
                                        const std::vector<std::string>& methods) {
  std::vector<WorkItem> items;
  for (std::size_t e = 0; e < ctx.corpus.size(); ++e)
    for (const auto& method : methods)
      for (std::uint64_t seed : ctx.plan.seeds) items.push_back({e, method, seed});
  return items;
}

}  // namespace detail

// Full multispectral experiment: synthesize + evaluate every
// (exemplar, method, seed), then aggregate and emit tables and band-wise
// figures.
inline ExperimentResult run_experiment(const ExperimentPlan& plan) {
  for (const auto& m : plan.methods)
    require(m != "rgb_baseline", "rgb_baseline belongs to the RGB comparison");
  const ExperimentContext ctx = ExperimentContext::prepare(plan, /*need_projector=*/true);
  {
    std::ofstream snapshot(plan.output_dir + "/plan_snapshot.json");
    snapshot << plan.to_json().dump(2) << "\n";
  }
  ExperimentResult result =
      detail::run_items(ctx, detail::plan_items(ctx, plan.methods), "records.jsonl",
                        /*rgb_mode=*/false);
  const auto records = load_records(result.records_path);
  result.table = aggregate_records(records, plan.methods);
  std::ofstream(plan.output_dir + "/table.csv") << result.table.to_csv();
  std::ofstream(plan.output_dir + "/table.txt") << result.table.to_text();
  std::ofstream(plan.output_dir + "/bandwise.csv")
      << bandwise_report_csv(records, plan.methods);
  render_bandwise_figures(records, plan.methods, ctx.corpus.front().band_labels,
                          plan.output_dir + "/bandwise_");
  return result;
}

// Table II-style comparison: adds the 3-band baseline and computes every
// metric on the RGB bands of every method's output.
inline ExperimentResult rgb_comparison(const ExperimentPlan& plan) {
  require(plan.rgb_bands.size() == 3, "rgb_bands must list exactly 3 band indices");
  std::vector<std::string> methods = plan.methods;
  if (std::find(methods.begin(), methods.end(), "rgb_baseline") == methods.end())
    methods.insert(methods.begin(), "rgb_baseline");
  ExperimentPlan inner = plan;
  inner.methods = methods;
  std::vector<std::string> synth_methods;
  for (const auto& m : methods)
    if (m != "rgb_baseline") synth_methods.push_back(m);
  const bool need_projector =
      std::any_of(synth_methods.begin(), synth_methods.end(), [](const std::string& m) {
        return m == "pca" || m.rfind("pca_color:", 0) == 0;
      });
  const ExperimentContext ctx = ExperimentContext::prepare(inner, need_projector);
  {
    std::ofstream snapshot(plan.output_dir + "/plan_snapshot_rgb.json");
    snapshot << inner.to_json().dump(2) << "\n";
  }
  ExperimentResult result = detail::run_items(ctx, detail::plan_items(ctx, methods),
                                              "records_rgb.jsonl", /*rgb_mode=*/true);
  const auto records = load_records(result.records_path);
  result.table = aggregate_records(records, methods);
  std::ofstream(plan.output_dir + "/table_rgb.csv") << result.table.to_csv();
  std::ofstream(plan.output_dir + "/table_rgb.txt") << result.table.to_text();
  return result;
}

// Appendix-style batch-size study: the stochastic method at each B, with the
// principal metrics table and band-wise curves per B.
inline ExperimentResult batch_size_study(const ExperimentPlan& plan,
                                         const std::vector<int>& batch_sizes) {
  require(!batch_sizes.empty(), "batch-size study needs at least one batch size");
  ExperimentPlan inner = plan;
  inner.methods = {"stochastic"};
  ExperimentContext base = ExperimentContext::prepare(inner, /*need_projector=*/true);
  {
    std::ofstream snapshot(plan.output_dir + "/plan_snapshot_study.json");
    snapshot << inner.to_json().dump(2) << "\n";
  }

  std::vector<std::string> method_labels;
  ExperimentResult result;
  for (int b : batch_sizes) {
    require(b >= 1, "batch sizes must be >= 1");
    base.plan.synthesis.batch_size = b;
    const std::string label = "stochastic_b" + std::to_string(b);
    method_labels.push_back(label);
    const ExperimentResult part = detail::run_items(
        base, detail::plan_items(base, {label}), "records.jsonl", /*rgb_mode=*/false);
    result.completed += part.completed;
    result.skipped += part.skipped;
    result.failures += part.failures;
  }

  const std::string records_path = plan.output_dir + "/records.jsonl";
  result.records_path = records_path;
  std::vector<PairRecord> records;
  for (const auto& r : load_records(records_path))
    if (std::find(method_labels.begin(), method_labels.end(), r.method) !=
        method_labels.end())
      records.push_back(r);

  AggregateTable full = aggregate_records(records, method_labels);
  // Principal metrics, Table V order.
  AggregateTable table = full;
  table.metrics = {"L_style^MS", "L_style^PCA", "L_sp^mean", "L_grad", "L_hist"};
  result.table = table;
  std::ofstream(plan.output_dir + "/study_table.csv") << table.to_csv();
  std::ofstream(plan.output_dir + "/study_table.txt") << table.to_text();
  std::ofstream(plan.output_dir + "/study_bandwise.csv")
      << bandwise_report_csv(records, method_labels);
  render_bandwise_figures(records, method_labels, base.corpus.front().band_labels,
                          plan.output_dir + "/study_bandwise_");
  return result;
}

}  // namespace mstex
