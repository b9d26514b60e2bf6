#pragma once

// Exemplar-based synthesis: moment-matched Gaussian initialization followed
// by quasi-Newton minimization of a style distance over the pixels of an
// N-band image. For the stochastic objective a fresh triplet batch is drawn
// at every optimizer iteration and frozen across that iteration's line
// search, so the search always sees a deterministic function.

#include <Eigen/Dense>

#include <chrono>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "mstex/color_transfer.hpp"
#include "mstex/error.hpp"
#include "mstex/image.hpp"
#include "mstex/lbfgs.hpp"
#include "mstex/network.hpp"
#include "mstex/pca.hpp"
#include "mstex/rng.hpp"
#include "mstex/style.hpp"

namespace mstex {

// Pixel mean / covariance / Cholesky factor of an N-band image.
struct GaussianSummary {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  Eigen::MatrixXd cholesky;
};

inline GaussianSummary compute_summary(const MultispectralImage& img) {
  require(img.pixel_count() >= 2, "compute_summary needs at least 2 pixels");
  GaussianSummary s;
  const auto pixels = img.pixels();
  s.mean = pixels.colwise().mean().transpose();
  const Eigen::MatrixXd centered = pixels.rowwise() - s.mean.transpose();
  const Eigen::MatrixXd cov =
      (centered.transpose() * centered) / double(img.pixel_count());
  Eigen::MatrixXd jittered;
  s.cholesky = jittered_cholesky(cov, &jittered);
  s.covariance = jittered;
  return s;
}

// I.i.d. pixels ~ N(mean, covariance) through the Cholesky factor.
inline MultispectralImage gaussian_init(const GaussianSummary& summary, int height,
                                        int width, std::uint64_t seed) {
  const int n = int(summary.mean.size());
  MultispectralImage img = MultispectralImage::zeros(height, width, n);
  Rng rng(seed);
  Eigen::VectorXd z(n);
  const int m = img.pixel_count();
  for (int p = 0; p < m; ++p) {
    for (int b = 0; b < n; ++b) z(b) = rng.normal();
    const Eigen::VectorXd pixel = summary.mean + summary.cholesky * z;
    for (int b = 0; b < n; ++b) img.data[std::size_t(p) * n + b] = pixel(b);
  }
  return img;
}

enum class Objective { Stochastic, Projected, ProjectedColor, RgbPlain };

inline std::string objective_name(Objective o) {
  switch (o) {
    case Objective::Stochastic: return "stochastic";
    case Objective::Projected: return "projected";
    case Objective::ProjectedColor: return "projected_color";
    case Objective::RgbPlain: return "rgb_plain";
  }
  return "?";
}

struct SynthesisConfig {
  Objective objective = Objective::Stochastic;
  int iterations = 500;
  int batch_size = 10;
  std::uint64_t rng_seed = 0;
  LbfgsOptions optimizer;
  int out_height = 0;  // 0 = exemplar size
  int out_width = 0;
  StatKind statistic = StatKind::Covariance;
  bool sample_with_replacement = true;
  bool init_with_exemplar = false;  // debug: start at the exemplar itself
  std::vector<double> style_weights;  // empty = quadratic decay 1/N_l^2

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["objective"] = objective_name(objective);
    j["iterations"] = iterations;
    j["batch_size"] = batch_size;
    j["rng_seed"] = rng_seed;
    j["optimizer"] = {{"history", optimizer.history},
                      {"max_evals_per_step", optimizer.max_evals_per_step},
                      {"wolfe_c1", optimizer.wolfe_c1},
                      {"wolfe_c2", optimizer.wolfe_c2}};
    j["out_height"] = out_height;
    j["out_width"] = out_width;
    j["statistic"] = statistic == StatKind::Covariance ? "covariance" : "gram";
    j["sample_with_replacement"] = sample_with_replacement;
    j["init_with_exemplar"] = init_with_exemplar;
    if (!style_weights.empty()) j["style_weights"] = style_weights;
    return j;
  }
};

struct SynthesisTrace {
  struct Row {
    int iteration;
    double loss;
    double seconds;
  };
  std::vector<Row> rows;
  double final_loss = 0.0;
  std::uint64_t seed = 0;
  std::string config_json;

  std::string to_csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "iteration,loss,seconds\n";
    for (const auto& r : rows)
      out << r.iteration << "," << r.loss << "," << r.seconds << "\n";
    return out.str();
  }
};

struct SynthesisResult {
  MultispectralImage image;
  SynthesisTrace trace;
};

namespace detail {

struct NonFiniteLoss {
  int iteration;
};

inline SynthesisResult run_synthesis_once(const MultispectralImage& exemplar,
                                          const SynthesisConfig& cfg,
                                          const FeatureExtractor& fx,
                                          const Projector* projector,
                                          const PaletteImage* palette,
                                          std::uint64_t seed) {
  const int n = exemplar.bands;
  const int out_h = cfg.out_height > 0 ? cfg.out_height : exemplar.height;
  const int out_w = cfg.out_width > 0 ? cfg.out_width : exemplar.width;
  StyleWeights weights = StyleWeights::quadratic_decay(fx);
  if (!cfg.style_weights.empty()) weights.values = cfg.style_weights;
  weights.check_against(fx);

  MultispectralImage current;
  if (cfg.init_with_exemplar) {
    require(out_h == exemplar.height && out_w == exemplar.width,
            "exemplar init requires matching output size");
    current = exemplar;
  } else {
    current = gaussian_init(compute_summary(exemplar), out_h, out_w,
                            derive_seed(seed, 0));
  }
  current.band_labels = exemplar.band_labels;
  current.source_id = exemplar.source_id + ":" + objective_name(cfg.objective);

  // Fixed-side statistics are computed once.
  std::optional<TripletTargetCache> triplet_cache;
  std::optional<StyleTarget> fixed_target;
  ColorTransform transform;
  if (cfg.objective == Objective::Stochastic) {
    triplet_cache.emplace(exemplar, fx, cfg.statistic);
  } else if (cfg.objective == Objective::Projected) {
    fixed_target = make_style_target(project(*projector, exemplar), fx, cfg.statistic);
  } else if (cfg.objective == Objective::ProjectedColor) {
    transform = make_palette_transform(*projector, exemplar, *palette);
    fixed_target = make_style_target(apply(transform, project(*projector, exemplar)),
                                     fx, cfg.statistic);
  } else {
    fixed_target = make_style_target(exemplar, fx, cfg.statistic);
  }

  TripletBatch frozen_batch;
  int current_iteration = 0;
  const auto objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
    MultispectralImage candidate = current;
    std::copy(x.data(), x.data() + x.size(), candidate.data.begin());
    MultispectralImage g;
    double loss = 0.0;
    switch (cfg.objective) {
      case Objective::Stochastic:
        loss = stochastic_style_distance(exemplar, candidate, frozen_batch, fx, weights,
                                         cfg.statistic, &g, &*triplet_cache);
        break;
      case Objective::Projected: {
        MultispectralImage grad3;
        loss = style_distance_to_target(*fixed_target, project(*projector, candidate),
                                        fx, weights, cfg.statistic, &grad3);
        g = project_adjoint(*projector, grad3);
        break;
      }
      case Objective::ProjectedColor: {
        MultispectralImage grad3;
        const MultispectralImage mapped =
            apply(transform, project(*projector, candidate));
        loss = style_distance_to_target(*fixed_target, mapped, fx, weights,
                                        cfg.statistic, &grad3);
        MultispectralImage pre = grad3;
        pre.pixels() = grad3.pixels() * transform.linear_map();
        g = project_adjoint(*projector, pre);
        break;
      }
      case Objective::RgbPlain:
        loss = style_distance_to_target(*fixed_target, candidate, fx, weights,
                                        cfg.statistic, &g);
        break;
    }
    if (!std::isfinite(loss)) throw NonFiniteLoss{current_iteration};
    grad = Eigen::Map<const Eigen::VectorXd>(g.data.data(), std::ptrdiff_t(g.data.size()));
    if (!grad.allFinite()) throw NonFiniteLoss{current_iteration};
    return loss;
  };

  Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(
      current.data.data(), std::ptrdiff_t(current.data.size()));
  LbfgsSolver solver(cfg.optimizer);
  SynthesisTrace trace;
  trace.seed = seed;
  trace.config_json = cfg.to_json().dump();
  const auto t0 = std::chrono::steady_clock::now();
  for (int iter = 0; iter < cfg.iterations; ++iter) {
    current_iteration = iter;
    if (cfg.objective == Objective::Stochastic) {
      frozen_batch = sample_triplets(n, cfg.batch_size, derive_seed(seed, 1 + iter),
                                     cfg.sample_with_replacement);
    }
    const LbfgsStepResult step = solver.step(objective, x);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    trace.rows.push_back({iter, step.loss, elapsed});
    if (step.converged) break;
  }
  trace.final_loss = trace.rows.empty() ? 0.0 : trace.rows.back().loss;

  std::copy(x.data(), x.data() + x.size(), current.data.begin());
  return SynthesisResult{std::move(current), std::move(trace)};
}

}  // namespace detail

inline SynthesisResult synthesize(const MultispectralImage& exemplar,
                                  const SynthesisConfig& cfg, const FeatureExtractor& fx,
                                  const Projector* projector = nullptr,
                                  const PaletteImage* palette = nullptr) {
  require(cfg.iterations >= 1, "iterations must be at least 1");
  require(cfg.batch_size >= 1, "batch size must be at least 1");
  require(exemplar.height >= 64 && exemplar.width >= 64,
          "exemplar must be at least 64x64");
  if (cfg.objective == Objective::Stochastic)
    require(exemplar.bands >= 3, "stochastic objective needs at least 3 bands");
  if (cfg.objective == Objective::Projected || cfg.objective == Objective::ProjectedColor) {
    require(projector != nullptr, "projected objectives need a projector");
    require(projector->input_bands() == exemplar.bands,
            "projector dimension does not match the exemplar");
  }
  if (cfg.objective == Objective::ProjectedColor)
    require(palette != nullptr, "projected_color objective needs a palette image");
  if (cfg.objective == Objective::RgbPlain)
    require(exemplar.bands == 3, "rgb_plain objective needs exactly 3 bands");

  try {
    return detail::run_synthesis_once(exemplar, cfg, fx, projector, palette,
                                      cfg.rng_seed);
  } catch (const detail::NonFiniteLoss& first) {
    // One retry from a re-seeded init; extreme exemplars can overshoot a
    // line search into non-finite territory.
    try {
      return detail::run_synthesis_once(exemplar, cfg, fx, projector, palette,
                                        derive_seed(cfg.rng_seed, 0x7e7ea7));
    } catch (const detail::NonFiniteLoss& second) {
      throw Error("non-finite loss at iteration " + std::to_string(second.iteration) +
                  " (first failure at iteration " + std::to_string(first.iteration) +
                  "); aborting synthesis");
    }
  }
}

inline SynthesisResult synthesize_rgb_baseline(const MultispectralImage& exemplar3,
                                               SynthesisConfig cfg,
                                               const FeatureExtractor& fx) {
  require(exemplar3.bands == 3, "rgb baseline expects a 3-band exemplar");
  cfg.objective = Objective::RgbPlain;
  return synthesize(exemplar3, cfg, fx);
}

}  // namespace mstex
