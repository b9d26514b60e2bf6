#pragma once

// Style distances between images, measured through second-order statistics
// of CNN activations:
//   - style_distance:                plain 3-channel distance,
//   - stochastic_style_distance:     batch average over random band triplets,
//   - exact_expected_style_distance: mean over every distinct triplet,
//   - projected_style_distance:      distance after an N->3 projection,
//   - projected_color_style_distance: projection followed by a fixed
//     moment-matching color transform shared by both images.
// Each distance has a gradient variant with respect to the second image.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "mstex/color_transfer.hpp"
#include "mstex/error.hpp"
#include "mstex/feature_stats.hpp"
#include "mstex/image.hpp"
#include "mstex/network.hpp"
#include "mstex/pca.hpp"
#include "mstex/rng.hpp"

namespace mstex {

// Per-layer loss weights; the default is the quadratic decay 1/N_l^2.
struct StyleWeights {
  std::vector<double> values;

  static StyleWeights quadratic_decay(const FeatureExtractor& fx) {
    StyleWeights w;
    for (int channels : fx.tap_channels())
      w.values.push_back(1.0 / (double(channels) * double(channels)));
    return w;
  }

  void check_against(const FeatureExtractor& fx) const {
    require(values.size() == fx.tap_layers().size(),
            "style weights must match the number of tapped layers");
    for (double v : values) require(std::isfinite(v) && v >= 0.0,
                                    "style weights must be finite and nonnegative");
  }
};

// Precomputed statistics of the fixed side of a style comparison.
struct StyleTarget {
  FeatureStatistics stats;
};

inline StyleTarget make_style_target(const MultispectralImage& img3,
                                     const FeatureExtractor& fx,
                                     StatKind kind = StatKind::Covariance) {
  return StyleTarget{feature_stats(fx.extract(img3), kind)};
}

// Sum_l w_l ||G^l(img) - target||_F^2, optionally with the gradient with
// respect to img's pixels.
inline double style_distance_to_target(const StyleTarget& target,
                                       const MultispectralImage& img3,
                                       const FeatureExtractor& fx,
                                       const StyleWeights& weights,
                                       StatKind kind = StatKind::Covariance,
                                       MultispectralImage* grad = nullptr) {
  weights.check_against(fx);
  ForwardContext ctx;
  const FeatureActivations acts = fx.extract(img3, &ctx);
  const FeatureStatistics stats = feature_stats(acts, kind);
  require(stats.size() == target.stats.size(), "style target layer count mismatch");

  double loss = 0.0;
  std::vector<Eigen::MatrixXd> d_taps;
  if (grad) d_taps.resize(stats.size());
  for (std::size_t l = 0; l < stats.size(); ++l) {
    const Eigen::MatrixXd diff = stats[l] - target.stats[l];
    loss += weights.values[l] * diff.squaredNorm();
    if (grad) {
      const Eigen::MatrixXd d_stat = 2.0 * weights.values[l] * diff;
      d_taps[l] = stats_backward(acts.layers[l], d_stat, kind);
    }
  }
  if (grad) *grad = fx.backward(ctx, d_taps);
  return loss;
}

inline double style_distance(const MultispectralImage& a, const MultispectralImage& b,
                             const FeatureExtractor& fx, const StyleWeights& weights,
                             StatKind kind = StatKind::Covariance,
                             MultispectralImage* grad_b = nullptr) {
  return style_distance_to_target(make_style_target(a, fx, kind), b, fx, weights, kind,
                                  grad_b);
}

// ---------------------------------------------------------------------------
// Band triplets

// All unordered triples of distinct band indices, lexicographic.
inline std::vector<std::array<int, 3>> enumerate_triplets(int num_bands) {
  require(num_bands >= 3, "need at least 3 bands to form a triplet");
  std::vector<std::array<int, 3>> out;
  out.reserve(std::size_t(num_bands) * (num_bands - 1) * (num_bands - 2) / 6);
  for (int i = 0; i < num_bands; ++i)
    for (int j = i + 1; j < num_bands; ++j)
      for (int k = j + 1; k < num_bands; ++k) out.push_back({i, j, k});
  return out;
}

struct TripletBatch {
  std::vector<std::array<int, 3>> triplets;
  std::uint64_t rng_seed = 0;
};

// B triples drawn uniformly from the full set, i.i.d. with replacement by
// default; deterministic given the seed.
inline TripletBatch sample_triplets(int num_bands, int batch_size, std::uint64_t seed,
                                    bool with_replacement = true) {
  require(num_bands >= 3, "need at least 3 bands to form a triplet");
  require(batch_size >= 1, "batch size must be at least 1");
  const auto all = enumerate_triplets(num_bands);
  TripletBatch batch;
  batch.rng_seed = seed;
  Rng rng(seed);
  if (with_replacement) {
    for (int i = 0; i < batch_size; ++i)
      batch.triplets.push_back(all[rng.below(all.size())]);
  } else {
    require(std::size_t(batch_size) <= all.size(),
            "without replacement, batch size cannot exceed the triplet count");
    // Partial Fisher-Yates over the index list.
    std::vector<std::uint32_t> idx(all.size());
    for (std::size_t i = 0; i < all.size(); ++i) idx[i] = std::uint32_t(i);
    for (int i = 0; i < batch_size; ++i) {
      const std::size_t j = i + rng.below(all.size() - i);
      std::swap(idx[i], idx[j]);
      batch.triplets.push_back(all[idx[i]]);
    }
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Stochastic style distance

namespace detail {

inline void check_band_counts(const MultispectralImage& a, const MultispectralImage& b) {
  require(a.bands == b.bands, "band count mismatch: " + std::to_string(a.bands) +
                                  " vs " + std::to_string(b.bands));
}

}  // namespace detail

// Cache of exemplar-side statistics per triplet; synthesis reuses targets
// across optimizer iterations.
class TripletTargetCache {
 public:
  TripletTargetCache(const MultispectralImage& exemplar, const FeatureExtractor& fx,
                     StatKind kind)
      : exemplar_(exemplar), fx_(fx), kind_(kind) {}

  const StyleTarget& target(const std::array<int, 3>& triplet) {
    auto it = cache_.find(triplet);
    if (it != cache_.end()) return it->second;
    StyleTarget t = make_style_target(extract_triplet(exemplar_, triplet), fx_, kind_);
    return cache_.emplace(triplet, std::move(t)).first->second;
  }

 private:
  const MultispectralImage& exemplar_;
  const FeatureExtractor& fx_;
  StatKind kind_;
  std::map<std::array<int, 3>, StyleTarget> cache_;
};

// (1/B) sum over the batch of style_distance(I_J, Ihat_J); band order within
// a triplet is ascending index.
inline double stochastic_style_distance(const MultispectralImage& exemplar,
                                        const MultispectralImage& synth,
                                        const TripletBatch& batch,
                                        const FeatureExtractor& fx,
                                        const StyleWeights& weights,
                                        StatKind kind = StatKind::Covariance,
                                        MultispectralImage* grad = nullptr,
                                        TripletTargetCache* cache = nullptr) {
  detail::check_band_counts(exemplar, synth);
  require(exemplar.bands >= 3, "stochastic style distance needs at least 3 bands");
  require(!batch.triplets.empty(), "triplet batch is empty");
  const double inv_b = 1.0 / double(batch.triplets.size());

  if (grad) {
    *grad = MultispectralImage::zeros(synth.height, synth.width, synth.bands);
  }
  double loss = 0.0;
  for (const auto& triplet : batch.triplets) {
    for (int b : triplet)
      require(b >= 0 && b < exemplar.bands, "triplet band index out of range");
    const MultispectralImage synth3 = extract_triplet(synth, triplet);
    MultispectralImage grad3;
    double term;
    if (cache) {
      term = style_distance_to_target(cache->target(triplet), synth3, fx, weights, kind,
                                      grad ? &grad3 : nullptr);
    } else {
      const StyleTarget target =
          make_style_target(extract_triplet(exemplar, triplet), fx, kind);
      term = style_distance_to_target(target, synth3, fx, weights, kind,
                                      grad ? &grad3 : nullptr);
    }
    loss += term;
    if (grad) {
      // Scatter the 3-channel gradient back into the triplet's bands.
      const int m = synth.pixel_count();
      for (int p = 0; p < m; ++p)
        for (int c = 0; c < 3; ++c)
          grad->data[std::size_t(p) * synth.bands + triplet[c]] +=
              inv_b * grad3.data[std::size_t(p) * 3 + c];
    }
  }
  return loss * inv_b;
}

// Exact expectation over the uniform triplet law: the evaluation metric
// behind the stochastic objective. Guarded to enumerable band counts.
inline double exact_expected_style_distance(const MultispectralImage& exemplar,
                                            const MultispectralImage& synth,
                                            const FeatureExtractor& fx,
                                            const StyleWeights& weights,
                                            StatKind kind = StatKind::Covariance) {
  detail::check_band_counts(exemplar, synth);
  require(exemplar.bands <= 16,
          "exact expectation over triplets is limited to 16 bands");
  TripletBatch batch;
  batch.triplets = enumerate_triplets(exemplar.bands);
  return stochastic_style_distance(exemplar, synth, batch, fx, weights, kind);
}

// ---------------------------------------------------------------------------
// Projected style distances

inline double projected_style_distance(const MultispectralImage& exemplar,
                                       const MultispectralImage& synth,
                                       const Projector& projector,
                                       const FeatureExtractor& fx,
                                       const StyleWeights& weights,
                                       StatKind kind = StatKind::Covariance,
                                       MultispectralImage* grad = nullptr) {
  detail::check_band_counts(exemplar, synth);
  require(projector.input_bands() == exemplar.bands,
          "projector dimension does not match the images");
  const StyleTarget target = make_style_target(project(projector, exemplar), fx, kind);
  MultispectralImage grad3;
  const double loss = style_distance_to_target(target, project(projector, synth), fx,
                                               weights, kind, grad ? &grad3 : nullptr);
  if (grad) *grad = project_adjoint(projector, grad3);
  return loss;
}

// Transform built once from the exemplar's projection and a palette; the
// same transform is applied to both branches.
inline ColorTransform make_palette_transform(const Projector& projector,
                                             const MultispectralImage& exemplar,
                                             const PaletteImage& palette) {
  const ColorMoments source = compute_moments(project(projector, exemplar));
  const ColorMoments target = compute_moments(palette);
  return make_color_transform(source, target);
}

inline double projected_color_style_distance(const MultispectralImage& exemplar,
                                             const MultispectralImage& synth,
                                             const Projector& projector,
                                             const ColorTransform& transform,
                                             const FeatureExtractor& fx,
                                             const StyleWeights& weights,
                                             StatKind kind = StatKind::Covariance,
                                             MultispectralImage* grad = nullptr) {
  detail::check_band_counts(exemplar, synth);
  require(projector.input_bands() == exemplar.bands,
          "projector dimension does not match the images");
  const StyleTarget target =
      make_style_target(apply(transform, project(projector, exemplar)), fx, kind);
  const MultispectralImage mapped = apply(transform, project(projector, synth));
  MultispectralImage grad3;
  const double loss = style_distance_to_target(target, mapped, fx, weights, kind,
                                               grad ? &grad3 : nullptr);
  if (grad) {
    // Chain through the affine map (rows: d_pre = d_mapped * A) and the
    // projection adjoint.
    MultispectralImage pre = grad3;
    pre.pixels() = grad3.pixels() * transform.linear_map();
    *grad = project_adjoint(projector, pre);
  }
  return loss;
}

}  // namespace mstex
