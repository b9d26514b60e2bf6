#pragma once

#include <Eigen/Dense>

#include <vector>

#include "mstex/error.hpp"
#include "mstex/network.hpp"

namespace mstex {

// Per-layer channel x channel second moments of tapped activations,
// normalized by the number of spatial positions so statistics are
// resolution-independent.
using FeatureStatistics = std::vector<Eigen::MatrixXd>;

enum class StatKind { Covariance, Gram };

// Centered second moment: (1/M) (F - mu)(F - mu)^T with mu the per-channel
// spatial mean. Blind to any permutation of spatial positions.
inline FeatureStatistics covariance_stats(const FeatureActivations& acts) {
  FeatureStatistics stats;
  stats.reserve(acts.size());
  for (const auto& f : acts.layers) {
    const double m = double(f.cols());
    const Eigen::VectorXd mu = f.rowwise().mean();
    const Eigen::MatrixXd centered = f.colwise() - mu;
    stats.push_back((centered * centered.transpose()) / m);
  }
  return stats;
}

// Uncentered variant, kept for parity with the original formulation.
inline FeatureStatistics gram_stats(const FeatureActivations& acts) {
  FeatureStatistics stats;
  stats.reserve(acts.size());
  for (const auto& f : acts.layers)
    stats.push_back((f * f.transpose()) / double(f.cols()));
  return stats;
}

inline FeatureStatistics feature_stats(const FeatureActivations& acts, StatKind kind) {
  return kind == StatKind::Covariance ? covariance_stats(acts) : gram_stats(acts);
}

// Adjoint of the statistic map: given dL/dG for one layer, produce dL/dF.
inline Eigen::MatrixXd stats_backward(const Eigen::MatrixXd& f,
                                      const Eigen::MatrixXd& d_stat, StatKind kind) {
  const double m = double(f.cols());
  const Eigen::MatrixXd sym = d_stat + d_stat.transpose();
  if (kind == StatKind::Gram) return (sym * f) / m;
  const Eigen::VectorXd mu = f.rowwise().mean();
  const Eigen::MatrixXd centered = f.colwise() - mu;
  Eigen::MatrixXd d_centered = (sym * centered) / m;
  // Centering is its own adjoint: subtract the per-channel row mean.
  const Eigen::VectorXd row_mean = d_centered.rowwise().mean();
  d_centered.colwise() -= row_mean;
  return d_centered;
}

}  // namespace mstex
