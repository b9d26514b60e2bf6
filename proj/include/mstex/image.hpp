#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mstex/error.hpp"

namespace mstex {

using RowMajorMatrixXd =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// H x W x N reflectance stack. Pixel-interleaved storage so the pixel set
// maps directly onto an M x N row-major matrix (one row per pixel), which is
// the layout every statistic in this library wants.
struct MultispectralImage {
  int height = 0;
  int width = 0;
  int bands = 0;
  std::vector<std::string> band_labels;
  std::string source_id;
  std::vector<double> data;  // index = (y*width + x)*bands + b

  static MultispectralImage zeros(int height, int width, int bands) {
    MultispectralImage img;
    img.height = height;
    img.width = width;
    img.bands = bands;
    img.data.assign(static_cast<std::size_t>(height) * width * bands, 0.0);
    img.band_labels.resize(bands);
    for (int b = 0; b < bands; ++b) img.band_labels[b] = default_band_label(b);
    return img;
  }

  static std::string default_band_label(int b) {
    return "band_" + std::to_string(b + 1);
  }

  int pixel_count() const { return height * width; }

  double& at(int y, int x, int b) {
    return data[(static_cast<std::size_t>(y) * width + x) * bands + b];
  }
  double at(int y, int x, int b) const {
    return data[(static_cast<std::size_t>(y) * width + x) * bands + b];
  }

  // Pixel set as an M x N matrix view (M = height*width rows, one per pixel).
  Eigen::Map<const RowMajorMatrixXd> pixels() const {
    return {data.data(), pixel_count(), bands};
  }
  Eigen::Map<RowMajorMatrixXd> pixels() {
    return {data.data(), pixel_count(), bands};
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  // Index of the first band containing a non-finite value, or -1.
  int first_non_finite_band() const {
    const std::size_t n = data.size();
    for (std::size_t i = 0; i < n; ++i)
      if (!std::isfinite(data[i])) return static_cast<int>(i % bands);
    return -1;
  }

  void clip01() {
    for (double& v : data) v = std::min(1.0, std::max(0.0, v));
  }
};

// Natural RGB image in [0,1]; supplies color moments for the transfer step
// and carries rendered visualizations.
struct PaletteImage {
  int height = 0;
  int width = 0;
  std::vector<double> data;  // (y*width + x)*3 + c

  static PaletteImage zeros(int height, int width) {
    PaletteImage img;
    img.height = height;
    img.width = width;
    img.data.assign(static_cast<std::size_t>(height) * width * 3, 0.0);
    return img;
  }

  int pixel_count() const { return height * width; }

  double& at(int y, int x, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  double at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }

  Eigen::Map<const RowMajorMatrixXd> pixels() const {
    return {data.data(), pixel_count(), 3};
  }
  Eigen::Map<RowMajorMatrixXd> pixels() {
    return {data.data(), pixel_count(), 3};
  }

  MultispectralImage as_multispectral() const {
    MultispectralImage img = MultispectralImage::zeros(height, width, 3);
    img.data = data;
    img.band_labels = {"r", "g", "b"};
    return img;
  }
};

// Ordered selection of distinct band positions.
struct BandSelection {
  std::vector<int> indices;

  void validate(int num_bands) const {
    require(!indices.empty(), "band selection is empty");
    std::vector<bool> seen(num_bands, false);
    for (int i : indices) {
      require(i >= 0 && i < num_bands,
              "band index " + std::to_string(i) + " out of range [0, " +
                  std::to_string(num_bands) + ")");
      require(!seen[i], "duplicate band index " + std::to_string(i));
      seen[i] = true;
    }
  }
};

inline MultispectralImage select_bands(const MultispectralImage& img,
                                       const BandSelection& sel) {
  sel.validate(img.bands);
  MultispectralImage out =
      MultispectralImage::zeros(img.height, img.width, int(sel.indices.size()));
  out.source_id = img.source_id;
  const int m = img.pixel_count();
  for (int p = 0; p < m; ++p)
    for (std::size_t k = 0; k < sel.indices.size(); ++k)
      out.data[p * out.bands + k] = img.data[std::size_t(p) * img.bands + sel.indices[k]];
  for (std::size_t k = 0; k < sel.indices.size(); ++k)
    out.band_labels[k] = img.band_labels[sel.indices[k]];
  return out;
}

// Extract a 3-band image for a triplet of band indices (ascending order is
// the caller's responsibility; triplets from enumerate_triplets already are).
inline MultispectralImage extract_triplet(const MultispectralImage& img,
                                          const std::array<int, 3>& triplet) {
  BandSelection sel;
  sel.indices.assign(triplet.begin(), triplet.end());
  return select_bands(img, sel);
}

// Pool bands into 3 channels (per-pixel mean over each group), then rescale
// each channel affinely to [0,1]. A flat channel maps to 0.5.
inline PaletteImage pooled_visualization(
    const MultispectralImage& img, const std::array<std::vector<int>, 3>& groups) {
  std::vector<bool> used(img.bands, false);
  for (const auto& g : groups) {
    require(!g.empty(), "pooling group is empty");
    for (int b : g) {
      require(b >= 0 && b < img.bands,
              "pooling index " + std::to_string(b) + " out of range");
      require(!used[b], "band " + std::to_string(b) + " pooled twice");
      used[b] = true;
    }
  }
  PaletteImage out = PaletteImage::zeros(img.height, img.width);
  const int m = img.pixel_count();
  for (int c = 0; c < 3; ++c) {
    const auto& g = groups[c];
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (int p = 0; p < m; ++p) {
      double s = 0.0;
      for (int b : g) s += img.data[std::size_t(p) * img.bands + b];
      s /= double(g.size());
      out.data[std::size_t(p) * 3 + c] = s;
      lo = std::min(lo, s);
      hi = std::max(hi, s);
    }
    const double range = hi - lo;
    for (int p = 0; p < m; ++p) {
      double& v = out.data[std::size_t(p) * 3 + c];
      v = range > 0.0 ? (v - lo) / range : 0.5;
    }
  }
  return out;
}

// Default pooling for visualization: three contiguous groups, as equal as
// possible. For the 11-band case this yields {0..3},{4..7},{8..10}.
inline std::array<std::vector<int>, 3> default_pooling_groups(int bands) {
  require(bands >= 3, "need at least 3 bands to pool into 3 channels");
  std::array<std::vector<int>, 3> groups;
  const int base = bands / 3;
  const int extra = bands % 3;
  int next = 0;
  for (int c = 0; c < 3; ++c) {
    const int len = base + (c < extra ? 1 : 0);
    for (int k = 0; k < len; ++k) groups[c].push_back(next++);
  }
  return groups;
}

}  // namespace mstex
