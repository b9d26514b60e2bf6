#pragma once

// Evaluation metrics for (exemplar, synthesis) pairs:
//   - style metrics:    L_style^MS (exact triplet expectation), L_style^PCA,
//                       L_style^RGB (bands 2,3,4 when present),
//   - distributions:    L_hist (sliced Wasserstein over pixel spectra) and
//                       band-wise L_hist^lambda,
//   - Gaussian summary: L_mu, L_Sigma, L_RX (Gaussian 2-Wasserstein),
//   - spectra:          L_sp^mean and band-wise L_sp^lambda (log radial
//                       Fourier spectra),
//   - gradients:        L_grad over |grad I| pixel sets and band-wise
//                       L_grad^lambda.
// 1-D Wasserstein distances use the root-mean-square convention
// ||sort(a)-sort(b)||_2 / sqrt(len), which makes values image-size
// independent.

#include <fftw3.h>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "mstex/error.hpp"
#include "mstex/feature_stats.hpp"
#include "mstex/image.hpp"
#include "mstex/pca.hpp"
#include "mstex/rng.hpp"
#include "mstex/style.hpp"
#include "mstex/synthesis.hpp"

namespace mstex {

// ---------------------------------------------------------------------------
// Transport distances

inline double wasserstein_1d(std::vector<double> a, std::vector<double> b) {
  require(!a.empty() && a.size() == b.size(),
          "wasserstein_1d needs equally sized nonempty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return std::sqrt(sum / double(a.size()));
}

// K unit directions on the sphere in dimension N, Gaussian-normalized.
struct DirectionSet {
  Eigen::MatrixXd directions;  // K x N, unit rows
  std::uint64_t rng_seed = 0;

  int dimension() const { return int(directions.cols()); }
  int count() const { return int(directions.rows()); }

  static DirectionSet sample(int dimension, int count, std::uint64_t seed) {
    require(dimension >= 1 && count >= 1, "direction set needs dimension, count >= 1");
    DirectionSet set;
    set.rng_seed = seed;
    set.directions.resize(count, dimension);
    Rng rng(seed);
    for (int k = 0; k < count; ++k) {
      double norm2 = 0.0;
      do {
        norm2 = 0.0;
        for (int d = 0; d < dimension; ++d) {
          const double v = rng.normal();
          set.directions(k, d) = v;
          norm2 += v * v;
        }
      } while (norm2 == 0.0);
      set.directions.row(k) /= std::sqrt(norm2);
    }
    return set;
  }
};

// sqrt(mean over directions of W2(X.v, Y.v)^2) for equally sized point sets.
inline double sliced_wasserstein(const Eigen::Ref<const RowMajorMatrixXd>& x,
                                 const Eigen::Ref<const RowMajorMatrixXd>& y,
                                 const DirectionSet& dirs) {
  require(x.rows() == y.rows(), "sliced_wasserstein needs equal sample counts");
  require(x.cols() == y.cols() && x.cols() == dirs.dimension(),
          "sliced_wasserstein dimension mismatch");
  const int m = int(x.rows());
  std::vector<double> px(m), py(m);
  double mean_sq = 0.0;
  for (int k = 0; k < dirs.count(); ++k) {
    const Eigen::VectorXd v = dirs.directions.row(k).transpose();
    Eigen::Map<Eigen::VectorXd>(px.data(), m) = x * v;
    Eigen::Map<Eigen::VectorXd>(py.data(), m) = y * v;
    const double w = wasserstein_1d(px, py);
    mean_sq += w * w;
  }
  return std::sqrt(mean_sq / double(dirs.count()));
}

// ---------------------------------------------------------------------------
// Pixel distribution metrics

inline std::vector<double> band_samples(const MultispectralImage& img, int band) {
  require(band >= 0 && band < img.bands, "band index out of range");
  std::vector<double> out(std::size_t(img.pixel_count()));
  for (int p = 0; p < img.pixel_count(); ++p)
    out[p] = img.data[std::size_t(p) * img.bands + band];
  return out;
}

inline double hist_distance(const MultispectralImage& a, const MultispectralImage& b,
                            const DirectionSet& dirs) {
  require(a.bands == b.bands, "band count mismatch");
  require(a.pixel_count() == b.pixel_count(), "pixel count mismatch");
  return sliced_wasserstein(a.pixels(), b.pixels(), dirs);
}

inline double hist_distance_band(const MultispectralImage& a,
                                 const MultispectralImage& b, int band) {
  require(a.bands == b.bands, "band count mismatch");
  return wasserstein_1d(band_samples(a, band), band_samples(b, band));
}

// ---------------------------------------------------------------------------
// Gaussian summary metrics

struct GaussianDistances {
  double l_mu = 0.0;
  double l_sigma = 0.0;
  double l_rx = 0.0;
};

namespace detail {

// Symmetric PSD square root with negative eigenvalues clamped to zero.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(0.5 * (m + m.transpose()));
  require(solver.info() == Eigen::Success, "eigendecomposition failed");
  Eigen::VectorXd eig = solver.eigenvalues();
  for (int i = 0; i < eig.size(); ++i) eig(i) = std::sqrt(std::max(0.0, eig(i)));
  return solver.eigenvectors() * eig.asDiagonal() * solver.eigenvectors().transpose();
}

inline void check_psd(const Eigen::MatrixXd& m, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(0.5 * (m + m.transpose()));
  require(solver.info() == Eigen::Success, "eigendecomposition failed");
  const double min_eig = solver.eigenvalues().minCoeff();
  const double tol = 1e-6 * std::max(1e-300, m.trace());
  require(min_eig >= -tol, std::string(what) + " is not PSD within tolerance");
}

}  // namespace detail

inline GaussianDistances gaussian_distances_from_moments(const Eigen::VectorXd& mu_a,
                                                         const Eigen::MatrixXd& cov_a,
                                                         const Eigen::VectorXd& mu_b,
                                                         const Eigen::MatrixXd& cov_b) {
  require(mu_a.size() == mu_b.size() && cov_a.rows() == cov_b.rows(),
          "moment dimension mismatch");
  detail::check_psd(cov_a, "first covariance");
  detail::check_psd(cov_b, "second covariance");
  GaussianDistances out;
  out.l_mu = (mu_a - mu_b).norm();
  out.l_sigma = (cov_a - cov_b).norm();  // Frobenius
  const Eigen::MatrixXd root_a = detail::psd_sqrt(cov_a);
  const Eigen::MatrixXd cross = detail::psd_sqrt(root_a * cov_b * root_a);
  const double trace_term =
      std::max(0.0, cov_a.trace() + cov_b.trace() - 2.0 * cross.trace());
  out.l_rx = std::sqrt(out.l_mu * out.l_mu + trace_term);
  return out;
}

inline GaussianDistances gaussian_distances(const MultispectralImage& a,
                                            const MultispectralImage& b) {
  require(a.bands == b.bands, "band count mismatch");
  const auto moments = [](const MultispectralImage& img) {
    const auto pixels = img.pixels();
    const Eigen::VectorXd mean = pixels.colwise().mean().transpose();
    const Eigen::MatrixXd centered = pixels.rowwise() - mean.transpose();
    const Eigen::MatrixXd cov =
        (centered.transpose() * centered) / double(img.pixel_count());
    return std::pair{mean, cov};
  };
  const auto [mu_a, cov_a] = moments(a);
  const auto [mu_b, cov_b] = moments(b);
  return gaussian_distances_from_moments(mu_a, cov_a, mu_b, cov_b);
}

// ---------------------------------------------------------------------------
// Radial spectrum

struct RadialSpectrum {
  std::vector<double> values;  // mean Fourier magnitude per integer radius
  std::vector<int> counts;     // bins per annulus

  int max_radius() const { return int(values.size()) - 1; }
};

// Mean DFT magnitude per integer frequency-radius annulus, up to the Nyquist
// radius min(H,W)/2. Frequencies use the centered integer convention.
inline RadialSpectrum radial_spectrum(const std::vector<double>& band, int height,
                                      int width) {
  require(int(band.size()) == height * width, "radial_spectrum shape mismatch");
  require(height >= 2 && width >= 2, "radial_spectrum needs at least 2x2");

  std::vector<double> in(band.begin(), band.end());
  std::vector<fftw_complex> out(std::size_t(height) * (width / 2 + 1));
  fftw_plan plan = fftw_plan_dft_r2c_2d(height, width, in.data(), out.data(),
                                        FFTW_ESTIMATE);
  require(plan != nullptr, "fftw plan creation failed");
  fftw_execute(plan);
  fftw_destroy_plan(plan);

  const int r_max = std::min(height, width) / 2;
  RadialSpectrum spec;
  spec.values.assign(std::size_t(r_max) + 1, 0.0);
  spec.counts.assign(std::size_t(r_max) + 1, 0);
  const int half_w = width / 2 + 1;
  for (int u = 0; u < height; ++u) {
    const int fu = u <= height / 2 ? u : u - height;
    for (int v = 0; v < width; ++v) {
      const int fv = v <= width / 2 ? v : v - width;
      const int r = int(std::lround(std::sqrt(double(fu) * fu + double(fv) * fv)));
      if (r > r_max) continue;
      // Reconstruct the full plane from the r2c half plane via Hermitian
      // symmetry: F(u,v) = conj(F((H-u)%H, (W-v)%W)).
      double re, im;
      if (v < half_w) {
        re = out[std::size_t(u) * half_w + v][0];
        im = out[std::size_t(u) * half_w + v][1];
      } else {
        const int cu = (height - u) % height;
        const int cv = (width - v) % width;
        re = out[std::size_t(cu) * half_w + cv][0];
        im = -out[std::size_t(cu) * half_w + cv][1];
      }
      spec.values[r] += std::sqrt(re * re + im * im);
      spec.counts[r] += 1;
    }
  }
  for (std::size_t r = 0; r < spec.values.size(); ++r)
    if (spec.counts[r] > 0) spec.values[r] /= double(spec.counts[r]);
  return spec;
}

inline RadialSpectrum radial_spectrum(const MultispectralImage& img, int band) {
  return radial_spectrum(band_samples(img, band), img.height, img.width);
}

inline std::vector<double> mean_band_image(const MultispectralImage& img) {
  std::vector<double> out(std::size_t(img.pixel_count()), 0.0);
  for (int p = 0; p < img.pixel_count(); ++p) {
    double s = 0.0;
    for (int b = 0; b < img.bands; ++b) s += img.data[std::size_t(p) * img.bands + b];
    out[p] = s / double(img.bands);
  }
  return out;
}

inline constexpr double kLogSpectrumEpsilon = 1e-12;

// L2 distance between log radial spectra over r >= 1 (the DC bin carries the
// mean offset, not texture).
inline double spectrum_distance_from(const RadialSpectrum& a, const RadialSpectrum& b) {
  require(a.values.size() == b.values.size(),
          "spectrum_distance needs matching image sizes");
  double sum = 0.0;
  for (std::size_t r = 1; r < a.values.size(); ++r) {
    const double d = std::log(a.values[r] + kLogSpectrumEpsilon) -
                     std::log(b.values[r] + kLogSpectrumEpsilon);
    sum += d * d;
  }
  return std::sqrt(sum);
}

inline double spectrum_distance_band(const MultispectralImage& a,
                                     const MultispectralImage& b, int band) {
  require(a.height == b.height && a.width == b.width,
          "spectrum_distance needs matching image sizes");
  return spectrum_distance_from(radial_spectrum(a, band), radial_spectrum(b, band));
}

inline double spectrum_distance_mean(const MultispectralImage& a,
                                     const MultispectralImage& b) {
  require(a.height == b.height && a.width == b.width,
          "spectrum_distance needs matching image sizes");
  require(a.bands == b.bands, "band count mismatch");
  return spectrum_distance_from(radial_spectrum(mean_band_image(a), a.height, a.width),
                                radial_spectrum(mean_band_image(b), b.height, b.width));
}

// ---------------------------------------------------------------------------
// Gradient distribution metrics

// Forward differences with valid cropping: all fields are (H-1) x (W-1) x N.
struct GradientField {
  int height = 0;  // H-1
  int width = 0;   // W-1
  int bands = 0;
  std::vector<double> dx, dy, magnitude;  // (y*width + x)*bands + b

  Eigen::Map<const RowMajorMatrixXd> magnitude_pixels() const {
    return {magnitude.data(), height * width, bands};
  }
};

inline GradientField gradient_field(const MultispectralImage& img) {
  require(img.height >= 2 && img.width >= 2, "gradient_field needs at least 2x2");
  GradientField g;
  g.height = img.height - 1;
  g.width = img.width - 1;
  g.bands = img.bands;
  const std::size_t count = std::size_t(g.height) * g.width * g.bands;
  g.dx.resize(count);
  g.dy.resize(count);
  g.magnitude.resize(count);
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x)
      for (int b = 0; b < g.bands; ++b) {
        const double v = img.at(y, x, b);
        const double ddx = img.at(y, x + 1, b) - v;
        const double ddy = img.at(y + 1, x, b) - v;
        const std::size_t i = (std::size_t(y) * g.width + x) * g.bands + b;
        g.dx[i] = ddx;
        g.dy[i] = ddy;
        g.magnitude[i] = std::sqrt(ddx * ddx + ddy * ddy);
      }
  return g;
}

inline double gradient_distance(const MultispectralImage& a, const MultispectralImage& b,
                                const DirectionSet& dirs) {
  require(a.bands == b.bands, "band count mismatch");
  const GradientField ga = gradient_field(a);
  const GradientField gb = gradient_field(b);
  require(ga.height == gb.height && ga.width == gb.width,
          "gradient_distance needs matching image sizes");
  return sliced_wasserstein(ga.magnitude_pixels(), gb.magnitude_pixels(), dirs);
}

inline double gradient_distance_band(const MultispectralImage& a,
                                     const MultispectralImage& b, int band) {
  require(a.bands == b.bands, "band count mismatch");
  require(band >= 0 && band < a.bands, "band index out of range");
  const GradientField ga = gradient_field(a);
  const GradientField gb = gradient_field(b);
  require(ga.height == gb.height && ga.width == gb.width,
          "gradient_distance needs matching image sizes");
  const int m = ga.height * ga.width;
  std::vector<double> sa(m), sb(m);
  for (int p = 0; p < m; ++p) {
    sa[p] = ga.magnitude[std::size_t(p) * ga.bands + band];
    sb[p] = gb.magnitude[std::size_t(p) * gb.bands + band];
  }
  return wasserstein_1d(sa, sb);
}

// ---------------------------------------------------------------------------
// Full report

struct MetricsReport {
  std::map<std::string, double> scalars;
  // metric family -> band label -> value
  std::map<std::string, std::map<std::string, double>> per_band;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["scalars"] = scalars;
    j["per_band"] = per_band;
    return j;
  }
};

inline constexpr std::array<int, 3> kRgbBandIndices = {1, 2, 3};  // bands 2,3,4

// Positions of the RGB-like bands 2,3,4. Band labels win (so a stack with
// the correction bands removed still finds B02/B03/B04); otherwise fall back
// to positions 1,2,3, which is where they sit in the standard 11-band stack.
inline std::optional<std::array<int, 3>> rgb_band_positions(
    const MultispectralImage& img) {
  const auto find_label = [&](const std::string& label) {
    for (int b = 0; b < img.bands; ++b) {
      std::string lower = img.band_labels[b];
      for (char& c : lower) c = char(std::tolower(c));
      if (lower == label) return b;
    }
    return -1;
  };
  const int b2 = find_label("b02"), b3 = find_label("b03"), b4 = find_label("b04");
  if (b2 >= 0 && b3 >= 0 && b4 >= 0) return std::array<int, 3>{b2, b3, b4};
  if (img.bands > kRgbBandIndices[2]) return kRgbBandIndices;
  return std::nullopt;
}

// All pair metrics in one pass. The projector is optional (L_style^PCA is
// omitted without one); the direction set must match the band count and is
// shared across an evaluation campaign.
inline MetricsReport evaluate_pair(const MultispectralImage& exemplar,
                                   const MultispectralImage& synth,
                                   const FeatureExtractor& fx,
                                   const Projector* projector, const DirectionSet& dirs,
                                   StatKind kind = StatKind::Covariance) {
  require(exemplar.bands == synth.bands, "band count mismatch");
  require(exemplar.height == synth.height && exemplar.width == synth.width,
          "evaluate_pair needs matching image sizes");
  require(dirs.dimension() == exemplar.bands,
          "direction set dimension must match the band count");

  const StyleWeights weights = StyleWeights::quadratic_decay(fx);
  MetricsReport report;

  if (exemplar.bands >= 3)
    report.scalars["L_style^MS"] =
        exact_expected_style_distance(exemplar, synth, fx, weights, kind);
  if (projector) {
    require(projector->input_bands() == exemplar.bands,
            "projector dimension does not match the images");
    report.scalars["L_style^PCA"] =
        projected_style_distance(exemplar, synth, *projector, fx, weights, kind);
  }
  if (exemplar.bands == 3) {
    report.scalars["L_style^RGB"] = style_distance(exemplar, synth, fx, weights, kind);
  } else if (const auto rgb_pos = rgb_band_positions(exemplar)) {
    BandSelection rgb;
    rgb.indices.assign(rgb_pos->begin(), rgb_pos->end());
    report.scalars["L_style^RGB"] = style_distance(
        select_bands(exemplar, rgb), select_bands(synth, rgb), fx, weights, kind);
  }

  report.scalars["L_sp^mean"] = spectrum_distance_mean(exemplar, synth);
  report.scalars["L_hist"] = hist_distance(exemplar, synth, dirs);
  report.scalars["L_grad"] = gradient_distance(exemplar, synth, dirs);

  const GaussianDistances gd = gaussian_distances(exemplar, synth);
  report.scalars["L_mu"] = gd.l_mu;
  report.scalars["L_Sigma"] = gd.l_sigma;
  report.scalars["L_RX"] = gd.l_rx;

  for (int b = 0; b < exemplar.bands; ++b) {
    const std::string& label = exemplar.band_labels[b];
    report.per_band["L_hist^lambda"][label] = hist_distance_band(exemplar, synth, b);
    report.per_band["L_sp^lambda"][label] = spectrum_distance_band(exemplar, synth, b);
    report.per_band["L_grad^lambda"][label] = gradient_distance_band(exemplar, synth, b);
  }
  return report;
}

}  // namespace mstex
