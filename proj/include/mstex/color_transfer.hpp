#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <string>

#include "mstex/error.hpp"
#include "mstex/image.hpp"

namespace mstex {

// Jittered Cholesky factor of a PSD matrix. Near-singular covariances (flat
// channels, constant images) get eps*I added before factorization so the
// factor stays invertible; eps scales with the trace and has an absolute
// floor for the trace-zero case.
inline Eigen::MatrixXd jittered_cholesky(const Eigen::MatrixXd& cov,
                                         Eigen::MatrixXd* jittered_cov = nullptr) {
  const int n = int(cov.rows());
  double eps = 1e-8 * cov.trace() / double(n);
  if (!(eps > 0.0)) eps = 1e-16;
  Eigen::MatrixXd sym = 0.5 * (cov + cov.transpose());
  for (int attempt = 0; attempt < 8; ++attempt) {
    Eigen::MatrixXd shifted = sym + eps * Eigen::MatrixXd::Identity(n, n);
    Eigen::LLT<Eigen::MatrixXd> llt(shifted);
    if (llt.info() == Eigen::Success) {
      if (jittered_cov) *jittered_cov = shifted;
      return llt.matrixL();
    }
    eps *= 100.0;
  }
  throw Error("covariance is not positive semi-definite within tolerance");
}

// First and second order statistics of a 3-channel pixel distribution,
// with the Cholesky factor of the (jittered) covariance.
struct ColorMoments {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  Eigen::Matrix3d covariance = Eigen::Matrix3d::Zero();
  Eigen::Matrix3d cholesky = Eigen::Matrix3d::Zero();

  static ColorMoments from_moments(const Eigen::Vector3d& mean,
                                   const Eigen::Matrix3d& covariance) {
    ColorMoments m;
    m.mean = mean;
    Eigen::MatrixXd jit;
    m.cholesky = jittered_cholesky(covariance, &jit);
    m.covariance = jit;
    return m;
  }
};

// Population (1/M) moments of a 3-band image's pixels.
inline ColorMoments compute_moments(const MultispectralImage& img3) {
  require(img3.bands == 3, "compute_moments expects a 3-channel image");
  require(img3.pixel_count() >= 2, "compute_moments needs at least 2 pixels");
  const auto pixels = img3.pixels();
  const Eigen::Vector3d mean = pixels.colwise().mean();
  const Eigen::MatrixXd centered = pixels.rowwise() - mean.transpose();
  const Eigen::Matrix3d cov =
      (centered.transpose() * centered) / double(img3.pixel_count());
  return ColorMoments::from_moments(mean, cov);
}

inline ColorMoments compute_moments(const PaletteImage& palette) {
  return compute_moments(palette.as_multispectral());
}

// Affine moment-matching map x -> mu_T + L_T L_S^{-1} (x - mu_S).
struct ColorTransform {
  ColorMoments source;
  ColorMoments target;

  Eigen::Matrix3d linear_map() const {
    // L_T * L_S^{-1} via triangular solve.
    return target.cholesky *
           source.cholesky.triangularView<Eigen::Lower>()
               .solve(Eigen::Matrix3d::Identity());
  }
};

inline ColorTransform make_color_transform(const ColorMoments& source,
                                           const ColorMoments& target) {
  return ColorTransform{source, target};
}

// Per-pixel affine map. Output is not clipped; invertibility matters more
// than staying inside [0,1] here.
inline MultispectralImage apply(const ColorTransform& t, const MultispectralImage& img3) {
  require(img3.bands == 3, "color transform expects a 3-channel image");
  const Eigen::Matrix3d a = t.linear_map();
  MultispectralImage out = img3;
  auto pixels = out.pixels();
  const Eigen::MatrixXd centered = pixels.rowwise() - t.source.mean.transpose();
  pixels = (centered * a.transpose()).rowwise() + t.target.mean.transpose();
  out.source_id = img3.source_id;
  return out;
}

inline ColorTransform inverse(const ColorTransform& t) {
  return ColorTransform{t.target, t.source};
}

}  // namespace mstex
