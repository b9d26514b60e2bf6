#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "mstex/error.hpp"
#include "mstex/image.hpp"

namespace mstex {

// Orthonormal N->3 linear map: pixel -> components * (pixel - mean).
// Rows of `components` are the top-3 eigenvectors of the pooled pixel
// covariance; the full eigenvalue spectrum is kept for variance reporting.
struct Projector {
  Eigen::VectorXd mean;                               // length N
  Eigen::Matrix<double, 3, Eigen::Dynamic> components;  // 3 x N
  Eigen::VectorXd eigenvalues;                        // length N, nonincreasing
  std::string fitted_on;

  int input_bands() const { return int(mean.size()); }

  static Projector identity3() {
    Projector p;
    p.mean = Eigen::VectorXd::Zero(3);
    p.components = Eigen::Matrix3d::Identity();
    p.eigenvalues = Eigen::Vector3d::Ones();
    p.fitted_on = "identity";
    return p;
  }
};

namespace detail {

// Largest-magnitude entry made positive, first index winning ties, so that
// refits of the same corpus are bit-identical.
inline void canonicalize_sign(Eigen::Matrix<double, 3, Eigen::Dynamic>& components) {
  for (int r = 0; r < 3; ++r) {
    int arg = 0;
    double best = -1.0;
    for (int c = 0; c < components.cols(); ++c) {
      const double mag = std::abs(components(r, c));
      if (mag > best) {
        best = mag;
        arg = c;
      }
    }
    if (components(r, arg) < 0.0) components.row(r) = -components.row(r);
  }
}

}  // namespace detail

inline Projector fit_pca(std::span<const MultispectralImage> corpus,
                         const std::string& corpus_id = "corpus") {
  require(!corpus.empty(), "fit_pca needs a nonempty corpus");
  const int n = corpus.front().bands;
  require(n >= 3, "fit_pca needs at least 3 spectral bands");
  for (const auto& img : corpus)
    require(img.bands == n, "inconsistent band counts across corpus");

  // Two-pass pooled moments over every pixel of every image.
  std::size_t total = 0;
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(n);
  for (const auto& img : corpus) {
    sum += img.pixels().colwise().sum().transpose();
    total += std::size_t(img.pixel_count());
  }
  const Eigen::VectorXd mean = sum / double(total);
  Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(n, n);
  for (const auto& img : corpus) {
    const Eigen::MatrixXd centered = img.pixels().rowwise() - mean.transpose();
    scatter.noalias() += centered.transpose() * centered;
  }
  const Eigen::MatrixXd cov = scatter / double(total);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  require(solver.info() == Eigen::Success, "eigendecomposition failed in fit_pca");

  // Eigen returns ascending order; flip to nonincreasing and clamp at zero.
  Eigen::VectorXd eigenvalues(n);
  Eigen::MatrixXd vectors(n, n);
  for (int i = 0; i < n; ++i) {
    eigenvalues(i) = std::max(0.0, solver.eigenvalues()(n - 1 - i));
    vectors.col(i) = solver.eigenvectors().col(n - 1 - i);
  }

  const double lead = eigenvalues(0);
  int rank = 0;
  for (int i = 0; i < n; ++i)
    if (eigenvalues(i) > lead * 1e-12 && eigenvalues(i) > 0.0) ++rank;
  require(rank >= 3, "corpus has only " + std::to_string(rank) +
                         " independent spectral directions, need 3");

  Projector p;
  p.mean = mean;
  p.components = vectors.leftCols(3).transpose();
  p.eigenvalues = eigenvalues;
  p.fitted_on = corpus_id;
  detail::canonicalize_sign(p.components);
  return p;
}

inline Projector fit_pca(const std::vector<MultispectralImage>& corpus,
                         const std::string& corpus_id = "corpus") {
  return fit_pca(std::span<const MultispectralImage>(corpus), corpus_id);
}

inline MultispectralImage project(const Projector& p, const MultispectralImage& img) {
  require(img.bands == p.input_bands(),
          "projector expects " + std::to_string(p.input_bands()) + " bands, image has " +
              std::to_string(img.bands));
  MultispectralImage out = MultispectralImage::zeros(img.height, img.width, 3);
  out.source_id = img.source_id;
  out.band_labels = {"pc1", "pc2", "pc3"};
  const Eigen::MatrixXd centered = img.pixels().rowwise() - p.mean.transpose();
  out.pixels() = centered * p.components.transpose();
  return out;
}

// Adjoint of project() on per-pixel gradients: scatter a 3-channel gradient
// image back to N bands. The mean offset has zero derivative.
inline MultispectralImage project_adjoint(const Projector& p,
                                          const MultispectralImage& grad3) {
  require(grad3.bands == 3, "project_adjoint expects a 3-channel gradient");
  MultispectralImage out =
      MultispectralImage::zeros(grad3.height, grad3.width, p.input_bands());
  out.pixels() = grad3.pixels() * p.components;
  return out;
}

inline double explained_variance_ratio(const Projector& p, int k) {
  const int n = int(p.eigenvalues.size());
  require(k >= 1 && k <= n, "explained_variance_ratio: k out of range");
  const double total = p.eigenvalues.sum();
  require(total > 0.0, "projector has an all-zero spectrum");
  return p.eigenvalues.head(k).sum() / total;
}

inline constexpr int kProjectorFormatVersion = 1;

inline void save_projector(const Projector& p, const std::string& path) {
  nlohmann::json j;
  j["format"] = "mstex-projector";
  j["format_version"] = kProjectorFormatVersion;
  j["fitted_on"] = p.fitted_on;
  j["mean"] = std::vector<double>(p.mean.data(), p.mean.data() + p.mean.size());
  nlohmann::json comps = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) {
    std::vector<double> row(p.components.cols());
    for (int c = 0; c < p.components.cols(); ++c) row[c] = p.components(r, c);
    comps.push_back(row);
  }
  j["components"] = comps;
  j["eigenvalues"] =
      std::vector<double>(p.eigenvalues.data(), p.eigenvalues.data() + p.eigenvalues.size());
  std::ofstream out(path);
  require(out.good(), "cannot create projector file: " + path);
  out << j.dump(2) << "\n";
}

inline Projector load_projector(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open projector file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw Error("invalid projector file " + path + ": " + e.what());
  }
  require(j.value("format", "") == "mstex-projector",
          "not a projector file: " + path);
  require(j.value("format_version", -1) == kProjectorFormatVersion,
          "unsupported projector format version in " + path);
  Projector p;
  const auto mean = j.at("mean").get<std::vector<double>>();
  const int n = int(mean.size());
  p.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), n);
  require(j.at("components").size() == 3, "projector components must have 3 rows");
  p.components.resize(3, n);
  for (int r = 0; r < 3; ++r) {
    const auto row = j.at("components")[r].get<std::vector<double>>();
    require(int(row.size()) == n, "projector component row length mismatch");
    for (int c = 0; c < n; ++c) p.components(r, c) = row[c];
  }
  const auto eig = j.at("eigenvalues").get<std::vector<double>>();
  require(int(eig.size()) == n, "projector eigenvalue count mismatch");
  p.eigenvalues = Eigen::Map<const Eigen::VectorXd>(eig.data(), n);
  p.fitted_on = j.value("fitted_on", "");
  return p;
}

}  // namespace mstex
