// Acceptance suite. Each test covers one release criterion and prints a
// single [PASS]/[FAIL] line; criteria that need the real corpus and
// pre-trained weights are gated on environment variables and print [SKIP]
// when the inputs are absent:
//   MSTEX_CORPUS_DIR    directory of multispectral exemplars
//   MSTEX_WEIGHTS       converted pre-trained weights (.mnet)
//   MSTEX_PALETTES_DIR  wall.png / pebbles.png / fabrics.png

#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mstex/cli.hpp"
#include "mstex/harness.hpp"
#include "mstex/metrics.hpp"
#include "mstex/style.hpp"
#include "mstex/synthesis.hpp"
#include "test_support.hpp"

namespace mstex {
namespace {

using testing::assignment_oracle_w2;
using testing::correlated_field;
using testing::random_image;
using testing::ScratchDir;
using testing::tiny_network;

class Criterion : public ::testing::Test {
 protected:
  void SetUp() override { start_ = std::chrono::steady_clock::now(); }

  double elapsed_seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_)
        .count();
  }

  void report(int index, const std::string& what) {
    std::cout << (HasFailure() ? "[FAIL]" : "[PASS]") << " criterion " << index << ": "
              << what << " (" << elapsed_seconds() << " s)" << std::endl;
  }

  void report_skip(int index, const std::string& why) {
    std::cout << "[SKIP] criterion " << index << ": " << why << std::endl;
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

Eigen::Matrix3d random_spd3(Rng& rng) {
  Eigen::Matrix3d a;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) a(r, c) = rng.normal();
  return a * a.transpose() + 0.02 * Eigen::Matrix3d::Identity();
}

TEST_F(Criterion, C1_ColorTransferExactness) {
  Rng rng(11);
  for (int pair = 0; pair < 20; ++pair) {
    const auto img = random_image(24, 24, 3, 1000 + pair);
    const auto source = compute_moments(img);
    const Eigen::Vector3d target_mean(rng.uniform(), rng.uniform(), rng.uniform());
    const auto target = ColorMoments::from_moments(target_mean, random_spd3(rng));
    const auto transform = make_color_transform(source, target);

    const auto mapped = apply(transform, img);
    const auto got = compute_moments(mapped);
    EXPECT_LT((got.mean - target.mean).cwiseAbs().maxCoeff(), 1e-6) << "pair " << pair;
    EXPECT_LT((got.covariance - target.covariance).cwiseAbs().maxCoeff(), 1e-6)
        << "pair " << pair;

    const auto round_trip = apply(inverse(transform), mapped);
    double max_err = 0.0;
    for (std::size_t i = 0; i < img.data.size(); ++i)
      max_err = std::max(max_err, std::abs(round_trip.data[i] - img.data[i]));
    EXPECT_LT(max_err, 1e-9) << "pair " << pair;
  }
  EXPECT_LT(elapsed_seconds(), 5.0);
  report(1, "color transfer moment matching (1e-6) and inverse round trip (1e-9)");
}

TEST_F(Criterion, C2_StochasticEqualsExpectation) {
  const auto fx = tiny_network(200);
  const auto weights = StyleWeights::quadratic_decay(fx);
  for (int bands : {4, 5}) {
    const auto a = correlated_field(32, 32, bands, 2000 + bands);
    const auto b = correlated_field(32, 32, bands, 2100 + bands);
    TripletBatch full;
    full.triplets = enumerate_triplets(bands);
    const double stochastic = stochastic_style_distance(a, b, full, fx, weights);
    const double exact = exact_expected_style_distance(a, b, fx, weights);
    EXPECT_NEAR(stochastic, exact, 1e-10 * std::max(1.0, std::abs(exact)))
        << "bands " << bands;
    EXPECT_GT(exact, 0.0);
  }
  EXPECT_LT(elapsed_seconds(), 60.0);
  report(2, "full enumerated batch equals the exact triplet expectation (1e-10)");
}

TEST_F(Criterion, C3_TransportMetricOracles) {
  // 1-D Wasserstein against the exhaustive-assignment oracle.
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a(20), b(20);
    for (auto& v : a) v = 3.0 * rng.normal() + 0.5;
    for (auto& v : b) v = rng.normal() - 0.1 * trial;
    const double sorted = wasserstein_1d(a, b);
    const double assigned = assignment_oracle_w2(a, b);
    EXPECT_NEAR(sorted, assigned, 1e-10 * std::max(1.0, assigned)) << "trial " << trial;
  }
  // Dimension-1 sliced distance collapses to the 1-D distance.
  const int m = 64;
  RowMajorMatrixXd x(m, 1), y(m, 1);
  std::vector<double> xv(m), yv(m);
  for (int i = 0; i < m; ++i) {
    xv[i] = x(i, 0) = rng.normal();
    yv[i] = y(i, 0) = 0.7 * rng.normal() + 0.2;
  }
  const auto dirs = DirectionSet::sample(1, 37, 32);
  EXPECT_NEAR(sliced_wasserstein(x, y, dirs), wasserstein_1d(xv, yv), 1e-12);
  // Diagonal Bures closed form.
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 4 + int(rng.below(5));
    Eigen::VectorXd a(n), b(n), mu1(n), mu2(n);
    for (int i = 0; i < n; ++i) {
      a(i) = 0.05 + rng.uniform();
      b(i) = 0.05 + rng.uniform();
      mu1(i) = rng.normal();
      mu2(i) = rng.normal();
    }
    const auto d =
        gaussian_distances_from_moments(mu1, a.asDiagonal(), mu2, b.asDiagonal());
    double bures_sq = 0.0;
    for (int i = 0; i < n; ++i) {
      const double s = std::sqrt(a(i)) - std::sqrt(b(i));
      bures_sq += s * s;
    }
    const double expected = std::sqrt((mu1 - mu2).squaredNorm() + bures_sq);
    EXPECT_NEAR(d.l_rx, expected, 1e-10 * std::max(1.0, expected)) << "trial " << trial;
  }
  report(3, "wasserstein_1d / sliced collapse / diagonal Bures oracles (1e-10, 1e-12)");
}

TEST_F(Criterion, C4_StyleDistanceGradients) {
  const auto fx = tiny_network(400);
  const auto weights = StyleWeights::quadratic_decay(fx);
  const auto exemplar = correlated_field(48, 48, 5, 41);
  const auto synth = correlated_field(48, 48, 5, 42);
  const auto exemplar3 = extract_triplet(exemplar, {0, 2, 4});
  const auto synth3 = extract_triplet(synth, {0, 2, 4});
  const auto projector = fit_pca(std::vector<MultispectralImage>{exemplar});
  PaletteImage palette = PaletteImage::zeros(24, 24);
  Rng prng(43);
  for (double& v : palette.data) v = prng.uniform();
  const auto transform = make_palette_transform(projector, exemplar, palette);
  const auto batch = sample_triplets(5, 4, 44);

  struct Case {
    const char* name;
    bool three_channel;
    std::function<double(const MultispectralImage&, MultispectralImage*)> eval;
  };
  const std::vector<Case> cases = {
      {"rgb_plain", true,
       [&](const MultispectralImage& img, MultispectralImage* grad) {
         return style_distance(exemplar3, img, fx, weights, StatKind::Covariance, grad);
       }},
      {"stochastic", false,
       [&](const MultispectralImage& img, MultispectralImage* grad) {
         return stochastic_style_distance(exemplar, img, batch, fx, weights,
                                          StatKind::Covariance, grad);
       }},
      {"projected", false,
       [&](const MultispectralImage& img, MultispectralImage* grad) {
         return projected_style_distance(exemplar, img, projector, fx, weights,
                                         StatKind::Covariance, grad);
       }},
      {"projected_color", false,
       [&](const MultispectralImage& img, MultispectralImage* grad) {
         return projected_color_style_distance(exemplar, img, projector, transform, fx,
                                               weights, StatKind::Covariance, grad);
       }},
  };

  for (const auto& test_case : cases) {
    const MultispectralImage& base = test_case.three_channel ? synth3 : synth;
    MultispectralImage grad;
    test_case.eval(base, &grad);
    Rng rng(45);
    const double h = 1e-5;
    int checked = 0;
    for (int trial = 0; trial < 40 && checked < 10; ++trial) {
      const std::size_t i = rng.below(base.data.size());
      auto plus = base;
      auto minus = base;
      plus.data[i] += h;
      minus.data[i] -= h;
      const double fd =
          (test_case.eval(plus, nullptr) - test_case.eval(minus, nullptr)) / (2.0 * h);
      const double an = grad.data[i];
      const double denom = std::max(std::abs(fd), std::abs(an));
      if (denom < 1e-9) continue;
      EXPECT_LT(std::abs(fd - an) / denom, 1e-3)
          << test_case.name << " flat index " << i;
      ++checked;
    }
    EXPECT_GE(checked, 10) << test_case.name;
  }
  EXPECT_LT(elapsed_seconds(), 300.0);
  report(4, "analytic gradients of all four style distances vs central differences "
            "(1e-3 relative)");
}

TEST_F(Criterion, C5_LossDescentHundredfold) {
  const auto fx = tiny_network(500);
  const auto weights = StyleWeights::quadratic_decay(fx);
  const auto exemplar = correlated_field(96, 96, 5, 51);
  const auto projector = fit_pca(std::vector<MultispectralImage>{exemplar});

  SynthesisConfig cfg;
  cfg.iterations = 200;
  cfg.batch_size = 10;
  cfg.rng_seed = 7;

  const auto init = gaussian_init(compute_summary(exemplar), 96, 96,
                                  derive_seed(cfg.rng_seed, 0));

  cfg.objective = Objective::Stochastic;
  const auto stochastic = synthesize(exemplar, cfg, fx);
  const double ms_before = exact_expected_style_distance(exemplar, init, fx, weights);
  const double ms_after =
      exact_expected_style_distance(exemplar, stochastic.image, fx, weights);
  EXPECT_GT(ms_before, 0.0);
  EXPECT_LE(ms_after, 0.01 * ms_before)
      << "stochastic: init " << ms_before << " final " << ms_after;

  cfg.objective = Objective::Projected;
  const auto projected = synthesize(exemplar, cfg, fx, &projector);
  const double pca_before =
      projected_style_distance(exemplar, init, projector, fx, weights);
  const double pca_after =
      projected_style_distance(exemplar, projected.image, projector, fx, weights);
  EXPECT_GT(pca_before, 0.0);
  EXPECT_LE(pca_after, 0.01 * pca_before)
      << "projected: init " << pca_before << " final " << pca_after;

  EXPECT_LT(elapsed_seconds(), 900.0);
  std::ostringstream detail;
  detail.precision(3);
  detail << "200 iterations reduce L_style^MS and L_style^PCA by >= 100x "
         << "(MS " << ms_before << " -> " << ms_after << ", PCA " << pca_before
         << " -> " << pca_after << ")";
  report(5, detail.str());
}

TEST_F(Criterion, C6_BatchSizeOrdering) {
  const auto fx = tiny_network(600);
  const auto weights = StyleWeights::quadratic_decay(fx);
  const auto exemplar = correlated_field(64, 64, 5, 61);

  const auto mean_final = [&](int batch_size) {
    double sum = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      SynthesisConfig cfg;
      cfg.objective = Objective::Stochastic;
      cfg.iterations = 120;
      cfg.batch_size = batch_size;
      cfg.rng_seed = 100 + seed;
      const auto result = synthesize(exemplar, cfg, fx);
      sum += exact_expected_style_distance(exemplar, result.image, fx, weights);
    }
    return sum / 5.0;
  };

  const double b1 = mean_final(1);
  const double b5 = mean_final(5);
  const double b10 = mean_final(10);
  EXPECT_LT(b10, b5) << "b10=" << b10 << " b5=" << b5 << " b1=" << b1;
  EXPECT_LT(b5, b1) << "b10=" << b10 << " b5=" << b5 << " b1=" << b1;
  std::ostringstream detail;
  detail.precision(3);
  detail << "mean final L_style^MS over 5 seeds: B=10 < B=5 < B=1 (" << b10 << " < "
         << b5 << " < " << b1 << ")";
  report(6, detail.str());
}

TEST_F(Criterion, C7_PcaFidelity) {
  // Synthetic rank-3 corpus.
  Rng rng(71);
  Eigen::MatrixXd basis(9, 3);
  for (int r = 0; r < 9; ++r)
    for (int c = 0; c < 3; ++c) basis(r, c) = rng.normal();
  std::vector<MultispectralImage> corpus;
  for (int i = 0; i < 3; ++i) {
    auto img = MultispectralImage::zeros(32, 32, 9);
    for (int p = 0; p < img.pixel_count(); ++p) {
      Eigen::Vector3d latent(rng.normal(), rng.normal(), rng.normal());
      const Eigen::VectorXd pixel = 0.5 * Eigen::VectorXd::Ones(9) + basis * latent * 0.1;
      for (int b = 0; b < 9; ++b)
        img.data[std::size_t(p) * 9 + b] = pixel(b) + 1e-6 * rng.normal();
    }
    img.source_id = "rank3_" + std::to_string(i);
    corpus.push_back(std::move(img));
  }
  const auto p1 = fit_pca(corpus, "rank3");
  EXPECT_GT(explained_variance_ratio(p1, 3), 0.999);
  const auto p2 = fit_pca(corpus, "rank3");
  EXPECT_EQ(p1.mean, p2.mean);
  EXPECT_EQ(Eigen::MatrixXd(p1.components), Eigen::MatrixXd(p2.components));
  EXPECT_EQ(p1.eigenvalues, p2.eigenvalues);

  const char* corpus_dir = std::getenv("MSTEX_CORPUS_DIR");
  if (corpus_dir) {
    std::vector<MultispectralImage> real;
    for (const auto& entry : std::filesystem::directory_iterator(corpus_dir)) {
      const std::string path = entry.path().string();
      if (has_suffix(path, ".tif") || has_suffix(path, ".tiff") ||
          has_suffix(path, ".json"))
        real.push_back(load_multispectral(path));
    }
    ASSERT_FALSE(real.empty());
    const auto pr = fit_pca(real, corpus_dir);
    EXPECT_NEAR(explained_variance_ratio(pr, 1), 0.95, 0.01);
    EXPECT_GE(explained_variance_ratio(pr, 3), 0.99 - 0.01);
    report(7, "rank-3 fidelity, bit-identical refits, and real-corpus variance capture");
  } else {
    report(7, "rank-3 corpus fidelity and bit-identical refits "
              "(real-corpus check skipped: MSTEX_CORPUS_DIR unset)");
  }
}

TEST_F(Criterion, C8_SpectrumMetric) {
  // Sinusoid peaks at its frequency radius.
  const int n = 64, freq = 9;
  std::vector<double> band(std::size_t(n) * n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      band[std::size_t(y) * n + x] =
          0.5 + 0.35 * std::cos(2.0 * M_PI * freq * y / n);
  const auto spec = radial_spectrum(band, n, n);
  for (int r = 1; r <= spec.max_radius(); ++r) {
    if (r == freq) continue;
    EXPECT_GE(spec.values[freq], 10.0 * spec.values[r]) << "r=" << r;
  }

  // Uniform log shift for a 2x scaled copy.
  const auto img = random_image(64, 48, 1, 81);
  auto doubled = img;
  for (double& v : doubled.data) v *= 2.0;
  const int r_max = 24;
  const double expected = std::sqrt(double(r_max)) * std::log(2.0);
  EXPECT_NEAR(spectrum_distance_band(img, doubled, 0), expected, 1e-6);
  report(8, "sinusoid annulus dominance (10x) and analytic 2x log shift (1e-6)");
}

TEST_F(Criterion, C9_FullCorpusRegression) {
  const char* corpus_dir = std::getenv("MSTEX_CORPUS_DIR");
  const char* weights_path = std::getenv("MSTEX_WEIGHTS");
  const char* palettes_dir = std::getenv("MSTEX_PALETTES_DIR");
  if (!corpus_dir || !weights_path || !palettes_dir) {
    report_skip(9,
                "full-corpus method-ordering regression needs MSTEX_CORPUS_DIR, "
                "MSTEX_WEIGHTS and MSTEX_PALETTES_DIR");
    GTEST_SKIP();
  }

  ScratchDir dir("acceptance_c9");
  ExperimentPlan plan;
  plan.weights_path = weights_path;
  plan.corpus_dir = corpus_dir;
  plan.methods = {"stochastic", "pca", "pca_color:wall", "pca_color:pebbles",
                  "pca_color:fabrics"};
  plan.palettes = {{"wall", std::string(palettes_dir) + "/wall.png"},
                   {"pebbles", std::string(palettes_dir) + "/pebbles.png"},
                   {"fabrics", std::string(palettes_dir) + "/fabrics.png"}};
  plan.output_dir = dir.path("out");
  const auto result = run_experiment(plan);
  EXPECT_EQ(result.failures, 0);
  const auto& mean = result.table.mean;
  const auto best = [&](const std::string& metric) {
    std::string winner;
    double best_value = std::numeric_limits<double>::infinity();
    for (const auto& [method, row] : mean) {
      const auto it = row.find(metric);
      if (it != row.end() && it->second < best_value) {
        best_value = it->second;
        winner = method;
      }
    }
    return winner;
  };
  EXPECT_EQ(best("L_style^MS"), "stochastic");
  EXPECT_EQ(best("L_sp^mean"), "stochastic");
  EXPECT_EQ(best("L_grad"), "stochastic");
  EXPECT_EQ(best("L_Sigma"), "stochastic");
  EXPECT_EQ(best("L_hist"), "pca_color:pebbles");
  EXPECT_EQ(best("L_mu"), "pca_color:pebbles");
  EXPECT_EQ(best("L_RX"), "pca_color:pebbles");

  ExperimentPlan rgb_plan = plan;
  rgb_plan.output_dir = dir.path("out_rgb");
  const auto rgb = rgb_comparison(rgb_plan);
  std::string rgb_best;
  double rgb_best_value = std::numeric_limits<double>::infinity();
  for (const auto& [method, row] : rgb.table.mean) {
    const auto it = row.find("L_style^RGB");
    if (it != row.end() && it->second < rgb_best_value) {
      rgb_best_value = it->second;
      rgb_best = method;
    }
  }
  EXPECT_EQ(rgb_best, "rgb_baseline");
  report(9, "full-corpus Table III / Table II method orderings");
}

TEST_F(Criterion, C10_CliDeterminism) {
  ScratchDir dir("acceptance_c10");
  tiny_network(1000).save(dir.path("net.mnet"));
  for (int i = 0; i < 2; ++i)
    save_multispectral(correlated_field(64, 64, 4, 9000 + i),
                       dir.path("ex" + std::to_string(i) + ".tif"));
  nlohmann::json plan;
  plan["weights"] = dir.path("net.mnet");
  plan["corpus"] = {dir.path("ex0.tif"), dir.path("ex1.tif")};
  plan["methods"] = {"stochastic", "pca"};
  plan["synthesis"] = {{"iterations", 3}, {"batch_size", 2}};
  plan["metrics"] = {{"directions", 32}, {"seed", 17}};
  plan["seeds"] = {1, 2};
  std::ofstream(dir.path("plan.json")) << plan.dump(2);

  const auto read_file = [](const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
  };
  ::testing::internal::CaptureStdout();
  ASSERT_EQ(cli::run({"experiment", "--plan", dir.path("plan.json"), "--out",
                      dir.path("run_a")}),
            0);
  ::testing::internal::GetCapturedStdout();
  ::testing::internal::CaptureStdout();
  ASSERT_EQ(cli::run({"experiment", "--plan", dir.path("plan.json"), "--out",
                      dir.path("run_b")}),
            0);
  ::testing::internal::GetCapturedStdout();
  const std::string a = read_file(dir.path("run_a/records.jsonl"));
  const std::string b = read_file(dir.path("run_b/records.jsonl"));
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, b);
  // The synthesized rasters are bit-identical as well.
  EXPECT_EQ(read_file(dir.path("run_a/images/ex0__stochastic__s1.tif")),
            read_file(dir.path("run_b/images/ex0__stochastic__s1.tif")));
  report(10, "same CLI command, same seeds: bit-identical records and rasters");
}

}  // namespace
}  // namespace mstex
