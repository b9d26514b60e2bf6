#pragma once

// VGG-family convolutional feature extractor with reverse-mode gradients
// with respect to the input pixels.
//
// Weights file layout ("mstex network", .mnet):
//   bytes 0..7   magic "MSTXNET1"
//   bytes 8..15  little-endian uint64 manifest length
//   manifest     JSON: {"format_version":1, "name":..., "dtype":"float64",
//                 "pooling":"max"|"avg",
//                 "preprocessing":{"scale":s,"mean":[m0,m1,m2]},
//                 "layers":[{"type":"conv","name":...,"in":i,"out":o,"kernel":k},
//                           {"type":"pool"}, ...]}
//   blob         for each conv, weights out*in*k*k (out-major, then in, ky, kx)
//                followed by bias[out]; dtype float32 or float64.
//
// Every conv is 3x3-style same-padding stride 1 followed by ReLU; pools are
// 2x2 stride 2. Inputs in [0,1] are mapped to x*scale - mean[c] before the
// first conv. Activations are tapped after the ReLU of selected conv layers
// (1-based conv ordinals); the default taps the first conv at each spatial
// resolution.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "mstex/error.hpp"
#include "mstex/image.hpp"
#include "mstex/rng.hpp"

namespace mstex {

inline constexpr int kMinNetworkInput = 32;

enum class PoolKind { Max, Average };

struct PreprocessSpec {
  double scale = 1.0;
  std::array<double, 3> channel_mean = {0.0, 0.0, 0.0};
};

struct ConvSpec {
  std::string name;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
};

struct LayerDesc {
  bool is_pool = false;
  ConvSpec conv;
};

// Per-layer activations at the tapped convolutions: channels x positions.
struct FeatureActivations {
  std::vector<Eigen::MatrixXd> layers;
  std::vector<int> heights;
  std::vector<int> widths;
  std::vector<std::string> names;

  std::size_t size() const { return layers.size(); }
};

// Opaque per-call state needed to run the backward pass.
struct ForwardContext {
  int input_height = 0;
  int input_width = 0;
  std::vector<int> in_h, in_w;                    // per executed layer
  std::vector<std::vector<std::uint8_t>> relu_mask;  // conv layers
  std::vector<std::vector<std::int32_t>> pool_argmax;  // max-pool layers
  int executed_layers = 0;
};

namespace detail {

inline void im2col(const Eigen::MatrixXd& x, int h, int w, int k,
                   Eigen::MatrixXd& col) {
  const int pad = k / 2;
  const int in_ch = int(x.rows());
  col.resize(std::ptrdiff_t(in_ch) * k * k, std::ptrdiff_t(h) * w);
  col.setZero();
  for (int ci = 0; ci < in_ch; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const int row = (ci * k + ky) * k + kx;
        const int dy = ky - pad;
        const int dx = kx - pad;
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          const int x0 = std::max(0, -dx);
          const int x1 = std::min(w, w - dx);
          if (x0 >= x1) continue;
          col.block(row, std::ptrdiff_t(y) * w + x0, 1, x1 - x0) =
              x.block(ci, std::ptrdiff_t(sy) * w + x0 + dx, 1, x1 - x0);
        }
      }
    }
  }
}

inline void col2im_add(const Eigen::MatrixXd& col, int h, int w, int k,
                       Eigen::MatrixXd& x) {
  const int pad = k / 2;
  const int in_ch = int(x.rows());
  for (int ci = 0; ci < in_ch; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const int row = (ci * k + ky) * k + kx;
        const int dy = ky - pad;
        const int dx = kx - pad;
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          const int x0 = std::max(0, -dx);
          const int x1 = std::min(w, w - dx);
          if (x0 >= x1) continue;
          x.block(ci, std::ptrdiff_t(sy) * w + x0 + dx, 1, x1 - x0) +=
              col.block(row, std::ptrdiff_t(y) * w + x0, 1, x1 - x0);
        }
      }
    }
  }
}

}  // namespace detail

class FeatureExtractor {
 public:
  // --- construction -------------------------------------------------------

  // Random-weight network for tests and smoke runs: one inner vector of
  // channel widths per resolution block, pools in between.
  static FeatureExtractor make_random(const std::vector<std::vector<int>>& blocks,
                                      PoolKind pooling, const PreprocessSpec& prep,
                                      std::uint64_t seed,
                                      const std::string& name = "random") {
    FeatureExtractor fx;
    fx.name_ = name;
    fx.pooling_ = pooling;
    fx.prep_ = prep;
    int in_ch = 3;
    int block_index = 0;
    for (const auto& block : blocks) {
      if (block_index > 0) fx.layers_.push_back(LayerDesc{true, {}});
      int conv_in_block = 0;
      for (int out_ch : block) {
        ConvSpec spec;
        spec.name = "conv" + std::to_string(block_index + 1) + "_" +
                    std::to_string(conv_in_block + 1);
        spec.in_channels = in_ch;
        spec.out_channels = out_ch;
        spec.kernel = 3;
        fx.layers_.push_back(LayerDesc{false, spec});
        in_ch = out_ch;
        ++conv_in_block;
      }
      ++block_index;
    }
    Rng rng(seed);
    for (const auto& layer : fx.layers_) {
      if (layer.is_pool) continue;
      const auto& c = layer.conv;
      const int fan_in = c.in_channels * c.kernel * c.kernel;
      const double std_dev = std::sqrt(2.0 / double(fan_in));
      Eigen::MatrixXd w(c.out_channels, fan_in);
      for (int r = 0; r < w.rows(); ++r)
        for (int col = 0; col < w.cols(); ++col) w(r, col) = std_dev * rng.normal();
      fx.weights_.push_back(std::move(w));
      fx.biases_.push_back(Eigen::VectorXd::Zero(c.out_channels));
    }
    fx.tap_layers_ = fx.default_tap_layers();
    return fx;
  }

  static FeatureExtractor load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open weights file: " + path);
    char magic[8];
    in.read(magic, 8);
    require(in.gcount() == 8 && std::memcmp(magic, "MSTXNET1", 8) == 0,
            "not a mstex weights file: " + path);
    std::uint64_t manifest_len = 0;
    in.read(reinterpret_cast<char*>(&manifest_len), 8);
    require(in.good(), "truncated weights file: " + path);
    std::string manifest_text(manifest_len, '\0');
    in.read(manifest_text.data(), std::streamsize(manifest_len));
    require(in.good(), "truncated weights manifest: " + path);
    nlohmann::json manifest;
    try {
      manifest = nlohmann::json::parse(manifest_text);
    } catch (const std::exception& e) {
      throw Error("invalid weights manifest in " + path + ": " + e.what());
    }
    require(manifest.value("format_version", -1) == 1,
            "unsupported weights format version in " + path);

    FeatureExtractor fx;
    fx.name_ = manifest.value("name", "");
    const std::string pooling = manifest.value("pooling", "max");
    require(pooling == "max" || pooling == "avg",
            "unknown pooling kind '" + pooling + "' in " + path);
    fx.pooling_ = pooling == "max" ? PoolKind::Max : PoolKind::Average;
    if (manifest.contains("preprocessing")) {
      const auto& prep = manifest["preprocessing"];
      fx.prep_.scale = prep.value("scale", 1.0);
      if (prep.contains("mean")) {
        const auto mean = prep["mean"].get<std::vector<double>>();
        require(mean.size() == 3, "preprocessing mean must have 3 entries: " + path);
        fx.prep_.channel_mean = {mean[0], mean[1], mean[2]};
      }
    }
    int in_ch = 3;
    for (const auto& layer : manifest.at("layers")) {
      const std::string type = layer.at("type").get<std::string>();
      if (type == "pool") {
        fx.layers_.push_back(LayerDesc{true, {}});
      } else if (type == "conv") {
        ConvSpec spec;
        spec.name = layer.value("name", "conv");
        spec.in_channels = layer.at("in").get<int>();
        spec.out_channels = layer.at("out").get<int>();
        spec.kernel = layer.value("kernel", 3);
        require(spec.in_channels == in_ch,
                "conv layer '" + spec.name + "' input channel mismatch in " + path);
        require(spec.kernel % 2 == 1 && spec.kernel >= 1,
                "conv kernel must be odd: " + path);
        in_ch = spec.out_channels;
        fx.layers_.push_back(LayerDesc{false, spec});
      } else {
        throw Error("unknown layer type '" + type + "' in " + path);
      }
    }
    require(fx.conv_count() > 0, "weights file has no conv layers: " + path);

    const std::string dtype = manifest.value("dtype", "float64");
    require(dtype == "float64" || dtype == "float32",
            "unsupported weights dtype '" + dtype + "' in " + path);
    for (const auto& layer : fx.layers_) {
      if (layer.is_pool) continue;
      const auto& c = layer.conv;
      const std::size_t wn = std::size_t(c.out_channels) * c.in_channels * c.kernel * c.kernel;
      Eigen::MatrixXd w(c.out_channels, c.in_channels * c.kernel * c.kernel);
      Eigen::VectorXd b(c.out_channels);
      if (dtype == "float64") {
        std::vector<double> tmp(wn);
        in.read(reinterpret_cast<char*>(tmp.data()), std::streamsize(wn * 8));
        require(in.good(), "truncated weights blob in " + path);
        for (int r = 0; r < w.rows(); ++r)
          for (int col = 0; col < w.cols(); ++col)
            w(r, col) = tmp[std::size_t(r) * w.cols() + col];
        in.read(reinterpret_cast<char*>(b.data()), std::streamsize(c.out_channels * 8));
        require(in.good(), "truncated bias blob in " + path);
      } else {
        std::vector<float> tmp(wn);
        in.read(reinterpret_cast<char*>(tmp.data()), std::streamsize(wn * 4));
        require(in.good(), "truncated weights blob in " + path);
        for (int r = 0; r < w.rows(); ++r)
          for (int col = 0; col < w.cols(); ++col)
            w(r, col) = double(tmp[std::size_t(r) * w.cols() + col]);
        std::vector<float> tb(c.out_channels);
        in.read(reinterpret_cast<char*>(tb.data()), std::streamsize(c.out_channels * 4));
        require(in.good(), "truncated bias blob in " + path);
        for (int r = 0; r < c.out_channels; ++r) b(r) = double(tb[r]);
      }
      fx.weights_.push_back(std::move(w));
      fx.biases_.push_back(std::move(b));
    }
    in.peek();
    require(in.eof(), "trailing bytes after weights blob in " + path);

    if (manifest.contains("tap_layers"))
      fx.set_tap_layers(manifest["tap_layers"].get<std::vector<int>>());
    else
      fx.tap_layers_ = fx.default_tap_layers();
    return fx;
  }

  void save(const std::string& path) const {
    nlohmann::json manifest;
    manifest["format_version"] = 1;
    manifest["name"] = name_;
    manifest["dtype"] = "float64";
    manifest["pooling"] = pooling_ == PoolKind::Max ? "max" : "avg";
    manifest["preprocessing"] = {
        {"scale", prep_.scale},
        {"mean", {prep_.channel_mean[0], prep_.channel_mean[1], prep_.channel_mean[2]}}};
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& layer : layers_) {
      if (layer.is_pool) {
        layers.push_back({{"type", "pool"}});
      } else {
        layers.push_back({{"type", "conv"},
                          {"name", layer.conv.name},
                          {"in", layer.conv.in_channels},
                          {"out", layer.conv.out_channels},
                          {"kernel", layer.conv.kernel}});
      }
    }
    manifest["layers"] = layers;
    manifest["tap_layers"] = tap_layers_;
    const std::string manifest_text = manifest.dump();

    std::ofstream out(path, std::ios::binary);
    require(out.good(), "cannot create weights file: " + path);
    out.write("MSTXNET1", 8);
    const std::uint64_t manifest_len = manifest_text.size();
    out.write(reinterpret_cast<const char*>(&manifest_len), 8);
    out.write(manifest_text.data(), std::streamsize(manifest_text.size()));
    int conv_idx = 0;
    for (const auto& layer : layers_) {
      if (layer.is_pool) continue;
      const Eigen::MatrixXd& w = weights_[conv_idx];
      std::vector<double> tmp(std::size_t(w.rows()) * w.cols());
      for (int r = 0; r < w.rows(); ++r)
        for (int col = 0; col < w.cols(); ++col)
          tmp[std::size_t(r) * w.cols() + col] = w(r, col);
      out.write(reinterpret_cast<const char*>(tmp.data()), std::streamsize(tmp.size() * 8));
      out.write(reinterpret_cast<const char*>(biases_[conv_idx].data()),
                std::streamsize(biases_[conv_idx].size() * 8));
      ++conv_idx;
    }
    require(out.good(), "failed writing weights file: " + path);
  }

  // --- configuration ------------------------------------------------------

  int conv_count() const {
    int n = 0;
    for (const auto& layer : layers_)
      if (!layer.is_pool) ++n;
    return n;
  }

  // First conv ordinal at each spatial resolution level.
  std::vector<int> default_tap_layers() const {
    std::vector<int> taps;
    int ordinal = 0;
    bool fresh_level = true;
    for (const auto& layer : layers_) {
      if (layer.is_pool) {
        fresh_level = true;
        continue;
      }
      ++ordinal;
      if (fresh_level) {
        taps.push_back(ordinal);
        fresh_level = false;
      }
    }
    return taps;
  }

  void set_tap_layers(const std::vector<int>& taps) {
    require(!taps.empty(), "tap layer list is empty");
    const int n = conv_count();
    int prev = 0;
    for (int t : taps) {
      require(t >= 1 && t <= n, "tap layer " + std::to_string(t) +
                                    " out of range [1, " + std::to_string(n) + "]");
      require(t > prev, "tap layers must be strictly increasing");
      prev = t;
    }
    tap_layers_ = taps;
  }

  const std::vector<int>& tap_layers() const { return tap_layers_; }
  const PreprocessSpec& preprocessing() const { return prep_; }
  PoolKind pooling() const { return pooling_; }
  const std::string& name() const { return name_; }
  const std::vector<LayerDesc>& layers() const { return layers_; }

  // Channel count at each tapped layer.
  std::vector<int> tap_channels() const {
    std::vector<int> out;
    int ordinal = 0;
    std::size_t next = 0;
    for (const auto& layer : layers_) {
      if (layer.is_pool) continue;
      ++ordinal;
      if (next < tap_layers_.size() && tap_layers_[next] == ordinal) {
        out.push_back(layer.conv.out_channels);
        ++next;
      }
    }
    return out;
  }

  // --- forward / backward -------------------------------------------------

  FeatureActivations extract(const MultispectralImage& img3) const {
    ForwardContext ctx;
    return extract(img3, &ctx);
  }

  FeatureActivations extract(const MultispectralImage& img3, ForwardContext* ctx) const {
    require(img3.bands == 3,
            "feature extractor expects a 3-channel image, got " +
                std::to_string(img3.bands) + " bands");
    require(img3.height >= kMinNetworkInput && img3.width >= kMinNetworkInput,
            "input smaller than the network minimum " +
                std::to_string(kMinNetworkInput) + "x" +
                std::to_string(kMinNetworkInput));

    ctx->input_height = img3.height;
    ctx->input_width = img3.width;
    ctx->in_h.clear();
    ctx->in_w.clear();
    ctx->relu_mask.assign(layers_.size(), {});
    ctx->pool_argmax.assign(layers_.size(), {});

    // channels x positions, x' = x*scale - mean
    const int m0 = img3.pixel_count();
    Eigen::MatrixXd x(3, m0);
    for (int p = 0; p < m0; ++p)
      for (int c = 0; c < 3; ++c)
        x(c, p) = img3.data[std::size_t(p) * 3 + c] * prep_.scale - prep_.channel_mean[c];

    FeatureActivations acts;
    int h = img3.height, w = img3.width;
    int ordinal = 0;
    std::size_t next_tap = 0;
    const int deepest = tap_layers_.back();
    Eigen::MatrixXd col;
    int conv_idx = 0;
    for (std::size_t li = 0; li < layers_.size(); ++li) {
      ctx->in_h.push_back(h);
      ctx->in_w.push_back(w);
      const auto& layer = layers_[li];
      if (layer.is_pool) {
        const int h2 = h / 2, w2 = w / 2;
        require(h2 >= 1 && w2 >= 1, "image too small for network depth");
        Eigen::MatrixXd y(x.rows(), std::ptrdiff_t(h2) * w2);
        if (pooling_ == PoolKind::Max) {
          auto& argmax = ctx->pool_argmax[li];
          argmax.assign(std::size_t(x.rows()) * h2 * w2, 0);
          for (int c = 0; c < x.rows(); ++c)
            for (int yy = 0; yy < h2; ++yy)
              for (int xx = 0; xx < w2; ++xx) {
                int best = (2 * yy) * w + 2 * xx;
                double bv = x(c, best);
                const int cands[3] = {(2 * yy) * w + 2 * xx + 1,
                                      (2 * yy + 1) * w + 2 * xx,
                                      (2 * yy + 1) * w + 2 * xx + 1};
                for (int cand : cands)
                  if (x(c, cand) > bv) {
                    bv = x(c, cand);
                    best = cand;
                  }
                y(c, std::ptrdiff_t(yy) * w2 + xx) = bv;
                argmax[(std::size_t(c) * h2 + yy) * w2 + xx] = best;
              }
        } else {
          for (int c = 0; c < x.rows(); ++c)
            for (int yy = 0; yy < h2; ++yy)
              for (int xx = 0; xx < w2; ++xx)
                y(c, std::ptrdiff_t(yy) * w2 + xx) =
                    0.25 * (x(c, (2 * yy) * w + 2 * xx) + x(c, (2 * yy) * w + 2 * xx + 1) +
                            x(c, (2 * yy + 1) * w + 2 * xx) +
                            x(c, (2 * yy + 1) * w + 2 * xx + 1));
        }
        x = std::move(y);
        h = h2;
        w = w2;
        ctx->executed_layers = int(li) + 1;
        continue;
      }

      const auto& spec = layer.conv;
      detail::im2col(x, h, w, spec.kernel, col);
      Eigen::MatrixXd y = weights_[conv_idx] * col;
      y.colwise() += biases_[conv_idx];
      auto& mask = ctx->relu_mask[li];
      mask.assign(std::size_t(y.rows()) * y.cols(), 0);
      for (int r = 0; r < y.rows(); ++r)
        for (int c = 0; c < y.cols(); ++c) {
          if (y(r, c) > 0.0)
            mask[std::size_t(r) * y.cols() + c] = 1;
          else
            y(r, c) = 0.0;
        }
      x = std::move(y);
      ++ordinal;
      ++conv_idx;
      ctx->executed_layers = int(li) + 1;
      if (next_tap < tap_layers_.size() && tap_layers_[next_tap] == ordinal) {
        acts.layers.push_back(x);
        acts.heights.push_back(h);
        acts.widths.push_back(w);
        acts.names.push_back(spec.name);
        ++next_tap;
      }
      if (ordinal == deepest) break;
    }
    require(acts.size() == tap_layers_.size(), "internal: missed tap layers");
    return acts;
  }

  // Gradient of a scalar with respect to the input pixels, given its
  // gradients with respect to each tapped activation. Returns a 3-band
  // gradient image matching the extract() input.
  MultispectralImage backward(const ForwardContext& ctx,
                              const std::vector<Eigen::MatrixXd>& d_taps) const {
    require(d_taps.size() == tap_layers_.size(),
            "backward: need one gradient per tapped layer");
    int conv_idx = conv_count() - 1;
    {  // conv index of the deepest executed layer
      int count = 0;
      for (int li = 0; li < ctx.executed_layers; ++li)
        if (!layers_[li].is_pool) ++count;
      conv_idx = count - 1;
    }
    int ordinal = 0;
    for (int li = 0; li < ctx.executed_layers; ++li)
      if (!layers_[li].is_pool) ++ordinal;

    Eigen::MatrixXd grad;  // w.r.t. output of layer li
    int tap_index = int(tap_layers_.size()) - 1;
    for (int li = ctx.executed_layers - 1; li >= 0; --li) {
      const auto& layer = layers_[li];
      const int h = ctx.in_h[li], w = ctx.in_w[li];
      if (layer.is_pool) {
        const int h2 = h / 2, w2 = w / 2;
        Eigen::MatrixXd up = Eigen::MatrixXd::Zero(grad.rows(), std::ptrdiff_t(h) * w);
        if (pooling_ == PoolKind::Max) {
          const auto& argmax = ctx.pool_argmax[li];
          for (int c = 0; c < grad.rows(); ++c)
            for (int yy = 0; yy < h2; ++yy)
              for (int xx = 0; xx < w2; ++xx)
                up(c, argmax[(std::size_t(c) * h2 + yy) * w2 + xx]) +=
                    grad(c, std::ptrdiff_t(yy) * w2 + xx);
        } else {
          for (int c = 0; c < grad.rows(); ++c)
            for (int yy = 0; yy < h2; ++yy)
              for (int xx = 0; xx < w2; ++xx) {
                const double g = 0.25 * grad(c, std::ptrdiff_t(yy) * w2 + xx);
                up(c, (2 * yy) * w + 2 * xx) += g;
                up(c, (2 * yy) * w + 2 * xx + 1) += g;
                up(c, (2 * yy + 1) * w + 2 * xx) += g;
                up(c, (2 * yy + 1) * w + 2 * xx + 1) += g;
              }
        }
        grad = std::move(up);
        continue;
      }

      const auto& spec = layer.conv;
      if (grad.size() == 0)
        grad = Eigen::MatrixXd::Zero(spec.out_channels, std::ptrdiff_t(h) * w);
      if (ordinal >= 1 && tap_index >= 0 && tap_layers_[tap_index] == ordinal) {
        require(d_taps[tap_index].rows() == grad.rows() &&
                    d_taps[tap_index].cols() == grad.cols(),
                "backward: tap gradient shape mismatch at " + spec.name);
        grad += d_taps[tap_index];
        --tap_index;
      }
      const auto& mask = ctx.relu_mask[li];
      for (int r = 0; r < grad.rows(); ++r)
        for (int c = 0; c < grad.cols(); ++c)
          if (!mask[std::size_t(r) * grad.cols() + c]) grad(r, c) = 0.0;
      Eigen::MatrixXd dcol = weights_[conv_idx].transpose() * grad;
      Eigen::MatrixXd dx =
          Eigen::MatrixXd::Zero(spec.in_channels, std::ptrdiff_t(h) * w);
      // dcol rows follow the im2col layout, so scattering them back is the
      // exact adjoint of im2col.
      {
        const int k = spec.kernel;
        Eigen::Map<Eigen::MatrixXd> dcol_map(dcol.data(), dcol.rows(), dcol.cols());
        detail::col2im_add(dcol_map, h, w, k, dx);
      }
      grad = std::move(dx);
      --conv_idx;
      --ordinal;
    }

    MultispectralImage out = MultispectralImage::zeros(ctx.input_height, ctx.input_width, 3);
    const int m0 = out.pixel_count();
    for (int p = 0; p < m0; ++p)
      for (int c = 0; c < 3; ++c)
        out.data[std::size_t(p) * 3 + c] = grad(c, p) * prep_.scale;
    return out;
  }

 private:
  std::string name_;
  PoolKind pooling_ = PoolKind::Max;
  PreprocessSpec prep_;
  std::vector<LayerDesc> layers_;
  std::vector<Eigen::MatrixXd> weights_;  // per conv: out x (in*k*k)
  std::vector<Eigen::VectorXd> biases_;
  std::vector<int> tap_layers_;
};

}  // namespace mstex
