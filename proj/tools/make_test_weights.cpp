// Generates a random-weight network in the mstex weights format. Useful for
// smoke runs and CI where the real pre-trained weights are not available;
// see the README for converting actual VGG19 weights.

#include <cstdint>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "mstex/network.hpp"

int main(int argc, char** argv) {
  CLI::App app{"write a random-weight network in the mstex weights format"};
  std::string out = "test_net.mnet";
  std::string blocks = "8;16;32";
  std::string pooling = "max";
  std::uint64_t seed = 42;
  double scale = 1.0;
  std::vector<double> mean = {0.45, 0.45, 0.45};
  bool vgg19_shape = false;
  app.add_option("--out", out, "output weights file");
  app.add_option("--blocks", blocks,
                 "';'-separated resolution blocks, each a comma list of conv widths");
  app.add_flag("--vgg19-shape", vgg19_shape,
               "use the full VGG19 block structure (overrides --blocks)");
  app.add_option("--pooling", pooling, "max|avg");
  app.add_option("--seed", seed, "weight init seed");
  app.add_option("--scale", scale, "preprocessing input scale");
  app.add_option("--mean", mean, "preprocessing channel means (3 values)")
      ->expected(3);
  CLI11_PARSE(app, argc, argv);
  if (vgg19_shape)
    blocks = "64,64;128,128;256,256,256,256;512,512,512,512;512,512,512,512";

  try {
    std::vector<std::vector<int>> parsed_blocks;
    std::stringstream ss(blocks);
    std::string block;
    while (std::getline(ss, block, ';')) {
      std::vector<int> widths;
      std::stringstream bs(block);
      std::string w;
      while (std::getline(bs, w, ',')) widths.push_back(std::stoi(w));
      parsed_blocks.push_back(widths);
    }
    mstex::PreprocessSpec prep;
    prep.scale = scale;
    prep.channel_mean = {mean[0], mean[1], mean[2]};
    const auto fx = mstex::FeatureExtractor::make_random(
        parsed_blocks, pooling == "avg" ? mstex::PoolKind::Average : mstex::PoolKind::Max,
        prep, seed, "random_test_net");
    fx.save(out);
    std::cerr << "[mstex] wrote " << out << " (" << fx.conv_count() << " conv layers, taps";
    for (int t : fx.tap_layers()) std::cerr << " " << t;
    std::cerr << ")\n";
  } catch (const std::exception& e) {
    std::cerr << "[mstex] error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
