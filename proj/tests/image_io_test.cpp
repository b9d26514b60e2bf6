#include "mstex/image_io.hpp"

#include <gtest/gtest.h>

#include <fstream>

#include "test_support.hpp"

namespace mstex {
namespace {

using testing::random_image;
using testing::ScratchDir;

TEST(TiffRoundTrip, BitExactAfterClipping) {
  ScratchDir dir("tiff_rt");
  auto img = random_image(16, 16, 5, 11);
  img.band_labels = {"b1", "b2", "b3", "b4", "b5"};
  const std::string path = dir.path("img.tif");
  save_multispectral(img, path);
  const auto back = load_multispectral(path);
  EXPECT_EQ(back.height, 16);
  EXPECT_EQ(back.width, 16);
  EXPECT_EQ(back.bands, 5);
  EXPECT_EQ(back.band_labels, img.band_labels);
  EXPECT_EQ(back.data, img.data);  // already in [0,1]
}

TEST(TiffRoundTrip, ExportClipsOutOfRangeValues) {
  ScratchDir dir("tiff_clip");
  auto img = MultispectralImage::zeros(8, 8, 2);
  img.at(0, 0, 0) = 1.2;
  img.at(0, 0, 1) = -0.4;
  img.at(1, 1, 0) = 0.25;
  const std::string path = dir.path("img.tif");
  save_multispectral(img, path);
  const auto back = load_multispectral(path);
  EXPECT_DOUBLE_EQ(back.at(0, 0, 0), 1.0);
  EXPECT_DOUBLE_EQ(back.at(0, 0, 1), 0.0);
  EXPECT_DOUBLE_EQ(back.at(1, 1, 0), 0.25);
}

TEST(RawStackRoundTrip, BitExact) {
  ScratchDir dir("raw_rt");
  auto img = random_image(16, 16, 5, 12);
  img.band_labels = {"B02", "B03", "B04", "B08", "B11"};
  const std::string path = dir.path("img.json");
  save_multispectral(img, path);
  const auto back = load_multispectral(path);
  EXPECT_EQ(back.data, img.data);
  EXPECT_EQ(back.band_labels, img.band_labels);
}

TEST(ElevenBandExport, BandsAndLabelsSurviveReadBack) {
  ScratchDir dir("sentinel_labels");
  auto img = random_image(32, 32, 11, 15);
  img.band_labels = {"B01", "B02", "B03", "B04", "B05", "B06",
                     "B07", "B08", "B8A", "B11", "B12"};
  for (const char* name : {"img.tif", "img.json"}) {
    save_multispectral(img, dir.path(name));
    const auto back = load_multispectral(dir.path(name), 11);
    EXPECT_EQ(back.bands, 11);
    EXPECT_EQ(back.band_labels, img.band_labels);
    EXPECT_EQ(back.data, img.data);
  }
}

TEST(RawStack, Uint16DigitalNumbersAreScaled) {
  ScratchDir dir("raw_u16");
  // Hand-written sidecar + blob: two pixels, one band, DN 5000 and 12000.
  {
    std::ofstream side(dir.path("dn.json"));
    side << R"({"bands": ["B02"], "shape": [1, 2, 1], "dtype": "uint16"})";
  }
  {
    std::ofstream bin(dir.path("dn.bin"), std::ios::binary);
    const uint16_t values[2] = {5000, 12000};
    bin.write(reinterpret_cast<const char*>(values), sizeof(values));
  }
  const auto img = load_multispectral(dir.path("dn.json"));
  EXPECT_DOUBLE_EQ(img.at(0, 0, 0), 0.5);
  EXPECT_DOUBLE_EQ(img.at(0, 1, 0), 1.0);  // 1.2 clipped
}

TEST(LoadMultispectral, MissingFileIsAnError) {
  EXPECT_THROW(load_multispectral("/nonexistent/file.tif"), Error);
}

TEST(LoadMultispectral, BandCountMismatchIsAnError) {
  ScratchDir dir("band_mismatch");
  const auto img = random_image(8, 8, 4, 13);
  save_multispectral(img, dir.path("img.tif"));
  EXPECT_THROW(load_multispectral(dir.path("img.tif"), 11), Error);
  EXPECT_NO_THROW(load_multispectral(dir.path("img.tif"), 4));
}

TEST(LoadMultispectral, NonFiniteValueNamesTheBand) {
  ScratchDir dir("nan_band");
  {
    std::ofstream side(dir.path("bad.json"));
    side << R"({"bands": ["a", "b", "c"], "shape": [1, 1, 3], "dtype": "float64"})";
  }
  {
    std::ofstream bin(dir.path("bad.bin"), std::ios::binary);
    const double values[3] = {0.5, std::nan(""), 0.5};
    bin.write(reinterpret_cast<const char*>(values), sizeof(values));
  }
  try {
    load_multispectral(dir.path("bad.json"));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("band 1"), std::string::npos) << e.what();
  }
}

TEST(Png, WriteReadRoundTripWithinQuantization) {
  ScratchDir dir("png_rt");
  PaletteImage img = PaletteImage::zeros(10, 7);
  Rng rng(3);
  for (double& v : img.data) v = rng.uniform();
  save_png(img, dir.path("img.png"));
  const auto back = load_png(dir.path("img.png"));
  ASSERT_EQ(back.height, 10);
  ASSERT_EQ(back.width, 7);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    EXPECT_NEAR(back.data[i], img.data[i], 0.5 / 255.0 + 1e-9);
}

TEST(Png, SingleBandStackLoads) {
  ScratchDir dir("single_band");
  const auto img = random_image(64, 64, 1, 14);
  save_multispectral(img, dir.path("one.tif"));
  const auto back = load_multispectral(dir.path("one.tif"));
  EXPECT_EQ(back.bands, 1);
  EXPECT_EQ(back.data, img.data);
}

}  // namespace
}  // namespace mstex
