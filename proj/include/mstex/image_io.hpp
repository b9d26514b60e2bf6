#pragma once

// Multiband image containers.
//
// Two interchangeable formats for multispectral stacks:
//   (1) multiband TIFF (contiguous samples, float64 on write; uint8/uint16/
//       float32/float64 on read). Band labels travel in the ImageDescription
//       tag as JSON: {"bands": [...]}.
//   (2) raw array stack: <stem>.bin next to a JSON sidecar
//       {"bands": [...labels...], "shape": [H,W,N], "dtype": "float64"}.
// Ingest normalization: uint16 digital numbers are divided by 10000
// (Sentinel-2 L1C/L2A reflectance scale), uint8 by 255; float data is taken
// as reflectance. Everything is clipped to [0,1] and checked finite.
//
// Visualizations and palettes are 8-bit PNG.

#include <png.h>
#include <tiffio.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "mstex/error.hpp"
#include "mstex/image.hpp"

namespace mstex {

namespace detail {

inline void finite_check(const MultispectralImage& img, const std::string& path) {
  const int bad = img.first_non_finite_band();
  if (bad >= 0) {
    throw Error("non-finite value in band " + std::to_string(bad) + " (" +
                img.band_labels[bad] + ") of " + path);
  }
}

inline std::vector<std::string> labels_from_json_text(const std::string& text,
                                                      int bands) {
  std::vector<std::string> labels;
  if (!text.empty()) {
    auto parsed = nlohmann::json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (parsed.is_object() && parsed.contains("bands") && parsed["bands"].is_array() &&
        int(parsed["bands"].size()) == bands) {
      for (const auto& v : parsed["bands"]) labels.push_back(v.get<std::string>());
      return labels;
    }
  }
  for (int b = 0; b < bands; ++b)
    labels.push_back(MultispectralImage::default_band_label(b));
  return labels;
}

struct TiffCloser {
  void operator()(TIFF* t) const {
    if (t) TIFFClose(t);
  }
};

}  // namespace detail

inline bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// ---------------------------------------------------------------------------
// Multiband TIFF

inline MultispectralImage load_tiff(const std::string& path) {
  std::unique_ptr<TIFF, detail::TiffCloser> tif(TIFFOpen(path.c_str(), "r"));
  require(tif != nullptr, "cannot open TIFF file: " + path);
  TIFF* t = tif.get();

  uint32_t w = 0, h = 0;
  uint16_t spp = 1, bps = 8, fmt = SAMPLEFORMAT_UINT, planar = PLANARCONFIG_CONTIG;
  TIFFGetField(t, TIFFTAG_IMAGEWIDTH, &w);
  TIFFGetField(t, TIFFTAG_IMAGELENGTH, &h);
  TIFFGetFieldDefaulted(t, TIFFTAG_SAMPLESPERPIXEL, &spp);
  TIFFGetFieldDefaulted(t, TIFFTAG_BITSPERSAMPLE, &bps);
  TIFFGetFieldDefaulted(t, TIFFTAG_SAMPLEFORMAT, &fmt);
  TIFFGetFieldDefaulted(t, TIFFTAG_PLANARCONFIG, &planar);
  require(planar == PLANARCONFIG_CONTIG, "only contiguous TIFF layout supported: " + path);
  require(w > 0 && h > 0 && spp >= 1, "degenerate TIFF dimensions: " + path);

  MultispectralImage img = MultispectralImage::zeros(int(h), int(w), int(spp));
  img.source_id = std::filesystem::path(path).stem().string();

  const tmsize_t line_bytes = TIFFScanlineSize(t);
  std::vector<unsigned char> buf(static_cast<std::size_t>(line_bytes));
  const std::size_t samples_per_row = std::size_t(w) * spp;
  for (uint32_t y = 0; y < h; ++y) {
    require(TIFFReadScanline(t, buf.data(), y) == 1,
            "failed reading scanline " + std::to_string(y) + " of " + path);
    double* dst = img.data.data() + std::size_t(y) * samples_per_row;
    if (fmt == SAMPLEFORMAT_IEEEFP && bps == 64) {
      const double* src = reinterpret_cast<const double*>(buf.data());
      for (std::size_t i = 0; i < samples_per_row; ++i) dst[i] = src[i];
    } else if (fmt == SAMPLEFORMAT_IEEEFP && bps == 32) {
      const float* src = reinterpret_cast<const float*>(buf.data());
      for (std::size_t i = 0; i < samples_per_row; ++i) dst[i] = double(src[i]);
    } else if (fmt != SAMPLEFORMAT_IEEEFP && bps == 16) {
      const uint16_t* src = reinterpret_cast<const uint16_t*>(buf.data());
      for (std::size_t i = 0; i < samples_per_row; ++i) dst[i] = double(src[i]) / 10000.0;
    } else if (fmt != SAMPLEFORMAT_IEEEFP && bps == 8) {
      const uint8_t* src = buf.data();
      for (std::size_t i = 0; i < samples_per_row; ++i) dst[i] = double(src[i]) / 255.0;
    } else {
      throw Error("unsupported TIFF sample type (" + std::to_string(bps) +
                  " bits, format " + std::to_string(fmt) + "): " + path);
    }
  }

  char* desc = nullptr;
  std::string desc_text;
  if (TIFFGetField(t, TIFFTAG_IMAGEDESCRIPTION, &desc) == 1 && desc) desc_text = desc;
  img.band_labels = detail::labels_from_json_text(desc_text, img.bands);

  detail::finite_check(img, path);
  img.clip01();
  return img;
}

inline void save_tiff(const MultispectralImage& img, const std::string& path) {
  MultispectralImage clipped = img;
  clipped.clip01();
  std::unique_ptr<TIFF, detail::TiffCloser> tif(TIFFOpen(path.c_str(), "w"));
  require(tif != nullptr, "cannot create TIFF file: " + path);
  TIFF* t = tif.get();

  TIFFSetField(t, TIFFTAG_IMAGEWIDTH, uint32_t(img.width));
  TIFFSetField(t, TIFFTAG_IMAGELENGTH, uint32_t(img.height));
  TIFFSetField(t, TIFFTAG_SAMPLESPERPIXEL, uint16_t(img.bands));
  TIFFSetField(t, TIFFTAG_BITSPERSAMPLE, uint16_t(64));
  TIFFSetField(t, TIFFTAG_SAMPLEFORMAT, SAMPLEFORMAT_IEEEFP);
  TIFFSetField(t, TIFFTAG_PLANARCONFIG, PLANARCONFIG_CONTIG);
  TIFFSetField(t, TIFFTAG_PHOTOMETRIC, PHOTOMETRIC_MINISBLACK);
  TIFFSetField(t, TIFFTAG_COMPRESSION, COMPRESSION_NONE);
  TIFFSetField(t, TIFFTAG_ROWSPERSTRIP, uint32_t(1));
  if (img.bands > 1) {
    // Declare the non-photometric bands so readers do not guess.
    std::vector<uint16_t> extra(std::size_t(img.bands) - 1, EXTRASAMPLE_UNSPECIFIED);
    TIFFSetField(t, TIFFTAG_EXTRASAMPLES, uint16_t(extra.size()), extra.data());
  }
  nlohmann::json desc;
  desc["bands"] = img.band_labels;
  const std::string desc_text = desc.dump();
  TIFFSetField(t, TIFFTAG_IMAGEDESCRIPTION, desc_text.c_str());

  const std::size_t samples_per_row = std::size_t(img.width) * img.bands;
  std::vector<double> row(samples_per_row);
  for (int y = 0; y < img.height; ++y) {
    std::memcpy(row.data(), clipped.data.data() + std::size_t(y) * samples_per_row,
                samples_per_row * sizeof(double));
    require(TIFFWriteScanline(t, row.data(), uint32_t(y)) == 1,
            "failed writing scanline " + std::to_string(y) + " of " + path);
  }
}

// ---------------------------------------------------------------------------
// Raw array stack with JSON sidecar

inline std::string raw_data_path_for(const std::string& sidecar_path) {
  std::filesystem::path p(sidecar_path);
  p.replace_extension(".bin");
  return p.string();
}

inline MultispectralImage load_raw_stack(const std::string& sidecar_path) {
  std::ifstream side(sidecar_path);
  require(side.good(), "cannot open sidecar: " + sidecar_path);
  nlohmann::json meta;
  try {
    side >> meta;
  } catch (const std::exception& e) {
    throw Error("invalid JSON sidecar " + sidecar_path + ": " + e.what());
  }
  require(meta.contains("shape") && meta["shape"].is_array() && meta["shape"].size() == 3,
          "sidecar missing shape [H,W,N]: " + sidecar_path);
  const int h = meta["shape"][0].get<int>();
  const int w = meta["shape"][1].get<int>();
  const int n = meta["shape"][2].get<int>();
  require(h > 0 && w > 0 && n > 0, "degenerate shape in sidecar: " + sidecar_path);
  const std::string dtype = meta.value("dtype", "float64");

  MultispectralImage img = MultispectralImage::zeros(h, w, n);
  img.source_id = std::filesystem::path(sidecar_path).stem().string();
  img.band_labels = detail::labels_from_json_text(meta.dump(), n);

  const std::string data_path = raw_data_path_for(sidecar_path);
  std::ifstream bin(data_path, std::ios::binary);
  require(bin.good(), "cannot open raw stack data: " + data_path);
  const std::size_t count = img.data.size();
  if (dtype == "float64") {
    bin.read(reinterpret_cast<char*>(img.data.data()),
             std::streamsize(count * sizeof(double)));
    require(std::size_t(bin.gcount()) == count * sizeof(double),
            "raw stack truncated: " + data_path);
  } else if (dtype == "float32") {
    std::vector<float> tmp(count);
    bin.read(reinterpret_cast<char*>(tmp.data()), std::streamsize(count * sizeof(float)));
    require(std::size_t(bin.gcount()) == count * sizeof(float),
            "raw stack truncated: " + data_path);
    for (std::size_t i = 0; i < count; ++i) img.data[i] = double(tmp[i]);
  } else if (dtype == "uint16") {
    std::vector<uint16_t> tmp(count);
    bin.read(reinterpret_cast<char*>(tmp.data()),
             std::streamsize(count * sizeof(uint16_t)));
    require(std::size_t(bin.gcount()) == count * sizeof(uint16_t),
            "raw stack truncated: " + data_path);
    for (std::size_t i = 0; i < count; ++i) img.data[i] = double(tmp[i]) / 10000.0;
  } else {
    throw Error("unsupported raw stack dtype '" + dtype + "': " + sidecar_path);
  }

  detail::finite_check(img, sidecar_path);
  img.clip01();
  return img;
}

inline void save_raw_stack(const MultispectralImage& img, const std::string& sidecar_path) {
  MultispectralImage clipped = img;
  clipped.clip01();
  nlohmann::json meta;
  meta["bands"] = img.band_labels;
  meta["shape"] = {img.height, img.width, img.bands};
  meta["dtype"] = "float64";
  std::ofstream side(sidecar_path);
  require(side.good(), "cannot create sidecar: " + sidecar_path);
  side << meta.dump(2) << "\n";

  const std::string data_path = raw_data_path_for(sidecar_path);
  std::ofstream bin(data_path, std::ios::binary);
  require(bin.good(), "cannot create raw stack data: " + data_path);
  bin.write(reinterpret_cast<const char*>(clipped.data.data()),
            std::streamsize(clipped.data.size() * sizeof(double)));
  require(bin.good(), "failed writing raw stack data: " + data_path);
}

// ---------------------------------------------------------------------------
// Front door

inline MultispectralImage load_multispectral(
    const std::string& path, std::optional<int> expected_bands = std::nullopt) {
  require(std::filesystem::exists(path), "no such file: " + path);
  MultispectralImage img;
  if (has_suffix(path, ".tif") || has_suffix(path, ".tiff"))
    img = load_tiff(path);
  else if (has_suffix(path, ".json"))
    img = load_raw_stack(path);
  else
    throw Error("unrecognized multispectral container (want .tif/.tiff or .json sidecar): " +
                path);
  if (expected_bands && img.bands != *expected_bands) {
    throw Error("band count mismatch in " + path + ": expected " +
                std::to_string(*expected_bands) + ", found " + std::to_string(img.bands));
  }
  return img;
}

inline void save_multispectral(const MultispectralImage& img, const std::string& path) {
  if (has_suffix(path, ".tif") || has_suffix(path, ".tiff"))
    save_tiff(img, path);
  else if (has_suffix(path, ".json"))
    save_raw_stack(img, path);
  else
    throw Error("unrecognized multispectral container (want .tif/.tiff or .json sidecar): " +
                path);
}

// ---------------------------------------------------------------------------
// 8-bit PNG (visualizations in, palettes out)

inline void save_png(const PaletteImage& img, const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  require(fp != nullptr, "cannot create PNG file: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw Error("libpng write failed: " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, png_uint_32(img.width), png_uint_32(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<unsigned char> row(std::size_t(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::min(1.0, std::max(0.0, img.at(y, x, c)));
        row[std::size_t(x) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

inline PaletteImage load_png(const std::string& path) {
  require(std::filesystem::exists(path), "no such file: " + path);
  FILE* fp = std::fopen(path.c_str(), "rb");
  require(fp != nullptr, "cannot open PNG file: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw Error("libpng read failed: " + path);
  }
  png_init_io(png, fp);
  png_read_png(png, info,
               PNG_TRANSFORM_STRIP_16 | PNG_TRANSFORM_STRIP_ALPHA |
                   PNG_TRANSFORM_EXPAND | PNG_TRANSFORM_GRAY_TO_RGB,
               nullptr);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  png_bytepp rows = png_get_rows(png, info);
  PaletteImage img = PaletteImage::zeros(int(h), int(w));
  for (png_uint_32 y = 0; y < h; ++y)
    for (png_uint_32 x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(int(y), int(x), c) = double(rows[y][x * 3 + c]) / 255.0;
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

}  // namespace mstex
