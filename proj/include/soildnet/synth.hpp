#pragma once

#include <string>
#include <utility>
#include <vector>

#include "soildnet/tensor.hpp"
#include "soildnet/types.hpp"
#include "soildnet/util.hpp"

namespace soildnet {

// Interleaved 8-bit RGB raster.
struct RgbImage {
  int width = 0, height = 0;
  std::vector<uint8_t> data;  // 3 bytes per pixel, row major

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), data(static_cast<size_t>(w) * h * 3, 0) {}
  uint8_t& at(int x, int y, int c) { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
  uint8_t at(int x, int y, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * 3 + c];
  }
};

// Per-pixel ground-truth class raster.
struct ClassMask {
  int width = 0, height = 0;
  std::vector<uint8_t> data;

  ClassMask() = default;
  ClassMask(int w, int h)
      : width(w), height(h), data(static_cast<size_t>(w) * h, uint8_t(SoilClass::Clean)) {}
  uint8_t& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
  uint8_t at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }
};

// Planar 4:2:0 frame: full-resolution luma, 2x2-subsampled chroma.
struct Yuv420Frame {
  int width = 0, height = 0;
  std::vector<uint8_t> y, u, v;

  Yuv420Frame() = default;
  Yuv420Frame(int w, int h);
  void validate() const;  // even dims, plane length relations
  std::vector<uint8_t> to_bytes() const;
  static Yuv420Frame from_bytes(int width, int height, const std::vector<uint8_t>& bytes);
};

// BT.601 full-range (Y = 0.299R + 0.587G + 0.114B, chroma offset 128); chroma
// is a 2x2 box average taken before rounding.
Yuv420Frame rgb_to_yuv420(const RgbImage& rgb);
RgbImage yuv420_to_rgb(const Yuv420Frame& frame);

struct SceneParams {
  double overlay_probability = 0.7;
  int min_blobs = 2, max_blobs = 7;
  double min_radius_frac = 0.15, max_radius_frac = 0.45;  // of min(width, height)
  double opaque_fraction = 0.5;  // Opaque vs Transparent per blob
};

struct Scene {
  RgbImage rgb;
  ClassMask mask;
};

// Deterministic per seed: a low-frequency gradient plus geometric shapes,
// optionally soiled with opaque (flat dark or ochre) and transparent
// (blur-and-desaturate blend) blobs recorded in the mask.
Scene generate_scene(uint64_t seed, int width, int height, const SceneParams& params = {});

// Majority class per tile; ties broken Opaque > Transparent > Clean.
TileLabelGrid label_tiles(const ClassMask& mask, int tile = kTileSize);

struct DatasetConfig {
  std::vector<std::pair<std::string, int>> camera_counts;  // e.g. {"FV", 500}
  double clean_bias = 0.3;  // exact fraction of all-clean samples
  uint64_t seed = 42;
  int width = 320, height = 192;
  double train_frac = 0.6, val_frac = 0.2;  // remainder is test
  SceneParams scene;

  static DatasetConfig with_total(int samples);  // round-robin over FV, RV, MVL, MVR
};

struct ManifestEntry {
  std::string id, frame_path, label_path, split, camera;
};

struct ClassTally {
  long long counts[kNumClasses] = {0, 0, 0};
};

struct DatasetManifest {
  int width = 0, height = 0;
  uint64_t seed = 0;
  double clean_bias = 0.0;
  std::vector<ManifestEntry> entries;
  std::vector<std::pair<std::string, ClassTally>> camera_tallies;  // tile counts
  std::vector<std::pair<std::string, ClassTally>> split_tallies;

  std::string to_text() const;  // canonical, byte-stable
  static DatasetManifest parse(const std::string& text);
};

// Writes <root>/frames/<id>.yuv, <root>/labels/<id>.txt and <root>/manifest.
DatasetManifest build_dataset(const DatasetConfig& cfg, const std::string& root);

DatasetManifest load_manifest(const std::string& root);
std::vector<ManifestEntry> split_entries(const DatasetManifest& manifest,
                                         const std::string& split);

TileLabelGrid read_label_grid(const std::string& path);
void write_label_grid(const std::string& path, const TileLabelGrid& grid);

// Copies one frame into row b of the (batch, 1, H, W) luma and
// (batch, 2, H/2, W/2) chroma tensors, scaled to [0, 1].
void fill_batch_slot(Tensor4& y, Tensor4& uv, int b, const Yuv420Frame& frame);

}  // namespace soildnet
