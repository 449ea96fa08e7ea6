#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace soildnet {

// Tile classes. The integer codes are part of on-disk label files and must
// stay stable.
enum class SoilClass : uint8_t { Clean = 0, Opaque = 1, Transparent = 2 };

constexpr int kNumClasses = 3;
constexpr int kTileSize = 64;

const char* soil_class_name(SoilClass c);

// Per-tile class assignment for one frame: rows x cols grid, row-major.
struct TileLabelGrid {
  int rows = 0;
  int cols = 0;
  std::vector<SoilClass> labels;

  TileLabelGrid() = default;
  TileLabelGrid(int rows_, int cols_)
      : rows(rows_), cols(cols_), labels(static_cast<size_t>(rows_) * cols_, SoilClass::Clean) {
    if (rows_ < 1 || cols_ < 1) throw std::invalid_argument("TileLabelGrid: empty grid");
  }

  SoilClass& at(int r, int c) { return labels[static_cast<size_t>(r) * cols + c]; }
  SoilClass at(int r, int c) const { return labels[static_cast<size_t>(r) * cols + c]; }
  size_t size() const { return labels.size(); }
};

}  // namespace soildnet
