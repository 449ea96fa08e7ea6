#pragma once

#include <string>
#include <vector>

#include "soildnet/types.hpp"

namespace soildnet {

enum class LayerKind { Conv, BatchNorm, ReLU, ChannelReorder };
const char* layer_kind_name(LayerKind k);

struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  int out_channels = 0;  // Conv only
  int kernel = 5;        // Conv only
  int stride = 1;        // Conv only
  int groups = 1;        // Conv and ChannelReorder
  bool bias = true;      // Conv only

  static LayerSpec conv(int out_channels, int stride, int groups = 1, int kernel = 5,
                        bool bias = true);
  static LayerSpec batchnorm();
  static LayerSpec relu();
  static LayerSpec reorder(int groups);
};

// Layer kinds that appear in imported spec text but have no representation
// here (pooling, residual blocks). They are carried through parsing so the
// linter can report them; structural validation rejects any spec holding one.
struct ForeignLayer {
  std::string section;
  int index = 0;
  std::string kind;
};

// Dual-stream network description. The Y stem consumes the full-resolution
// luma plane, the UV stem the half-resolution chroma planes; the trunk runs
// on their channel concatenation and the head emits one logit per class per
// 64x64 tile.
struct NetworkSpec {
  std::string name;
  std::vector<LayerSpec> y_stem, uv_stem, trunk;
  LayerSpec head;
  std::vector<ForeignLayer> foreign;
};

struct LintFinding {
  std::string rule;
  std::string section;
  int layer_index = 0;
  std::string message;
  std::string severity;  // "warning" or "error"
};

struct LintReport {
  std::vector<LintFinding> findings;
  bool clean() const { return findings.empty(); }
  bool has_errors() const;
  std::string to_string() const;
};

// Canonical schema: JSON object with keys {head, name, trunk, uv_stem,
// y_stem}; layers are objects keyed by kind. Canonical form has sorted keys,
// no insignificant whitespace, and ends with a single LF.
std::string serialize_spec(const NetworkSpec& spec);
NetworkSpec parse_spec(const std::string& text);

// Structural validation: no foreign layers, non-empty sections, head is a
// 3-channel conv, stride products (y = 2x uv before the trunk, 64x total to
// the head), and group divisibility along both streams. Throws
// std::invalid_argument naming the offending layer.
void validate_spec(const NetworkSpec& spec);

// Per-layer placement of a valid spec at a given Y-plane resolution
// (divisible by 64). Spatial extents follow the same-padding convention
// (padding = kernel/2), so size changes come from stride alone.
struct LayerPlacement {
  std::string section;  // "y_stem", "uv_stem", "trunk", "head"
  int index = 0;
  LayerSpec layer;
  int in_channels = 0, out_channels = 0;
  int in_h = 0, in_w = 0;
  int out_h = 0, out_w = 0;
};
std::vector<LayerPlacement> walk_spec(const NetworkSpec& spec, int y_h, int y_w);

// Embedded-target rules: 5x5 kernels only, no pooling, no residual blocks,
// spatial changes realized by stride only. Report-only.
LintReport lint_embedded(const NetworkSpec& spec);

// The five documented reference configurations. scale "full" trains on
// 768x1280 Y input; scale "desk" shrinks channel widths for CPU training
// while keeping layer counts and group schedules.
NetworkSpec reference_spec(const std::string& name, const std::string& scale = "full");
const std::vector<std::string>& reference_names();

}  // namespace soildnet
