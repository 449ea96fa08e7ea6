#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "soildnet/network.hpp"

namespace soildnet {

// Smallest e with 2^e >= max_abs / 32767; 0 for an all-zero tensor. The
// power-of-two constraint models shift-based fixed-point hardware.
int pow2_scale_exp(double max_abs);

// Per-tensor symmetric 16-bit fixed point: real value = q * 2^scale_exp.
struct FixedTensor {
  int batch = 0, channels = 0, height = 0, width = 0;
  int scale_exp = 0;
  std::vector<int16_t> q;

  double scale() const { return std::ldexp(1.0, scale_exp); }
  size_t index(int b, int c, int h, int w) const {
    return ((static_cast<size_t>(b) * channels + c) * height + h) * width + w;
  }
};

// Round half away from zero, clamp to int16. Throws on non-finite values.
FixedTensor quantize(const Tensor4& t);
// Exact: every int16 times a power of two is representable in double.
Tensor4 dequantize(const FixedTensor& f);

// One conv with its batch-norm folded in (w' = w*g/sqrt(var+eps),
// b' = (b-mu)*g/sqrt(var+eps)+beta, running statistics) plus the activation
// and reorder that follow it. This is the deployment view of the network:
// a plain chain of biased convolutions.
struct FoldedConv {
  std::string name;  // "y_stem[0]", "trunk[2]", "head"
  int in_channels = 0, out_channels = 0;
  int stride = 1, groups = 1, kernel = 5;
  std::vector<double> weights;  // [oc][ic_per_group][kh][kw]
  std::vector<double> bias;     // always out_channels entries after folding
  bool relu_after = false;
  int reorder_groups = 0;  // channel reorder applied after the activation
};

struct FoldedNetwork {
  std::vector<FoldedConv> y_stem, uv_stem, trunk;
  FoldedConv head;
};

// Only the conv [batchnorm] [relu] [reorder] arrangement folds; anything
// else throws. Uses inference-mode statistics, so folded_forward matches
// forward_tiles(net, ..., false) up to roundoff.
FoldedNetwork fold_network(const Network& net);
Tensor4 folded_forward(const FoldedNetwork& f, const Tensor4& y, const Tensor4& uv);

// Activation maxima in conv order (y_stem..., uv_stem..., trunk..., head),
// each taken after the conv's activation and reorder, i.e. what the next
// layer consumes.
struct CalibrationStats {
  double y_input_max = 0.0;
  double uv_input_max = 0.0;
  std::vector<double> output_max;
};
CalibrationStats calibrate(const FoldedNetwork& f, const std::string& root,
                           const std::string& split = "train", int max_frames = 128,
                           int batch_size = 16);

// Integer view of a folded conv. Weights are int16 at 2^w_exp, input
// activations int16 at 2^in_exp, bias pre-scaled to the accumulator scale
// 2^(in_exp + w_exp), output requantized to int16 at 2^out_exp.
struct QuantConv {
  std::string name;
  int in_channels = 0, out_channels = 0;
  int stride = 1, groups = 1, kernel = 5;
  bool relu_after = false;
  int reorder_groups = 0;
  int8_t w_exp = 0, in_exp = 0, out_exp = 0;
  std::vector<int16_t> weights;
  std::vector<int64_t> bias_q;
};

struct QuantizedNetwork {
  uint64_t seed = 0;
  std::string spec_json;  // canonical serialization of the source spec
  std::vector<QuantConv> y_stem, uv_stem, trunk;
  QuantConv head;
};

// Chains activation scales layer to layer; both stems requantize their last
// output to a shared exponent so the concatenation is a plain copy. Throws
// std::overflow_error naming the layer when the int64 accumulator bound or a
// bias at accumulator scale cannot be guaranteed safe.
QuantizedNetwork quantize_folded(const FoldedNetwork& folded, const CalibrationStats& stats);
QuantizedNetwork quantize_network(const Network& net, const CalibrationStats& stats);

struct QuantReport {
  struct LayerError {
    std::string name;
    double max_abs_err = 0.0;  // dequantized layer output vs the float path
  };
  std::vector<LayerError> per_layer;
  double logit_max_abs_err = 0.0;
  long long tiles_total = 0;
  long long tiles_agreeing = 0;

  double argmax_agreement() const {
    return tiles_total == 0 ? 1.0 : double(tiles_agreeing) / double(tiles_total);
  }
};

// Runs the integer path and the folded float path side by side. Logits are
// the dequantized head output. Accumulator overflow throws, never wraps.
std::pair<Tensor4, QuantReport> forward_tiles_quantized(const QuantizedNetwork& qnet,
                                                        const FoldedNetwork& folded,
                                                        const Tensor4& y, const Tensor4& uv);
// Self-contained variant: folds the network and calibrates on the given
// batch itself.
std::pair<Tensor4, QuantReport> forward_tiles_quantized(const Network& net, const Tensor4& y,
                                                        const Tensor4& uv);

// Aggregates forward_tiles_quantized over up to max_frames frames of a
// dataset split: per-layer maxima, logit maximum, pooled agreement.
QuantReport measure_quantized(const QuantizedNetwork& qnet, const FoldedNetwork& folded,
                              const std::string& root, const std::string& split, int max_frames,
                              int batch_size = 16);

std::string quant_report_csv(const QuantReport& report);

// Container: "SDQM" magic, version, layer count, seed, spec text, per-layer
// records (geometry, signed 8-bit scale exponents, little-endian 16-bit
// weights, 64-bit bias words), trailing fnv digest.
void save_quantized(const std::string& path, const QuantizedNetwork& qnet);
QuantizedNetwork load_quantized(const std::string& path);

}  // namespace soildnet
