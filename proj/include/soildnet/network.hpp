#pragma once

#include <string>
#include <vector>

#include "soildnet/netspec.hpp"
#include "soildnet/tensor.hpp"

namespace soildnet {

struct NetLayer {
  LayerSpec spec;
  int in_channels = 0;
  ConvWeights conv;   // kind == Conv
  BatchNormState bn;  // kind == BatchNorm
};

// A spec bound to weights. Batch-norm running statistics are the only state
// mutated by training-mode forward passes.
struct Network {
  NetworkSpec spec;
  uint64_t seed = 0;
  std::vector<NetLayer> y_stem, uv_stem, trunk;
  NetLayer head;

  // Trainable arrays in the fixed traversal order (y_stem, uv_stem, trunk,
  // head; per layer: conv kernel, conv bias, bn gamma, bn beta). The
  // optimizer and the gradient structure rely on this order.
  std::vector<std::vector<double>*> trainable_arrays();
  uint64_t weight_checksum() const;
};

// He-normal init (fan-in = in_channels_per_group x k^2) for hidden convs from
// the seeded generator; the head conv uses a small fixed stddev so a fresh
// network starts near the uniform prediction. Biases start at zero.
Network build_network(const NetworkSpec& spec, uint64_t seed);

// Per-layer forward cache for backpropagation.
struct LayerTrace {
  Tensor4 input;
  std::vector<double> bn_mean, bn_inv_std;  // kind == BatchNorm, training mode
};
struct ForwardTrace {
  std::vector<LayerTrace> y_stem, uv_stem, trunk;
  LayerTrace head;
  int y_channels = 0;  // Y-stream channel count at the concat seam
  Tensor4 logits;
};

ForwardTrace forward_tiles_trace(Network& net, const Tensor4& y, const Tensor4& uv,
                                 bool training);
// Logits of shape (batch, 3, H/64, W/64).
Tensor4 forward_tiles(Network& net, const Tensor4& y, const Tensor4& uv, bool training);

struct LayerGrads {
  std::vector<double> kernel, bias;  // conv layers
  std::vector<double> gamma, beta;   // batch-norm layers
};
struct NetworkGrads {
  std::vector<LayerGrads> y_stem, uv_stem, trunk;
  LayerGrads head;
};

NetworkGrads backward_tiles(Network& net, const ForwardTrace& trace, const Tensor4& grad_logits);

// Gradient arrays in the same traversal order as Network::trainable_arrays.
std::vector<std::vector<double>*> grad_arrays(Network& net, NetworkGrads& grads);

void save_checkpoint(const Network& net, const std::string& path);
Network load_checkpoint(const std::string& path);

}  // namespace soildnet
