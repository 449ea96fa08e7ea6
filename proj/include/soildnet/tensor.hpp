#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "soildnet/types.hpp"

namespace soildnet {

// Dense rank-4 array in (batch, channel, height, width) order, batch
// outermost, row-major. Values are double so gradient checks against
// central finite differences stay tight.
struct Tensor4 {
  int batch = 0, channels = 0, height = 0, width = 0;
  std::vector<double> data;

  Tensor4() = default;
  Tensor4(int b, int c, int h, int w);

  size_t size() const { return data.size(); }
  size_t plane() const { return static_cast<size_t>(height) * width; }

  size_t index(int b, int c, int h, int w) const {
    return ((static_cast<size_t>(b) * channels + c) * height + h) * width + w;
  }
  double& at(int b, int c, int h, int w) { return data[index(b, c, h, w)]; }
  double at(int b, int c, int h, int w) const { return data[index(b, c, h, w)]; }

  bool same_shape(const Tensor4& o) const {
    return batch == o.batch && channels == o.channels && height == o.height && width == o.width;
  }
  std::string shape_str() const;
};

// Grouped-convolution weights. Output channel block g (of size
// out_channels/groups) only sees the g-th block of in_channels_per_group
// input channels. Kernel layout: [out_channel][in_channel_in_group][kh][kw].
struct ConvWeights {
  int out_channels = 0;
  int in_channels_per_group = 0;
  int kernel_h = 5;
  int kernel_w = 5;
  int groups = 1;
  std::vector<double> kernel;
  std::vector<double> bias;  // empty means no bias

  void validate() const;
  int in_channels() const { return in_channels_per_group * groups; }
  size_t kernel_size() const {
    return static_cast<size_t>(out_channels) * in_channels_per_group * kernel_h * kernel_w;
  }
  size_t kindex(int oc, int ic, int kh, int kw) const {
    return ((static_cast<size_t>(oc) * in_channels_per_group + ic) * kernel_h + kh) * kernel_w + kw;
  }
};

struct BatchNormState {
  std::vector<double> gamma, beta;              // trainable
  std::vector<double> running_mean, running_var;  // non-trainable
  double epsilon = 1e-5;
  double momentum = 0.99;  // running = momentum*running + (1-momentum)*batch

  static BatchNormState init(int channels);
  int channels() const { return static_cast<int>(gamma.size()); }
};

int conv_output_extent(int in, int kernel, int stride, int padding);

Tensor4 conv2d_forward(const Tensor4& input, const ConvWeights& w, int stride, int padding);

struct ConvGrads {
  Tensor4 grad_input;
  std::vector<double> grad_kernel;
  std::vector<double> grad_bias;  // empty when the layer has no bias
};
ConvGrads conv2d_backward(const Tensor4& input, const ConvWeights& w, int stride, int padding,
                          const Tensor4& grad_output);

// Permutation taking channel i*(n/g)+j to position j*g+i: reshape the channel
// axis to (g, n/g), transpose, flatten. Values and spatial layout untouched.
Tensor4 channel_reorder(const Tensor4& input, int groups);
std::vector<int> channel_reorder_permutation(int channels, int groups);

struct BatchNormResult {
  Tensor4 output;
  BatchNormState state;  // updated running stats in training mode, copy otherwise
  // cache for backward (training mode)
  std::vector<double> batch_mean, batch_inv_std;
  bool training = false;
};
BatchNormResult batchnorm_forward(const Tensor4& input, const BatchNormState& state, bool training);

struct BatchNormGrads {
  Tensor4 grad_input;
  std::vector<double> grad_gamma, grad_beta;
};
BatchNormGrads batchnorm_backward(const Tensor4& input, const BatchNormResult& fwd,
                                  const Tensor4& grad_output);

Tensor4 relu_forward(const Tensor4& input);
// Gradient is masked by input > 0; the subgradient at exactly 0 is 0.
Tensor4 relu_backward(const Tensor4& input, const Tensor4& grad_output);

struct SoftmaxCeResult {
  double loss = 0.0;
  Tensor4 grad_logits;
};
// Softmax over the channel axis at every spatial cell; loss is the mean
// negative log-likelihood over batch x rows x cols. Stabilized by
// max-subtraction.
SoftmaxCeResult softmax_ce_per_tile(const Tensor4& logits, const std::vector<TileLabelGrid>& labels);

Tensor4 concat_channels(const Tensor4& a, const Tensor4& b);
Tensor4 slice_channels(const Tensor4& t, int from, int count);

uint64_t tensor_checksum(const Tensor4& t);

}  // namespace soildnet
