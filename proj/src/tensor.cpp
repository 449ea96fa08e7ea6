#include "soildnet/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "soildnet/util.hpp"

namespace soildnet {

const char* soil_class_name(SoilClass c) {
  switch (c) {
    case SoilClass::Clean: return "clean";
    case SoilClass::Opaque: return "opaque";
    case SoilClass::Transparent: return "transparent";
  }
  return "?";
}

Tensor4::Tensor4(int b, int c, int h, int w) : batch(b), channels(c), height(h), width(w) {
  if (b < 1 || c < 1 || h < 1 || w < 1)
    throw std::invalid_argument(strf("Tensor4: all shape components must be >= 1, got (%d,%d,%d,%d)", b, c, h, w));
  data.assign(static_cast<size_t>(b) * c * h * w, 0.0);
}

std::string Tensor4::shape_str() const {
  return strf("(%d,%d,%d,%d)", batch, channels, height, width);
}

void ConvWeights::validate() const {
  if (out_channels < 1 || in_channels_per_group < 1 || kernel_h < 1 || kernel_w < 1 || groups < 1)
    throw std::invalid_argument("ConvWeights: all dimensions must be >= 1");
  if (out_channels % groups != 0)
    throw std::invalid_argument(
        strf("ConvWeights: out_channels %d not divisible by groups %d", out_channels, groups));
  if (kernel.size() != kernel_size())
    throw std::invalid_argument(strf("ConvWeights: kernel length %zu, expected %zu", kernel.size(),
                                     kernel_size()));
  if (!bias.empty() && bias.size() != static_cast<size_t>(out_channels))
    throw std::invalid_argument(strf("ConvWeights: bias length %zu, expected %d", bias.size(),
                                     out_channels));
}

BatchNormState BatchNormState::init(int channels) {
  BatchNormState s;
  s.gamma.assign(channels, 1.0);
  s.beta.assign(channels, 0.0);
  s.running_mean.assign(channels, 0.0);
  s.running_var.assign(channels, 1.0);
  return s;
}

int conv_output_extent(int in, int kernel, int stride, int padding) {
  if (stride < 1) throw std::invalid_argument("conv: stride must be >= 1");
  if (padding < 0) throw std::invalid_argument("conv: padding must be >= 0");
  int out = (in + 2 * padding - kernel) / stride + 1;
  if (in + 2 * padding < kernel || out < 1)
    throw std::invalid_argument(
        strf("conv: kernel %d does not fit input extent %d with padding %d", kernel, in, padding));
  return out;
}

namespace {

// One (batch, out-channel) output plane; accumulation runs in a fixed order
// (ic, kh, kw, ow) so results are bit-deterministic.
void conv_plane(const double* group_in, int H, int W, int icpg, const double* w, int kh, int kw,
                int stride, int pad, double bias, double* out, int OH, int OW,
                std::vector<double>& acc) {
  for (int oh = 0; oh < OH; ++oh) {
    std::fill(acc.begin(), acc.begin() + OW, bias);
    for (int ic = 0; ic < icpg; ++ic) {
      const double* plane = group_in + static_cast<size_t>(ic) * H * W;
      const double* wbase = w + static_cast<size_t>(ic) * kh * kw;
      for (int r = 0; r < kh; ++r) {
        int ih = oh * stride - pad + r;
        if (ih < 0 || ih >= H) continue;
        const double* row = plane + static_cast<size_t>(ih) * W;
        const double* wrow = wbase + static_cast<size_t>(r) * kw;
        for (int c = 0; c < kw; ++c) {
          double wv = wrow[c];
          int base = c - pad;
          int lo = 0, hi = OW;
          while (lo < hi && lo * stride + base < 0) ++lo;
          while (hi > lo && (hi - 1) * stride + base >= W) --hi;
          const double* src = row + base + static_cast<ptrdiff_t>(lo) * stride;
          double* a = acc.data() + lo;
          int n = hi - lo;
          if (stride == 1) {
            for (int i = 0; i < n; ++i) a[i] += wv * src[i];
          } else if (stride == 2) {
            for (int i = 0; i < n; ++i) a[i] += wv * src[2 * i];
          } else {
            for (int i = 0; i < n; ++i) a[i] += wv * src[static_cast<ptrdiff_t>(stride) * i];
          }
        }
      }
    }
    std::copy(acc.begin(), acc.begin() + OW, out + static_cast<size_t>(oh) * OW);
  }
}

void check_conv_input(const Tensor4& input, const ConvWeights& w) {
  w.validate();
  if (input.channels != w.in_channels())
    throw std::invalid_argument(strf(
        "conv: input has %d channels, weights expect %d (groups %d x %d per group)",
        input.channels, w.in_channels(), w.groups, w.in_channels_per_group));
  if (input.channels % w.groups != 0)
    throw std::invalid_argument(strf("conv: groups %d does not divide input channels %d", w.groups,
                                     input.channels));
}

}  // namespace

Tensor4 conv2d_forward(const Tensor4& input, const ConvWeights& w, int stride, int padding) {
  check_conv_input(input, w);
  const int OH = conv_output_extent(input.height, w.kernel_h, stride, padding);
  const int OW = conv_output_extent(input.width, w.kernel_w, stride, padding);
  Tensor4 out(input.batch, w.out_channels, OH, OW);

  const int icpg = w.in_channels_per_group;
  const int ocpg = w.out_channels / w.groups;
  std::vector<double> acc(OW);
  for (int b = 0; b < input.batch; ++b) {
    const double* in_b = input.data.data() + input.index(b, 0, 0, 0);
    for (int oc = 0; oc < w.out_channels; ++oc) {
      int g = oc / ocpg;
      const double* group_in = in_b + static_cast<size_t>(g) * icpg * input.plane();
      const double* wk = w.kernel.data() + w.kindex(oc, 0, 0, 0);
      double bias = w.bias.empty() ? 0.0 : w.bias[oc];
      conv_plane(group_in, input.height, input.width, icpg, wk, w.kernel_h, w.kernel_w, stride,
                 padding, bias, out.data.data() + out.index(b, oc, 0, 0), OH, OW, acc);
    }
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor4& input, const ConvWeights& w, int stride, int padding,
                          const Tensor4& grad_output) {
  check_conv_input(input, w);
  const int OH = conv_output_extent(input.height, w.kernel_h, stride, padding);
  const int OW = conv_output_extent(input.width, w.kernel_w, stride, padding);
  if (grad_output.batch != input.batch || grad_output.channels != w.out_channels ||
      grad_output.height != OH || grad_output.width != OW)
    throw std::invalid_argument(strf("conv backward: grad_output shape %s, expected (%d,%d,%d,%d)",
                                     grad_output.shape_str().c_str(), input.batch, w.out_channels,
                                     OH, OW));

  const int H = input.height, W = input.width;
  const int icpg = w.in_channels_per_group;
  const int ocpg = w.out_channels / w.groups;

  ConvGrads grads;
  grads.grad_input = Tensor4(input.batch, input.channels, H, W);
  grads.grad_kernel.assign(w.kernel.size(), 0.0);
  if (!w.bias.empty()) grads.grad_bias.assign(w.bias.size(), 0.0);

  // valid output ranges per kernel tap
  auto out_range = [&](int tap, int pad, int in_extent, int out_extent) {
    int lo = 0, hi = out_extent;
    while (lo < hi && lo * stride - pad + tap < 0) ++lo;
    while (hi > lo && (hi - 1) * stride - pad + tap >= in_extent) --hi;
    return std::pair<int, int>(lo, hi);
  };

  // grad_bias
  if (!w.bias.empty()) {
    for (int oc = 0; oc < w.out_channels; ++oc) {
      double s = 0.0;
      for (int b = 0; b < input.batch; ++b) {
        const double* go = grad_output.data.data() + grad_output.index(b, oc, 0, 0);
        for (size_t i = 0; i < grad_output.plane(); ++i) s += go[i];
      }
      grads.grad_bias[oc] = s;
    }
  }

  // grad_kernel
  for (int oc = 0; oc < w.out_channels; ++oc) {
    int g = oc / ocpg;
    for (int ic = 0; ic < icpg; ++ic) {
      int cin = g * icpg + ic;
      for (int r = 0; r < w.kernel_h; ++r) {
        auto [ohlo, ohhi] = out_range(r, padding, H, OH);
        for (int c = 0; c < w.kernel_w; ++c) {
          auto [owlo, owhi] = out_range(c, padding, W, OW);
          double acc = 0.0;
          for (int b = 0; b < input.batch; ++b) {
            const double* go_b = grad_output.data.data() + grad_output.index(b, oc, 0, 0);
            const double* in_b = input.data.data() + input.index(b, cin, 0, 0);
            for (int oh = ohlo; oh < ohhi; ++oh) {
              const double* go_row = go_b + static_cast<size_t>(oh) * OW;
              const double* in_row = in_b + static_cast<size_t>(oh * stride - padding + r) * W +
                                     (c - padding);
              if (stride == 1) {
                for (int ow = owlo; ow < owhi; ++ow) acc += go_row[ow] * in_row[ow];
              } else {
                for (int ow = owlo; ow < owhi; ++ow)
                  acc += go_row[ow] * in_row[static_cast<ptrdiff_t>(ow) * stride];
              }
            }
          }
          grads.grad_kernel[w.kindex(oc, ic, r, c)] = acc;
        }
      }
    }
  }

  // grad_input: scatter grad_output through the kernel, fixed (oc, r, c) order
  for (int b = 0; b < input.batch; ++b) {
    for (int g = 0; g < w.groups; ++g) {
      for (int ic = 0; ic < icpg; ++ic) {
        double* gi = grads.grad_input.data.data() + grads.grad_input.index(b, g * icpg + ic, 0, 0);
        for (int o = 0; o < ocpg; ++o) {
          int oc = g * ocpg + o;
          const double* go_b = grad_output.data.data() + grad_output.index(b, oc, 0, 0);
          for (int r = 0; r < w.kernel_h; ++r) {
            auto [ohlo, ohhi] = out_range(r, padding, H, OH);
            for (int c = 0; c < w.kernel_w; ++c) {
              auto [owlo, owhi] = out_range(c, padding, W, OW);
              double wv = w.kernel[w.kindex(oc, ic, r, c)];
              for (int oh = ohlo; oh < ohhi; ++oh) {
                const double* go_row = go_b + static_cast<size_t>(oh) * OW;
                double* gi_row = gi + static_cast<size_t>(oh * stride - padding + r) * W +
                                 (c - padding);
                if (stride == 1) {
                  for (int ow = owlo; ow < owhi; ++ow) gi_row[ow] += wv * go_row[ow];
                } else {
                  for (int ow = owlo; ow < owhi; ++ow)
                    gi_row[static_cast<ptrdiff_t>(ow) * stride] += wv * go_row[ow];
                }
              }
            }
          }
        }
      }
    }
  }

  return grads;
}

std::vector<int> channel_reorder_permutation(int channels, int groups) {
  if (groups < 1 || channels < 1 || channels % groups != 0)
    throw std::invalid_argument(
        strf("channel_reorder: groups %d does not divide channels %d", groups, channels));
  int per = channels / groups;
  std::vector<int> src(channels);
  for (int i = 0; i < groups; ++i)
    for (int j = 0; j < per; ++j) src[static_cast<size_t>(j) * groups + i] = i * per + j;
  return src;
}

Tensor4 channel_reorder(const Tensor4& input, int groups) {
  std::vector<int> src = channel_reorder_permutation(input.channels, groups);
  Tensor4 out(input.batch, input.channels, input.height, input.width);
  const size_t plane = input.plane();
  for (int b = 0; b < input.batch; ++b)
    for (int c = 0; c < input.channels; ++c)
      std::copy_n(input.data.data() + input.index(b, src[c], 0, 0), plane,
                  out.data.data() + out.index(b, c, 0, 0));
  return out;
}

BatchNormResult batchnorm_forward(const Tensor4& input, const BatchNormState& state, bool training) {
  const int C = input.channels;
  if (state.channels() != C)
    throw std::invalid_argument(strf("batchnorm: state has %d channels, input has %d",
                                     state.channels(), C));
  BatchNormResult res;
  res.training = training;
  res.state = state;
  res.output = Tensor4(input.batch, C, input.height, input.width);
  const size_t plane = input.plane();
  const double n = static_cast<double>(input.batch) * plane;

  if (training) {
    res.batch_mean.assign(C, 0.0);
    res.batch_inv_std.assign(C, 0.0);
    for (int c = 0; c < C; ++c) {
      double sum = 0.0, sumsq = 0.0;
      for (int b = 0; b < input.batch; ++b) {
        const double* p = input.data.data() + input.index(b, c, 0, 0);
        for (size_t i = 0; i < plane; ++i) {
          sum += p[i];
          sumsq += p[i] * p[i];
        }
      }
      double mean = sum / n;
      double var = std::max(0.0, sumsq / n - mean * mean);
      double inv_std = 1.0 / std::sqrt(var + state.epsilon);
      res.batch_mean[c] = mean;
      res.batch_inv_std[c] = inv_std;
      res.state.running_mean[c] = state.momentum * state.running_mean[c] + (1.0 - state.momentum) * mean;
      res.state.running_var[c] = state.momentum * state.running_var[c] + (1.0 - state.momentum) * var;
      double g = state.gamma[c], bt = state.beta[c];
      for (int b = 0; b < input.batch; ++b) {
        const double* p = input.data.data() + input.index(b, c, 0, 0);
        double* q = res.output.data.data() + res.output.index(b, c, 0, 0);
        for (size_t i = 0; i < plane; ++i) q[i] = g * (p[i] - mean) * inv_std + bt;
      }
    }
  } else {
    for (int c = 0; c < C; ++c) {
      double inv_std = 1.0 / std::sqrt(state.running_var[c] + state.epsilon);
      double mean = state.running_mean[c];
      double g = state.gamma[c], bt = state.beta[c];
      for (int b = 0; b < input.batch; ++b) {
        const double* p = input.data.data() + input.index(b, c, 0, 0);
        double* q = res.output.data.data() + res.output.index(b, c, 0, 0);
        for (size_t i = 0; i < plane; ++i) q[i] = g * (p[i] - mean) * inv_std + bt;
      }
    }
  }
  return res;
}

BatchNormGrads batchnorm_backward(const Tensor4& input, const BatchNormResult& fwd,
                                  const Tensor4& grad_output) {
  if (!fwd.training)
    throw std::invalid_argument("batchnorm_backward: forward pass was not run in training mode");
  if (!input.same_shape(grad_output))
    throw std::invalid_argument(strf("batchnorm backward: grad_output shape %s vs input %s",
                                     grad_output.shape_str().c_str(), input.shape_str().c_str()));
  const int C = input.channels;
  const size_t plane = input.plane();
  const double n = static_cast<double>(input.batch) * plane;

  BatchNormGrads grads;
  grads.grad_input = Tensor4(input.batch, C, input.height, input.width);
  grads.grad_gamma.assign(C, 0.0);
  grads.grad_beta.assign(C, 0.0);

  for (int c = 0; c < C; ++c) {
    double mean = fwd.batch_mean[c], inv_std = fwd.batch_inv_std[c];
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int b = 0; b < input.batch; ++b) {
      const double* x = input.data.data() + input.index(b, c, 0, 0);
      const double* dy = grad_output.data.data() + grad_output.index(b, c, 0, 0);
      for (size_t i = 0; i < plane; ++i) {
        sum_dy += dy[i];
        sum_dy_xhat += dy[i] * (x[i] - mean) * inv_std;
      }
    }
    grads.grad_beta[c] = sum_dy;
    grads.grad_gamma[c] = sum_dy_xhat;
    double g = fwd.state.gamma[c];
    double k1 = sum_dy / n, k2 = sum_dy_xhat / n;
    for (int b = 0; b < input.batch; ++b) {
      const double* x = input.data.data() + input.index(b, c, 0, 0);
      const double* dy = grad_output.data.data() + grad_output.index(b, c, 0, 0);
      double* dx = grads.grad_input.data.data() + grads.grad_input.index(b, c, 0, 0);
      for (size_t i = 0; i < plane; ++i) {
        double xhat = (x[i] - mean) * inv_std;
        dx[i] = g * inv_std * (dy[i] - k1 - xhat * k2);
      }
    }
  }
  return grads;
}

Tensor4 relu_forward(const Tensor4& input) {
  Tensor4 out = input;
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor4 relu_backward(const Tensor4& input, const Tensor4& grad_output) {
  if (!input.same_shape(grad_output))
    throw std::invalid_argument("relu backward: shape mismatch");
  Tensor4 gi = grad_output;
  for (size_t i = 0; i < gi.data.size(); ++i)
    if (!(input.data[i] > 0.0)) gi.data[i] = 0.0;
  return gi;
}

SoftmaxCeResult softmax_ce_per_tile(const Tensor4& logits, const std::vector<TileLabelGrid>& labels) {
  if (logits.channels != kNumClasses)
    throw std::invalid_argument(strf("softmax_ce: logits must have %d channels, got %d", kNumClasses,
                                     logits.channels));
  if (labels.size() != static_cast<size_t>(logits.batch))
    throw std::invalid_argument(strf("softmax_ce: %zu label grids for batch %d", labels.size(),
                                     logits.batch));
  for (const auto& g : labels) {
    if (g.rows != logits.height || g.cols != logits.width)
      throw std::invalid_argument(strf("softmax_ce: label grid %dx%d vs logits %dx%d", g.rows,
                                       g.cols, logits.height, logits.width));
    for (SoilClass c : g.labels)
      if (static_cast<uint8_t>(c) >= kNumClasses)
        throw std::invalid_argument(strf("softmax_ce: label %d outside {0,1,2}",
                                         static_cast<int>(c)));
  }

  SoftmaxCeResult res;
  res.grad_logits = Tensor4(logits.batch, kNumClasses, logits.height, logits.width);
  const double m = static_cast<double>(logits.batch) * logits.height * logits.width;
  double loss = 0.0;
  for (int b = 0; b < logits.batch; ++b) {
    for (int r = 0; r < logits.height; ++r) {
      for (int c = 0; c < logits.width; ++c) {
        double z[kNumClasses];
        for (int k = 0; k < kNumClasses; ++k) z[k] = logits.at(b, k, r, c);
        double zmax = std::max({z[0], z[1], z[2]});
        double sum = 0.0;
        double e[kNumClasses];
        for (int k = 0; k < kNumClasses; ++k) {
          e[k] = std::exp(z[k] - zmax);
          sum += e[k];
        }
        int t = static_cast<int>(labels[b].at(r, c));
        loss += -(z[t] - zmax - std::log(sum));
        for (int k = 0; k < kNumClasses; ++k)
          res.grad_logits.at(b, k, r, c) = (e[k] / sum - (k == t ? 1.0 : 0.0)) / m;
      }
    }
  }
  res.loss = loss / m;
  return res;
}

Tensor4 concat_channels(const Tensor4& a, const Tensor4& b) {
  if (a.batch != b.batch || a.height != b.height || a.width != b.width)
    throw std::invalid_argument(strf("concat: shape mismatch %s vs %s", a.shape_str().c_str(),
                                     b.shape_str().c_str()));
  Tensor4 out(a.batch, a.channels + b.channels, a.height, a.width);
  const size_t plane = a.plane();
  for (int i = 0; i < a.batch; ++i) {
    std::copy_n(a.data.data() + a.index(i, 0, 0, 0), static_cast<size_t>(a.channels) * plane,
                out.data.data() + out.index(i, 0, 0, 0));
    std::copy_n(b.data.data() + b.index(i, 0, 0, 0), static_cast<size_t>(b.channels) * plane,
                out.data.data() + out.index(i, a.channels, 0, 0));
  }
  return out;
}

Tensor4 slice_channels(const Tensor4& t, int from, int count) {
  if (from < 0 || count < 1 || from + count > t.channels)
    throw std::invalid_argument(strf("slice: channels [%d,%d) out of range for %d", from,
                                     from + count, t.channels));
  Tensor4 out(t.batch, count, t.height, t.width);
  const size_t plane = t.plane();
  for (int b = 0; b < t.batch; ++b)
    std::copy_n(t.data.data() + t.index(b, from, 0, 0), static_cast<size_t>(count) * plane,
                out.data.data() + out.index(b, 0, 0, 0));
  return out;
}

uint64_t tensor_checksum(const Tensor4& t) {
  uint64_t h = fnv1a64(t.data.data(), t.data.size() * sizeof(double));
  int shape[4] = {t.batch, t.channels, t.height, t.width};
  return h ^ fnv1a64(shape, sizeof(shape));
}

}  // namespace soildnet
