// Independent reference implementations used only by tests. Everything here
// is written in the most literal form possible so it cannot share bugs with
// the library's optimized loops.
#pragma once

#include <cmath>
#include <cstdlib>
#include <vector>

#include "soildnet/tensor.hpp"
#include "soildnet/util.hpp"

namespace oracle {

// Plain 7-loop full (groups=1) convolution, kernel layout [oc][ic][kh][kw].
inline soildnet::Tensor4 naive_full_conv(const soildnet::Tensor4& in,
                                         const std::vector<double>& kernel,
                                         const std::vector<double>& bias, int out_channels,
                                         int kh, int kw, int stride, int pad) {
  int OH = (in.height + 2 * pad - kh) / stride + 1;
  int OW = (in.width + 2 * pad - kw) / stride + 1;
  soildnet::Tensor4 out(in.batch, out_channels, OH, OW);
  for (int b = 0; b < in.batch; ++b)
    for (int oc = 0; oc < out_channels; ++oc)
      for (int oh = 0; oh < OH; ++oh)
        for (int ow = 0; ow < OW; ++ow) {
          double acc = bias.empty() ? 0.0 : bias[oc];
          for (int ic = 0; ic < in.channels; ++ic)
            for (int r = 0; r < kh; ++r)
              for (int c = 0; c < kw; ++c) {
                int ih = oh * stride - pad + r;
                int iw = ow * stride - pad + c;
                if (ih < 0 || ih >= in.height || iw < 0 || iw >= in.width) continue;
                double wv = kernel[((static_cast<size_t>(oc) * in.channels + ic) * kh + r) * kw + c];
                acc += wv * in.at(b, ic, ih, iw);
              }
          out.at(b, oc, oh, ow) = acc;
        }
  return out;
}

// Embed grouped weights into a full kernel that is zero outside the block
// diagonal.
inline std::vector<double> block_diagonal_kernel(const soildnet::ConvWeights& w) {
  int ic_full = w.in_channels();
  int ocpg = w.out_channels / w.groups;
  std::vector<double> full(
      static_cast<size_t>(w.out_channels) * ic_full * w.kernel_h * w.kernel_w, 0.0);
  for (int oc = 0; oc < w.out_channels; ++oc) {
    int g = oc / ocpg;
    for (int ic = 0; ic < w.in_channels_per_group; ++ic) {
      int cin = g * w.in_channels_per_group + ic;
      for (int r = 0; r < w.kernel_h; ++r)
        for (int c = 0; c < w.kernel_w; ++c)
          full[((static_cast<size_t>(oc) * ic_full + cin) * w.kernel_h + r) * w.kernel_w + c] =
              w.kernel[w.kindex(oc, ic, r, c)];
    }
  }
  return full;
}

inline double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::fabs(x));
  return m;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

// max |a - f| / max(linf(f), floor): L-inf error normalized by the gradient
// magnitude so the 1e-6 threshold is scale-free.
inline double rel_err(const std::vector<double>& analytic, const std::vector<double>& fd) {
  return max_abs_diff(analytic, fd) / std::max(max_abs(fd), 1e-12);
}

// Central finite difference of loss() with respect to one slot.
template <typename F>
double central_diff(F&& loss, double& slot, double h = 1e-3) {
  double keep = slot;
  slot = keep + h;
  double lp = loss();
  slot = keep - h;
  double lm = loss();
  slot = keep;
  return (lp - lm) / (2.0 * h);
}

template <typename F>
std::vector<double> fd_gradient(F&& loss, std::vector<double>& params, double h = 1e-3) {
  std::vector<double> g(params.size());
  for (size_t i = 0; i < params.size(); ++i) g[i] = central_diff(loss, params[i], h);
  return g;
}

inline void fill_random(soildnet::Tensor4& t, soildnet::Rng& rng, double lo = -1.0,
                        double hi = 1.0) {
  for (double& v : t.data) v = rng.uniform(lo, hi);
}

inline std::vector<double> random_vec(size_t n, soildnet::Rng& rng, double lo = -1.0,
                                      double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace oracle
