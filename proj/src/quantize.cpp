#include "soildnet/quantize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "soildnet/synth.hpp"
#include "soildnet/util.hpp"

namespace soildnet {

namespace {

// Largest accumulator magnitude we promise never to exceed: taps * 32767^2
// plus the pre-scaled bias must stay below this so the int64 sum and the
// requantization arithmetic cannot wrap.
constexpr int64_t kAccLimit = int64_t(1) << 62;

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::fabs(x));
  return m;
}

double max_abs(const Tensor4& t) { return max_abs(t.data); }

int16_t clamp16(long long v) {
  return static_cast<int16_t>(std::clamp<long long>(v, -32768, 32767));
}

void check_exp_range(int e, const char* what) {
  if (e < -128 || e > 127)
    throw std::overflow_error(strf("%s scale exponent %d out of the signed 8-bit range", what, e));
}

std::vector<const FoldedConv*> conv_order(const FoldedNetwork& f) {
  std::vector<const FoldedConv*> order;
  for (const FoldedConv& c : f.y_stem) order.push_back(&c);
  for (const FoldedConv& c : f.uv_stem) order.push_back(&c);
  for (const FoldedConv& c : f.trunk) order.push_back(&c);
  order.push_back(&f.head);
  return order;
}

std::vector<const QuantConv*> conv_order(const QuantizedNetwork& q) {
  std::vector<const QuantConv*> order;
  for (const QuantConv& c : q.y_stem) order.push_back(&c);
  for (const QuantConv& c : q.uv_stem) order.push_back(&c);
  for (const QuantConv& c : q.trunk) order.push_back(&c);
  order.push_back(&q.head);
  return order;
}

Tensor4 apply_folded(const FoldedConv& fc, const Tensor4& x) {
  ConvWeights w;
  w.out_channels = fc.out_channels;
  w.in_channels_per_group = fc.in_channels / fc.groups;
  w.kernel_h = w.kernel_w = fc.kernel;
  w.groups = fc.groups;
  w.kernel = fc.weights;
  w.bias = fc.bias;
  Tensor4 out = conv2d_forward(x, w, fc.stride, fc.kernel / 2);
  if (fc.relu_after) out = relu_forward(out);
  if (fc.reorder_groups > 0) out = channel_reorder(out, fc.reorder_groups);
  return out;
}

struct FoldedRun {
  Tensor4 logits;
  std::vector<Tensor4> outs;  // consumer-visible conv outputs in conv order
};

FoldedRun folded_run(const FoldedNetwork& f, const Tensor4& y, const Tensor4& uv, bool collect) {
  FoldedRun run;
  auto chain = [&](const std::vector<FoldedConv>& convs, Tensor4 x) {
    for (const FoldedConv& fc : convs) {
      x = apply_folded(fc, x);
      if (collect) run.outs.push_back(x);
    }
    return x;
  };
  Tensor4 ys = chain(f.y_stem, y);
  Tensor4 us = chain(f.uv_stem, uv);
  if (ys.height != us.height || ys.width != us.width)
    throw std::invalid_argument(strf("stem outputs disagree spatially: %s vs %s",
                                     ys.shape_str().c_str(), us.shape_str().c_str()));
  Tensor4 x = chain(f.trunk, concat_channels(ys, us));
  run.logits = apply_folded(f.head, x);
  if (collect) run.outs.push_back(run.logits);
  return run;
}

// Integer conv with one requantization at the output. The accumulator bound
// is checked when the QuantConv is built, so the int64 sum cannot wrap here;
// only the left-shift branch needs a runtime guard.
FixedTensor quant_conv_apply(const QuantConv& qc, const FixedTensor& in) {
  if (in.channels != qc.in_channels)
    throw std::invalid_argument(strf("%s expects %d input channels, got %d", qc.name.c_str(),
                                     qc.in_channels, in.channels));
  if (in.scale_exp != qc.in_exp)
    throw std::logic_error(strf("%s fed scale 2^%d, calibrated for 2^%d", qc.name.c_str(),
                                in.scale_exp, int(qc.in_exp)));
  const int pad = qc.kernel / 2;
  FixedTensor out;
  out.batch = in.batch;
  out.channels = qc.out_channels;
  out.height = conv_output_extent(in.height, qc.kernel, qc.stride, pad);
  out.width = conv_output_extent(in.width, qc.kernel, qc.stride, pad);
  out.scale_exp = qc.out_exp;
  out.q.assign(size_t(out.batch) * out.channels * out.height * out.width, 0);

  const int icpg = qc.in_channels / qc.groups;
  const int ocpg = qc.out_channels / qc.groups;
  const int sh = int(qc.out_exp) - int(qc.in_exp) - int(qc.w_exp);
  for (int b = 0; b < out.batch; ++b)
    for (int oc = 0; oc < out.channels; ++oc) {
      const int g = oc / ocpg;
      const int16_t* wbase = qc.weights.data() + size_t(oc) * icpg * qc.kernel * qc.kernel;
      for (int oy = 0; oy < out.height; ++oy)
        for (int ox = 0; ox < out.width; ++ox) {
          int64_t acc = qc.bias_q[oc];
          for (int ic = 0; ic < icpg; ++ic) {
            const int16_t* wrow = wbase + size_t(ic) * qc.kernel * qc.kernel;
            for (int ky = 0; ky < qc.kernel; ++ky) {
              const int iy = oy * qc.stride + ky - pad;
              if (iy < 0 || iy >= in.height) continue;
              for (int kx = 0; kx < qc.kernel; ++kx) {
                const int ix = ox * qc.stride + kx - pad;
                if (ix < 0 || ix >= in.width) continue;
                acc += int64_t(wrow[ky * qc.kernel + kx]) *
                       int64_t(in.q[in.index(b, g * icpg + ic, iy, ix)]);
              }
            }
          }
          int64_t r;
          if (sh >= 0) {
            // round half away from zero
            const int64_t half = sh > 0 ? (int64_t(1) << (sh - 1)) : 0;
            r = acc >= 0 ? (acc + half) >> sh : -((-acc + half) >> sh);
          } else {
            const int lsh = -sh;
            const int64_t lim =
                lsh < 63 ? (std::numeric_limits<int64_t>::max() >> lsh) : 0;
            if (acc > lim || acc < -lim)
              throw std::overflow_error(
                  strf("quantized accumulator overflow in %s", qc.name.c_str()));
            r = acc * (int64_t(1) << lsh);
          }
          if (qc.relu_after && r < 0) r = 0;
          out.q[out.index(b, oc, oy, ox)] = clamp16(r);
        }
    }
  if (qc.reorder_groups > 0) {
    std::vector<int> src = channel_reorder_permutation(out.channels, qc.reorder_groups);
    FixedTensor re = out;
    const size_t plane = size_t(out.height) * out.width;
    for (int b = 0; b < out.batch; ++b)
      for (int c = 0; c < out.channels; ++c)
        std::copy_n(out.q.data() + out.index(b, src[c], 0, 0), plane,
                    re.q.data() + re.index(b, c, 0, 0));
    return re;
  }
  return out;
}

FixedTensor quantize_to(const Tensor4& t, int scale_exp) {
  FixedTensor f;
  f.batch = t.batch;
  f.channels = t.channels;
  f.height = t.height;
  f.width = t.width;
  f.scale_exp = scale_exp;
  f.q.resize(t.data.size());
  const double inv = std::ldexp(1.0, -scale_exp);
  for (size_t i = 0; i < t.data.size(); ++i) {
    if (!std::isfinite(t.data[i])) throw std::invalid_argument("quantize: non-finite value");
    f.q[i] = clamp16(std::llround(t.data[i] * inv));
  }
  return f;
}

FixedTensor quant_concat(const FixedTensor& a, const FixedTensor& b) {
  if (a.batch != b.batch || a.height != b.height || a.width != b.width)
    throw std::invalid_argument("quantized concat: spatial shapes differ");
  if (a.scale_exp != b.scale_exp)
    throw std::logic_error("quantized concat: stem scales were not unified");
  FixedTensor out;
  out.batch = a.batch;
  out.channels = a.channels + b.channels;
  out.height = a.height;
  out.width = a.width;
  out.scale_exp = a.scale_exp;
  out.q.resize(size_t(out.batch) * out.channels * out.height * out.width);
  const size_t plane = size_t(a.height) * a.width;
  for (int n = 0; n < out.batch; ++n) {
    for (int c = 0; c < a.channels; ++c)
      std::copy_n(a.q.data() + a.index(n, c, 0, 0), plane,
                  out.q.data() + out.index(n, c, 0, 0));
    for (int c = 0; c < b.channels; ++c)
      std::copy_n(b.q.data() + b.index(n, c, 0, 0), plane,
                  out.q.data() + out.index(n, a.channels + c, 0, 0));
  }
  return out;
}

QuantConv make_qconv(const FoldedConv& fc, int in_e, int out_e) {
  QuantConv qc;
  qc.name = fc.name;
  qc.in_channels = fc.in_channels;
  qc.out_channels = fc.out_channels;
  qc.stride = fc.stride;
  qc.groups = fc.groups;
  qc.kernel = fc.kernel;
  qc.relu_after = fc.relu_after;
  qc.reorder_groups = fc.reorder_groups;

  const int w_e = pow2_scale_exp(max_abs(fc.weights));
  check_exp_range(w_e, "weight");
  check_exp_range(in_e, "input");
  check_exp_range(out_e, "output");
  qc.w_exp = int8_t(w_e);
  qc.in_exp = int8_t(in_e);
  qc.out_exp = int8_t(out_e);

  qc.weights.resize(fc.weights.size());
  const double winv = std::ldexp(1.0, -w_e);
  for (size_t i = 0; i < fc.weights.size(); ++i)
    qc.weights[i] = clamp16(std::llround(fc.weights[i] * winv));

  qc.bias_q.resize(fc.bias.size());
  const double binv = std::ldexp(1.0, -(in_e + w_e));
  int64_t bias_peak = 0;
  for (size_t i = 0; i < fc.bias.size(); ++i) {
    const double scaled = fc.bias[i] * binv;
    if (!std::isfinite(scaled) || std::fabs(scaled) > double(kAccLimit) / 4)
      throw std::overflow_error(
          strf("bias exceeds the accumulator range in %s", fc.name.c_str()));
    qc.bias_q[i] = std::llround(scaled);
    bias_peak = std::max(bias_peak, std::abs(qc.bias_q[i]));
  }

  const int64_t taps = int64_t(fc.in_channels / fc.groups) * fc.kernel * fc.kernel;
  if (taps * 32767 * 32767 + bias_peak > kAccLimit)
    throw std::overflow_error(
        strf("accumulator bound cannot be guaranteed in %s", fc.name.c_str()));
  return qc;
}

void fold_section(const std::vector<NetLayer>& layers, const char* section,
                  std::vector<FoldedConv>* out) {
  size_t i = 0;
  int conv_idx = 0;
  while (i < layers.size()) {
    const NetLayer& l = layers[i];
    if (l.spec.kind != LayerKind::Conv)
      throw std::invalid_argument(strf("fold: %s[%zu] is %s where a conv must start the block",
                                       section, i, layer_kind_name(l.spec.kind)));
    FoldedConv fc;
    fc.name = strf("%s[%d]", section, conv_idx++);
    fc.in_channels = l.in_channels;
    fc.out_channels = l.conv.out_channels;
    fc.stride = l.spec.stride;
    fc.groups = l.conv.groups;
    fc.kernel = l.conv.kernel_h;
    fc.weights = l.conv.kernel;
    fc.bias = l.conv.bias.empty() ? std::vector<double>(size_t(fc.out_channels), 0.0)
                                  : l.conv.bias;
    ++i;
    if (i < layers.size() && layers[i].spec.kind == LayerKind::BatchNorm) {
      const BatchNormState& bn = layers[i].bn;
      const size_t taps = size_t(l.conv.in_channels_per_group) * fc.kernel * fc.kernel;
      for (int oc = 0; oc < fc.out_channels; ++oc) {
        const double s = bn.gamma[oc] / std::sqrt(bn.running_var[oc] + bn.epsilon);
        for (size_t t = 0; t < taps; ++t) fc.weights[size_t(oc) * taps + t] *= s;
        fc.bias[oc] = (fc.bias[oc] - bn.running_mean[oc]) * s + bn.beta[oc];
      }
      ++i;
    }
    if (i < layers.size() && layers[i].spec.kind == LayerKind::ReLU) {
      fc.relu_after = true;
      ++i;
    }
    if (i < layers.size() && layers[i].spec.kind == LayerKind::ChannelReorder) {
      fc.reorder_groups = layers[i].spec.groups;
      ++i;
    }
    out->push_back(std::move(fc));
  }
}

// Shared frame loader for calibration and measurement.
struct SplitFrames {
  int width = 0, height = 0;
  std::vector<std::string> frame_paths;
};

SplitFrames split_frames(const std::string& root, const std::string& split, int max_frames) {
  if (max_frames < 1) throw std::invalid_argument("need at least one frame");
  DatasetManifest m = load_manifest(root);
  std::vector<ManifestEntry> entries = split_entries(m, split);
  if (entries.empty())
    throw std::invalid_argument(strf("split '%s' has no frames", split.c_str()));
  if (int(entries.size()) > max_frames) entries.resize(size_t(max_frames));
  SplitFrames sf;
  sf.width = m.width;
  sf.height = m.height;
  for (const ManifestEntry& e : entries) sf.frame_paths.push_back(root + "/" + e.frame_path);
  return sf;
}

void load_batch(const SplitFrames& sf, size_t from, size_t count, Tensor4* y, Tensor4* uv) {
  *y = Tensor4(int(count), 1, sf.height, sf.width);
  *uv = Tensor4(int(count), 2, sf.height / 2, sf.width / 2);
  for (size_t i = 0; i < count; ++i) {
    Yuv420Frame frame =
        Yuv420Frame::from_bytes(sf.width, sf.height, read_file_bytes(sf.frame_paths[from + i]));
    fill_batch_slot(*y, *uv, int(i), frame);
  }
}

}  // namespace

int pow2_scale_exp(double max_abs) {
  if (!(max_abs >= 0.0) || !std::isfinite(max_abs))
    throw std::invalid_argument("scale needs a finite non-negative maximum");
  if (max_abs == 0.0) return 0;
  int k = 0;
  const double f = std::frexp(max_abs / 32767.0, &k);  // value = f * 2^k, f in [0.5, 1)
  return f == 0.5 ? k - 1 : k;
}

FixedTensor quantize(const Tensor4& t) {
  double m = 0.0;
  for (double x : t.data) {
    if (!std::isfinite(x)) throw std::invalid_argument("quantize: non-finite value");
    m = std::max(m, std::fabs(x));
  }
  return quantize_to(t, pow2_scale_exp(m));
}

Tensor4 dequantize(const FixedTensor& f) {
  Tensor4 t(f.batch, f.channels, f.height, f.width);
  const double s = f.scale();
  for (size_t i = 0; i < f.q.size(); ++i) t.data[i] = f.q[i] * s;
  return t;
}

FoldedNetwork fold_network(const Network& net) {
  FoldedNetwork f;
  fold_section(net.y_stem, "y_stem", &f.y_stem);
  fold_section(net.uv_stem, "uv_stem", &f.uv_stem);
  fold_section(net.trunk, "trunk", &f.trunk);
  std::vector<FoldedConv> head;
  fold_section({net.head}, "head", &head);
  f.head = std::move(head.front());
  f.head.name = "head";
  return f;
}

Tensor4 folded_forward(const FoldedNetwork& f, const Tensor4& y, const Tensor4& uv) {
  return folded_run(f, y, uv, false).logits;
}

CalibrationStats calibrate(const FoldedNetwork& f, const std::string& root,
                           const std::string& split, int max_frames, int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  SplitFrames sf = split_frames(root, split, max_frames);
  CalibrationStats stats;
  stats.output_max.assign(conv_order(f).size(), 0.0);
  for (size_t from = 0; from < sf.frame_paths.size(); from += size_t(batch_size)) {
    const size_t count = std::min(size_t(batch_size), sf.frame_paths.size() - from);
    Tensor4 y, uv;
    load_batch(sf, from, count, &y, &uv);
    stats.y_input_max = std::max(stats.y_input_max, max_abs(y));
    stats.uv_input_max = std::max(stats.uv_input_max, max_abs(uv));
    FoldedRun run = folded_run(f, y, uv, true);
    for (size_t i = 0; i < run.outs.size(); ++i)
      stats.output_max[i] = std::max(stats.output_max[i], max_abs(run.outs[i]));
  }
  return stats;
}

QuantizedNetwork quantize_folded(const FoldedNetwork& folded, const CalibrationStats& stats) {
  if (folded.y_stem.empty() || folded.uv_stem.empty())
    throw std::invalid_argument("quantization needs both stems");
  std::vector<const FoldedConv*> order = conv_order(folded);
  if (stats.output_max.size() != order.size())
    throw std::invalid_argument(strf("calibration covers %zu conv outputs, network has %zu",
                                     stats.output_max.size(), order.size()));
  for (double m : stats.output_max)
    if (!std::isfinite(m) || m < 0.0)
      throw std::invalid_argument("calibration maxima must be finite and non-negative");

  std::vector<int> out_exp(order.size());
  for (size_t i = 0; i < order.size(); ++i) out_exp[i] = pow2_scale_exp(stats.output_max[i]);

  // both stems land on one exponent so the concat is a copy
  const size_t ny = folded.y_stem.size(), nu = folded.uv_stem.size();
  const int concat_exp = std::max(out_exp[ny - 1], out_exp[ny + nu - 1]);
  out_exp[ny - 1] = concat_exp;
  out_exp[ny + nu - 1] = concat_exp;

  QuantizedNetwork q;
  int prev = pow2_scale_exp(stats.y_input_max);
  for (size_t i = 0; i < ny; ++i) {
    q.y_stem.push_back(make_qconv(folded.y_stem[i], prev, out_exp[i]));
    prev = out_exp[i];
  }
  prev = pow2_scale_exp(stats.uv_input_max);
  for (size_t i = 0; i < nu; ++i) {
    q.uv_stem.push_back(make_qconv(folded.uv_stem[i], prev, out_exp[ny + i]));
    prev = out_exp[ny + i];
  }
  prev = concat_exp;
  for (size_t i = 0; i < folded.trunk.size(); ++i) {
    q.trunk.push_back(make_qconv(folded.trunk[i], prev, out_exp[ny + nu + i]));
    prev = out_exp[ny + nu + i];
  }
  q.head = make_qconv(folded.head, prev, out_exp.back());
  return q;
}

QuantizedNetwork quantize_network(const Network& net, const CalibrationStats& stats) {
  QuantizedNetwork q = quantize_folded(fold_network(net), stats);
  q.seed = net.seed;
  q.spec_json = serialize_spec(net.spec);
  return q;
}

std::pair<Tensor4, QuantReport> forward_tiles_quantized(const QuantizedNetwork& qnet,
                                                        const FoldedNetwork& folded,
                                                        const Tensor4& y, const Tensor4& uv) {
  FoldedRun ref = folded_run(folded, y, uv, true);
  std::vector<const QuantConv*> order = conv_order(qnet);
  if (order.size() != ref.outs.size())
    throw std::invalid_argument("quantized and folded networks have different conv counts");

  QuantReport report;
  size_t conv_i = 0;
  auto record = [&](const FixedTensor& qt) {
    const Tensor4& ft = ref.outs[conv_i];
    Tensor4 dq = dequantize(qt);
    if (!dq.same_shape(ft))
      throw std::invalid_argument(strf("%s shape diverged: %s vs %s",
                                       order[conv_i]->name.c_str(), dq.shape_str().c_str(),
                                       ft.shape_str().c_str()));
    double err = 0.0;
    for (size_t k = 0; k < dq.data.size(); ++k)
      err = std::max(err, std::fabs(dq.data[k] - ft.data[k]));
    report.per_layer.push_back({order[conv_i]->name, err});
    ++conv_i;
  };
  auto chain = [&](const std::vector<QuantConv>& convs, FixedTensor x) {
    for (const QuantConv& qc : convs) {
      x = quant_conv_apply(qc, x);
      record(x);
    }
    return x;
  };

  FixedTensor ys = chain(qnet.y_stem, quantize_to(y, qnet.y_stem.front().in_exp));
  FixedTensor us = chain(qnet.uv_stem, quantize_to(uv, qnet.uv_stem.front().in_exp));
  FixedTensor x = quant_concat(ys, us);
  for (const QuantConv& qc : qnet.trunk) {
    x = quant_conv_apply(qc, x);
    record(x);
  }
  x = quant_conv_apply(qnet.head, x);
  record(x);

  Tensor4 logits = dequantize(x);
  report.logit_max_abs_err = report.per_layer.back().max_abs_err;
  for (int b = 0; b < logits.batch; ++b)
    for (int h = 0; h < logits.height; ++h)
      for (int w = 0; w < logits.width; ++w) {
        int fa = 0, qa = 0;
        for (int c = 1; c < logits.channels; ++c) {
          if (ref.logits.at(b, c, h, w) > ref.logits.at(b, fa, h, w)) fa = c;
          if (logits.at(b, c, h, w) > logits.at(b, qa, h, w)) qa = c;
        }
        ++report.tiles_total;
        if (fa == qa) ++report.tiles_agreeing;
      }
  return {std::move(logits), std::move(report)};
}

std::pair<Tensor4, QuantReport> forward_tiles_quantized(const Network& net, const Tensor4& y,
                                                        const Tensor4& uv) {
  FoldedNetwork folded = fold_network(net);
  FoldedRun run = folded_run(folded, y, uv, true);
  CalibrationStats stats;
  stats.y_input_max = max_abs(y);
  stats.uv_input_max = max_abs(uv);
  for (const Tensor4& t : run.outs) stats.output_max.push_back(max_abs(t));
  QuantizedNetwork qnet = quantize_folded(folded, stats);
  qnet.seed = net.seed;
  qnet.spec_json = serialize_spec(net.spec);
  return forward_tiles_quantized(qnet, folded, y, uv);
}

QuantReport measure_quantized(const QuantizedNetwork& qnet, const FoldedNetwork& folded,
                              const std::string& root, const std::string& split, int max_frames,
                              int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  SplitFrames sf = split_frames(root, split, max_frames);
  QuantReport total;
  for (size_t from = 0; from < sf.frame_paths.size(); from += size_t(batch_size)) {
    const size_t count = std::min(size_t(batch_size), sf.frame_paths.size() - from);
    Tensor4 y, uv;
    load_batch(sf, from, count, &y, &uv);
    QuantReport r = forward_tiles_quantized(qnet, folded, y, uv).second;
    if (total.per_layer.empty()) {
      total.per_layer = r.per_layer;
    } else {
      for (size_t i = 0; i < r.per_layer.size(); ++i)
        total.per_layer[i].max_abs_err =
            std::max(total.per_layer[i].max_abs_err, r.per_layer[i].max_abs_err);
    }
    total.logit_max_abs_err = std::max(total.logit_max_abs_err, r.logit_max_abs_err);
    total.tiles_total += r.tiles_total;
    total.tiles_agreeing += r.tiles_agreeing;
  }
  return total;
}

std::string quant_report_csv(const QuantReport& report) {
  std::string out = strf("# tile_argmax_agreement=%.6f\n", report.argmax_agreement());
  out += "layer,max_abs_err\n";
  for (const QuantReport::LayerError& e : report.per_layer)
    out += strf("%s,%.9e\n", e.name.c_str(), e.max_abs_err);
  out += strf("logits,%.9e\n", report.logit_max_abs_err);
  return out;
}

void save_quantized(const std::string& path, const QuantizedNetwork& qnet) {
  ByteWriter w;
  w.bytes("SDQM", 4);
  w.u16(1);  // format version
  std::vector<const QuantConv*> order = conv_order(qnet);
  w.u16(uint16_t(order.size()));
  w.u16(uint16_t(qnet.y_stem.size()));
  w.u16(uint16_t(qnet.uv_stem.size()));
  w.u16(uint16_t(qnet.trunk.size()));
  w.u64(qnet.seed);
  w.str(qnet.spec_json);
  for (const QuantConv* qc : order) {
    w.str(qc->name);
    w.u32(uint32_t(qc->in_channels));
    w.u32(uint32_t(qc->out_channels));
    w.u32(uint32_t(qc->stride));
    w.u32(uint32_t(qc->groups));
    w.u32(uint32_t(qc->kernel));
    w.u8(qc->relu_after ? 1 : 0);
    w.u32(uint32_t(qc->reorder_groups));
    w.i8(qc->w_exp);
    w.i8(qc->in_exp);
    w.i8(qc->out_exp);
    w.u32(uint32_t(qc->weights.size()));
    for (int16_t v : qc->weights) w.i16(v);
    w.u32(uint32_t(qc->bias_q.size()));
    for (int64_t v : qc->bias_q) w.i64(v);
  }
  ByteWriter sealed;
  sealed.bytes(w.data().data(), w.data().size());
  sealed.u64(fnv1a64(w.data().data(), w.data().size()));
  write_file_bytes(path, sealed.data().data(), sealed.data().size());
}

QuantizedNetwork load_quantized(const std::string& path) {
  std::vector<uint8_t> bytes = read_file_bytes(path);
  if (bytes.size() < 12) throw std::runtime_error("quantized model: file too short");
  const size_t body = bytes.size() - 8;
  ByteReader tail(bytes.data() + body, 8);
  if (tail.u64() != fnv1a64(bytes.data(), body))
    throw std::runtime_error("quantized model: digest mismatch");

  ByteReader r(bytes.data(), body);
  char magic[4];
  r.bytes(magic, 4);
  if (std::string(magic, 4) != "SDQM") throw std::runtime_error("quantized model: bad magic");
  if (r.u16() != 1) throw std::runtime_error("quantized model: unsupported version");
  const int total = r.u16();
  const int ny = r.u16(), nu = r.u16(), nt = r.u16();
  if (total != ny + nu + nt + 1)
    throw std::runtime_error("quantized model: inconsistent layer counts");
  QuantizedNetwork q;
  q.seed = r.u64();
  q.spec_json = r.str();
  auto read_conv = [&]() {
    QuantConv qc;
    qc.name = r.str();
    qc.in_channels = int(r.u32());
    qc.out_channels = int(r.u32());
    qc.stride = int(r.u32());
    qc.groups = int(r.u32());
    qc.kernel = int(r.u32());
    qc.relu_after = r.u8() != 0;
    qc.reorder_groups = int(r.u32());
    qc.w_exp = r.i8();
    qc.in_exp = r.i8();
    qc.out_exp = r.i8();
    qc.weights.resize(r.u32());
    for (int16_t& v : qc.weights) v = r.i16();
    qc.bias_q.resize(r.u32());
    for (int64_t& v : qc.bias_q) v = r.i64();
    return qc;
  };
  for (int i = 0; i < ny; ++i) q.y_stem.push_back(read_conv());
  for (int i = 0; i < nu; ++i) q.uv_stem.push_back(read_conv());
  for (int i = 0; i < nt; ++i) q.trunk.push_back(read_conv());
  q.head = read_conv();
  if (!r.at_end()) throw std::runtime_error("quantized model: trailing bytes");
  return q;
}

}  // namespace soildnet
