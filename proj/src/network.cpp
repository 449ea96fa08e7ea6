#include "soildnet/network.hpp"

#include <cmath>
#include <cstring>

#include "soildnet/util.hpp"

namespace soildnet {

namespace {

constexpr char kCheckpointMagic[4] = {'S', 'D', 'C', 'K'};
constexpr uint16_t kCheckpointVersion = 1;

std::vector<NetLayer> bind_section(const std::vector<LayerSpec>& sec, int& channels) {
  std::vector<NetLayer> out;
  for (const LayerSpec& l : sec) {
    NetLayer nl;
    nl.spec = l;
    nl.in_channels = channels;
    if (l.kind == LayerKind::Conv) {
      nl.conv.out_channels = l.out_channels;
      nl.conv.groups = l.groups;
      nl.conv.in_channels_per_group = channels / l.groups;
      nl.conv.kernel_h = nl.conv.kernel_w = l.kernel;
      nl.conv.kernel.assign(nl.conv.kernel_size(), 0.0);
      if (l.bias) nl.conv.bias.assign(l.out_channels, 0.0);
      channels = l.out_channels;
    } else if (l.kind == LayerKind::BatchNorm) {
      nl.bn = BatchNormState::init(channels);
    }
    out.push_back(std::move(nl));
  }
  return out;
}

template <typename F>
void for_each_layer(Network& net, F&& f) {
  for (NetLayer& l : net.y_stem) f(l);
  for (NetLayer& l : net.uv_stem) f(l);
  for (NetLayer& l : net.trunk) f(l);
  f(net.head);
}

template <typename F>
void for_each_layer(const Network& net, F&& f) {
  for (const NetLayer& l : net.y_stem) f(l);
  for (const NetLayer& l : net.uv_stem) f(l);
  for (const NetLayer& l : net.trunk) f(l);
  f(net.head);
}

}  // namespace

Network build_network(const NetworkSpec& spec, uint64_t seed) {
  validate_spec(spec);
  Network net;
  net.spec = spec;
  net.seed = seed;
  int ch = 1;
  net.y_stem = bind_section(spec.y_stem, ch);
  int y_out = ch;
  ch = 2;
  net.uv_stem = bind_section(spec.uv_stem, ch);
  ch += y_out;
  net.trunk = bind_section(spec.trunk, ch);
  std::vector<LayerSpec> head_only = {spec.head};
  net.head = bind_section(head_only, ch)[0];

  Rng rng(seed);
  for_each_layer(net, [&](NetLayer& l) {
    if (l.spec.kind != LayerKind::Conv) return;
    bool is_head = (&l == &net.head);
    double stddev = is_head
                        ? 0.01  // keeps fresh logits near zero, so loss starts near ln(3)
                        : std::sqrt(2.0 / (l.conv.in_channels_per_group * l.conv.kernel_h *
                                           l.conv.kernel_w));
    for (double& v : l.conv.kernel) v = rng.gauss(0.0, stddev);
  });
  return net;
}

std::vector<std::vector<double>*> Network::trainable_arrays() {
  std::vector<std::vector<double>*> out;
  for_each_layer(*this, [&](NetLayer& l) {
    if (l.spec.kind == LayerKind::Conv) {
      out.push_back(&l.conv.kernel);
      if (!l.conv.bias.empty()) out.push_back(&l.conv.bias);
    } else if (l.spec.kind == LayerKind::BatchNorm) {
      out.push_back(&l.bn.gamma);
      out.push_back(&l.bn.beta);
    }
  });
  return out;
}

uint64_t Network::weight_checksum() const {
  uint64_t h = 1469598103934665603ull;
  auto mix = [&](const std::vector<double>& v) {
    uint64_t part = fnv1a64(v.data(), v.size() * sizeof(double));
    h = (h ^ part) * 1099511628211ull;
  };
  for_each_layer(*this, [&](const NetLayer& l) {
    if (l.spec.kind == LayerKind::Conv) {
      mix(l.conv.kernel);
      mix(l.conv.bias);
    } else if (l.spec.kind == LayerKind::BatchNorm) {
      mix(l.bn.gamma);
      mix(l.bn.beta);
      mix(l.bn.running_mean);
      mix(l.bn.running_var);
    }
  });
  return h;
}

namespace {

Tensor4 run_section(std::vector<NetLayer>& layers, std::vector<LayerTrace>& trace, Tensor4 x,
                    bool training) {
  for (NetLayer& l : layers) {
    LayerTrace t;
    t.input = x;
    switch (l.spec.kind) {
      case LayerKind::Conv:
        x = conv2d_forward(x, l.conv, l.spec.stride, l.spec.kernel / 2);
        break;
      case LayerKind::BatchNorm: {
        BatchNormResult r = batchnorm_forward(x, l.bn, training);
        if (training) {
          l.bn = r.state;  // running stats advance
          t.bn_mean = r.batch_mean;
          t.bn_inv_std = r.batch_inv_std;
        }
        x = std::move(r.output);
        break;
      }
      case LayerKind::ReLU:
        x = relu_forward(x);
        break;
      case LayerKind::ChannelReorder:
        x = channel_reorder(x, l.spec.groups);
        break;
    }
    trace.push_back(std::move(t));
  }
  return x;
}

void check_streams(const Tensor4& y, const Tensor4& uv) {
  if (y.channels != 1 || uv.channels != 2)
    throw std::invalid_argument(strf("expected Y (B,1,H,W) and UV (B,2,H/2,W/2), got %s and %s",
                                     y.shape_str().c_str(), uv.shape_str().c_str()));
  if (y.batch != uv.batch)
    throw std::invalid_argument(strf("stream batch mismatch: %d vs %d", y.batch, uv.batch));
  if (uv.height * 2 != y.height || uv.width * 2 != y.width)
    throw std::invalid_argument(
        strf("UV plane %dx%d is not half of Y plane %dx%d", uv.height, uv.width, y.height,
             y.width));
  if (y.height % kTileSize != 0 || y.width % kTileSize != 0)
    throw std::invalid_argument(strf("resolution %dx%d is not divisible by the tile size %d",
                                     y.height, y.width, kTileSize));
}

}  // namespace

ForwardTrace forward_tiles_trace(Network& net, const Tensor4& y, const Tensor4& uv,
                                 bool training) {
  check_streams(y, uv);
  ForwardTrace tr;
  Tensor4 ys = run_section(net.y_stem, tr.y_stem, y, training);
  Tensor4 uvs = run_section(net.uv_stem, tr.uv_stem, uv, training);
  if (ys.height != uvs.height || ys.width != uvs.width)
    throw std::invalid_argument(strf("streams meet at different resolutions: %s vs %s",
                                     ys.shape_str().c_str(), uvs.shape_str().c_str()));
  tr.y_channels = ys.channels;
  Tensor4 x = concat_channels(ys, uvs);
  x = run_section(net.trunk, tr.trunk, std::move(x), training);
  tr.head.input = x;
  tr.logits = conv2d_forward(x, net.head.conv, net.head.spec.stride, net.head.spec.kernel / 2);
  return tr;
}

Tensor4 forward_tiles(Network& net, const Tensor4& y, const Tensor4& uv, bool training) {
  return forward_tiles_trace(net, y, uv, training).logits;
}

namespace {

// Backward through one section; returns grad w.r.t. the section input.
Tensor4 backward_section(std::vector<NetLayer>& layers, const std::vector<LayerTrace>& trace,
                         std::vector<LayerGrads>& grads, Tensor4 g) {
  grads.resize(layers.size());
  for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i) {
    NetLayer& l = layers[i];
    const LayerTrace& t = trace[i];
    switch (l.spec.kind) {
      case LayerKind::Conv: {
        ConvGrads cg = conv2d_backward(t.input, l.conv, l.spec.stride, l.spec.kernel / 2, g);
        grads[i].kernel = std::move(cg.grad_kernel);
        grads[i].bias = std::move(cg.grad_bias);
        g = std::move(cg.grad_input);
        break;
      }
      case LayerKind::BatchNorm: {
        BatchNormResult fwd;
        fwd.training = true;
        fwd.state = l.bn;
        fwd.batch_mean = t.bn_mean;
        fwd.batch_inv_std = t.bn_inv_std;
        BatchNormGrads bg = batchnorm_backward(t.input, fwd, g);
        grads[i].gamma = std::move(bg.grad_gamma);
        grads[i].beta = std::move(bg.grad_beta);
        g = std::move(bg.grad_input);
        break;
      }
      case LayerKind::ReLU:
        g = relu_backward(t.input, g);
        break;
      case LayerKind::ChannelReorder:
        // inverse of reorder(g) is reorder(n/g)
        g = channel_reorder(g, g.channels / l.spec.groups);
        break;
    }
  }
  return g;
}

}  // namespace

NetworkGrads backward_tiles(Network& net, const ForwardTrace& trace, const Tensor4& grad_logits) {
  NetworkGrads grads;
  ConvGrads hg = conv2d_backward(trace.head.input, net.head.conv, net.head.spec.stride,
                                 net.head.spec.kernel / 2, grad_logits);
  grads.head.kernel = std::move(hg.grad_kernel);
  grads.head.bias = std::move(hg.grad_bias);
  Tensor4 g = backward_section(net.trunk, trace.trunk, grads.trunk, std::move(hg.grad_input));
  Tensor4 gy = slice_channels(g, 0, trace.y_channels);
  Tensor4 guv = slice_channels(g, trace.y_channels, g.channels - trace.y_channels);
  backward_section(net.y_stem, trace.y_stem, grads.y_stem, std::move(gy));
  backward_section(net.uv_stem, trace.uv_stem, grads.uv_stem, std::move(guv));
  return grads;
}

std::vector<std::vector<double>*> grad_arrays(Network& net, NetworkGrads& grads) {
  std::vector<std::vector<double>*> out;
  auto section = [&](std::vector<NetLayer>& layers, std::vector<LayerGrads>& g) {
    for (size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].spec.kind == LayerKind::Conv) {
        out.push_back(&g[i].kernel);
        if (!layers[i].conv.bias.empty()) out.push_back(&g[i].bias);
      } else if (layers[i].spec.kind == LayerKind::BatchNorm) {
        out.push_back(&g[i].gamma);
        out.push_back(&g[i].beta);
      }
    }
  };
  section(net.y_stem, grads.y_stem);
  section(net.uv_stem, grads.uv_stem);
  section(net.trunk, grads.trunk);
  if (net.head.spec.kind == LayerKind::Conv) {
    out.push_back(&grads.head.kernel);
    if (!net.head.conv.bias.empty()) out.push_back(&grads.head.bias);
  }
  return out;
}

void save_checkpoint(const Network& net, const std::string& path) {
  ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.u16(kCheckpointVersion);
  w.u64(net.seed);
  w.str(serialize_spec(net.spec));

  std::vector<const std::vector<double>*> arrays;
  for_each_layer(net, [&](const NetLayer& l) {
    if (l.spec.kind == LayerKind::Conv) {
      arrays.push_back(&l.conv.kernel);
      if (!l.conv.bias.empty()) arrays.push_back(&l.conv.bias);
    } else if (l.spec.kind == LayerKind::BatchNorm) {
      arrays.push_back(&l.bn.gamma);
      arrays.push_back(&l.bn.beta);
      arrays.push_back(&l.bn.running_mean);
      arrays.push_back(&l.bn.running_var);
    }
  });
  w.u32(static_cast<uint32_t>(arrays.size()));
  for (const auto* a : arrays) {
    w.u32(static_cast<uint32_t>(a->size()));
    for (double v : *a) w.f64(v);
  }
  uint64_t digest = fnv1a64(w.data().data(), w.data().size());
  w.u64(digest);
  write_file_bytes(path, w.data().data(), w.data().size());
}

Network load_checkpoint(const std::string& path) {
  std::vector<uint8_t> bytes = read_file_bytes(path);
  if (bytes.size() < 12) throw std::runtime_error(strf("checkpoint %s: truncated", path.c_str()));
  uint64_t stored_digest = 0;
  std::memcpy(&stored_digest, bytes.data() + bytes.size() - 8, 8);
  if (fnv1a64(bytes.data(), bytes.size() - 8) != stored_digest)
    throw std::runtime_error(strf("checkpoint %s: checksum mismatch", path.c_str()));

  ByteReader r(bytes.data(), bytes.size() - 8);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw std::runtime_error(strf("checkpoint %s: bad magic", path.c_str()));
  if (r.u16() != kCheckpointVersion)
    throw std::runtime_error(strf("checkpoint %s: unsupported version", path.c_str()));
  uint64_t seed = r.u64();
  NetworkSpec spec = parse_spec(r.str());
  Network net = build_network(spec, seed);

  std::vector<std::vector<double>*> arrays;
  for_each_layer(net, [&](NetLayer& l) {
    if (l.spec.kind == LayerKind::Conv) {
      arrays.push_back(&l.conv.kernel);
      if (!l.conv.bias.empty()) arrays.push_back(&l.conv.bias);
    } else if (l.spec.kind == LayerKind::BatchNorm) {
      arrays.push_back(&l.bn.gamma);
      arrays.push_back(&l.bn.beta);
      arrays.push_back(&l.bn.running_mean);
      arrays.push_back(&l.bn.running_var);
    }
  });
  uint32_t count = r.u32();
  if (count != arrays.size())
    throw std::runtime_error(strf("checkpoint %s: %u arrays, expected %zu", path.c_str(), count,
                                  arrays.size()));
  for (auto* a : arrays) {
    uint32_t len = r.u32();
    if (len != a->size())
      throw std::runtime_error(strf("checkpoint %s: array length %u, expected %zu", path.c_str(),
                                    len, a->size()));
    for (double& v : *a) v = r.f64();
  }
  return net;
}

}  // namespace soildnet
