#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "soildnet/quantize.hpp"
#include "soildnet/synth.hpp"
#include "soildnet/util.hpp"

using namespace soildnet;

namespace fs = std::filesystem;

namespace {

// 1x1 identity conv over ch channels; the building block of hand nets whose
// exact behaviour is known.
FoldedConv ident(const std::string& name, int ch, int stride) {
  FoldedConv fc;
  fc.name = name;
  fc.in_channels = fc.out_channels = ch;
  fc.stride = stride;
  fc.groups = 1;
  fc.kernel = 1;
  fc.weights.assign(size_t(ch) * ch, 0.0);
  for (int c = 0; c < ch; ++c) fc.weights[size_t(c) * ch + c] = 1.0;
  fc.bias.assign(size_t(ch), 0.0);
  return fc;
}

// Largest value representable at exponent e; calibrating with it pins the
// layer to exactly that exponent.
double exp_max(int e) { return 32767.0 * std::ldexp(1.0, e); }

Tensor4 rand_tensor(Rng& rng, int b, int c, int h, int w, double lo, double hi) {
  Tensor4 t(b, c, h, w);
  for (double& x : t.data) x = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("power-of-two scales and the worked quantization example") {
  CHECK(pow2_scale_exp(0.0) == 0);
  CHECK(pow2_scale_exp(exp_max(-3)) == -3);
  CHECK(pow2_scale_exp(exp_max(-3) * 1.0000001) == -2);
  CHECK(pow2_scale_exp(1.0) == -14);
  CHECK_THROWS_AS(pow2_scale_exp(-1.0), std::invalid_argument);

  Tensor4 t(1, 3, 1, 1);
  t.data = {-1.0, 0.0, 0.5};
  FixedTensor f = quantize(t);
  CHECK(f.scale_exp == -14);
  CHECK(f.q[0] == -16384);
  CHECK(f.q[1] == 0);
  CHECK(f.q[2] == 8192);
  Tensor4 back = dequantize(f);
  CHECK(back.data[0] == -1.0);
  CHECK(back.data[1] == 0.0);
  CHECK(back.data[2] == 0.5);

  Tensor4 z(2, 2, 2, 2);
  FixedTensor fz = quantize(z);
  CHECK(fz.scale_exp == 0);
  for (int16_t q : z.data.empty() ? std::vector<int16_t>{} : fz.q) CHECK(q == 0);

  Tensor4 bad(1, 1, 1, 1);
  bad.data[0] = std::nan("");
  CHECK_THROWS_AS(quantize(bad), std::invalid_argument);
}

TEST_CASE("round trip stays within half a scale step and is idempotent") {
  Rng rng(31);
  Tensor4 t = rand_tensor(rng, 2, 3, 5, 7, -4.0, 4.0);
  FixedTensor f = quantize(t);
  const double half = f.scale() / 2.0;
  Tensor4 back = dequantize(f);
  for (size_t i = 0; i < t.data.size(); ++i) CHECK(std::fabs(back.data[i] - t.data[i]) <= half);

  Tensor4 again = dequantize(quantize(back));
  CHECK(again.data == back.data);  // representable values survive exactly
}

TEST_CASE("an exactly representable hand net runs the integer path without error") {
  // identity stems, no trunk, identity head with bias 0.5; every value is a
  // multiple of 2^-13, every scale a power of two, so nothing ever rounds
  FoldedNetwork f;
  f.y_stem.push_back(ident("y_stem[0]", 1, 2));
  f.uv_stem.push_back(ident("uv_stem[0]", 2, 1));
  f.head = ident("head", 3, 1);
  f.head.bias.assign(3, 0.5);

  Tensor4 y(1, 1, 8, 8), uv(1, 2, 4, 4);
  for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = double((i * 3) % 11) * std::ldexp(1.0, -13);
  for (size_t i = 0; i < uv.data.size(); ++i) uv.data[i] = double((i * 5 + 2) % 13) * std::ldexp(1.0, -13);

  CalibrationStats stats;
  stats.y_input_max = exp_max(-14);
  stats.uv_input_max = exp_max(-14);
  stats.output_max = {exp_max(-14), exp_max(-14), exp_max(-13)};
  QuantizedNetwork qnet = quantize_folded(f, stats);

  auto [logits, report] = forward_tiles_quantized(qnet, f, y, uv);
  Tensor4 ref = folded_forward(f, y, uv);
  REQUIRE(logits.same_shape(ref));
  for (size_t i = 0; i < ref.data.size(); ++i) CHECK(logits.data[i] == ref.data[i]);
  REQUIRE(report.per_layer.size() == 3);
  for (const auto& e : report.per_layer) CHECK(e.max_abs_err == 0.0);
  CHECK(report.logit_max_abs_err == 0.0);
  CHECK(report.argmax_agreement() == 1.0);
  // the head really added its bias
  CHECK(logits.at(0, 0, 2, 3) == y.at(0, 0, 4, 6) + 0.5);
}

TEST_CASE("quantized grouped conv isolates channel blocks exactly") {
  Rng rng(17);
  FoldedNetwork f;
  f.y_stem.push_back(ident("y_stem[0]", 1, 2));
  f.uv_stem.push_back(ident("uv_stem[0]", 3, 1));
  FoldedConv head;
  head.name = "head";
  head.in_channels = head.out_channels = 4;
  head.groups = 2;
  head.kernel = 1;
  head.stride = 1;
  head.weights.resize(4 * 2);  // [oc][ic_per_group]
  for (double& w : head.weights) w = rng.uniform(-1.0, 1.0);
  head.bias.assign(4, 0.0);
  f.head = head;

  CalibrationStats stats;
  stats.y_input_max = exp_max(-14);
  stats.uv_input_max = exp_max(-14);
  stats.output_max = {exp_max(-14), exp_max(-14), exp_max(-13)};
  QuantizedNetwork qnet = quantize_folded(f, stats);

  Tensor4 y = rand_tensor(rng, 1, 1, 8, 8, 0.0, 1.0);
  Tensor4 uv_a = rand_tensor(rng, 1, 3, 4, 4, 0.0, 1.0);
  Tensor4 uv_b = uv_a;
  // concat order is (y, uv0, uv1, uv2); block 0 = {y, uv0}, block 1 = {uv1, uv2}
  for (int c = 1; c < 3; ++c)
    for (int h = 0; h < 4; ++h)
      for (int w = 0; w < 4; ++w) uv_b.at(0, c, h, w) = rng.uniform(0.0, 1.0);

  Tensor4 la = forward_tiles_quantized(qnet, f, y, uv_a).first;
  Tensor4 lb = forward_tiles_quantized(qnet, f, y, uv_b).first;
  bool block1_differs = false;
  for (int c = 0; c < 2; ++c)
    for (int h = 0; h < 4; ++h)
      for (int w = 0; w < 4; ++w) CHECK(la.at(0, c, h, w) == lb.at(0, c, h, w));
  for (int c = 2; c < 4; ++c)
    for (int h = 0; h < 4; ++h)
      for (int w = 0; w < 4; ++w) block1_differs |= la.at(0, c, h, w) != lb.at(0, c, h, w);
  CHECK(block1_differs);
}

TEST_CASE("layer error grows with depth on a no-activation identity chain") {
  Rng rng(23);
  FoldedNetwork f;
  f.y_stem.push_back(ident("y_stem[0]", 1, 2));
  f.uv_stem.push_back(ident("uv_stem[0]", 2, 1));
  f.trunk.push_back(ident("trunk[0]", 3, 1));
  f.trunk.push_back(ident("trunk[1]", 3, 1));
  f.head = ident("head", 3, 1);

  CalibrationStats stats;
  stats.y_input_max = exp_max(-14);
  stats.uv_input_max = exp_max(-14);
  // each stage forced to a 4x coarser grid than the one before
  stats.output_max = {exp_max(-14), exp_max(-14), exp_max(-12), exp_max(-10), exp_max(-8)};
  QuantizedNetwork qnet = quantize_folded(f, stats);

  Tensor4 y = rand_tensor(rng, 2, 1, 16, 16, 0.0, 1.0);
  Tensor4 uv = rand_tensor(rng, 2, 2, 8, 8, 0.0, 1.0);
  QuantReport report = forward_tiles_quantized(qnet, f, y, uv).second;
  REQUIRE(report.per_layer.size() == 5);
  // stems share an index in the chain; compare from the concat onward
  double prev = std::max(report.per_layer[0].max_abs_err, report.per_layer[1].max_abs_err);
  for (size_t i = 2; i < report.per_layer.size(); ++i) {
    CHECK(report.per_layer[i].max_abs_err >= prev);
    prev = report.per_layer[i].max_abs_err;
  }
  CHECK(report.per_layer[4].max_abs_err > report.per_layer[0].max_abs_err);
}

TEST_CASE("batch-norm folding reproduces the inference-mode float path") {
  Network net = build_network(reference_spec("soildnet", "desk"), 19);
  Rng rng(40);
  auto perturb = [&](std::vector<NetLayer>& layers) {
    for (NetLayer& l : layers) {
      if (l.spec.kind != LayerKind::BatchNorm) continue;
      for (double& g : l.bn.gamma) g = rng.uniform(0.7, 1.3);
      for (double& b : l.bn.beta) b = rng.uniform(-0.4, 0.4);
      for (double& m : l.bn.running_mean) m = rng.uniform(-0.3, 0.3);
      for (double& v : l.bn.running_var) v = rng.uniform(0.5, 2.0);
    }
  };
  perturb(net.y_stem);
  perturb(net.uv_stem);
  perturb(net.trunk);

  Tensor4 y = rand_tensor(rng, 2, 1, 128, 128, 0.0, 1.0);
  Tensor4 uv = rand_tensor(rng, 2, 2, 64, 64, 0.0, 1.0);
  Tensor4 ref = forward_tiles(net, y, uv, false);
  Tensor4 folded = folded_forward(fold_network(net), y, uv);
  REQUIRE(folded.same_shape(ref));
  for (size_t i = 0; i < ref.data.size(); ++i)
    CHECK(std::fabs(folded.data[i] - ref.data[i]) < 1e-9);
}

TEST_CASE("the self-calibrating wrapper stays close to the float network") {
  Network net = build_network(reference_spec("soildnet", "desk"), 5);
  Rng rng(44);
  Tensor4 y = rand_tensor(rng, 2, 1, 128, 128, 0.0, 1.0);
  Tensor4 uv = rand_tensor(rng, 2, 2, 64, 64, 0.0, 1.0);
  auto [logits, report] = forward_tiles_quantized(net, y, uv);
  CHECK(logits.batch == 2);
  CHECK(logits.channels == 3);
  CHECK(logits.height == 2);
  CHECK(logits.width == 2);
  CHECK(report.per_layer.size() == 8);  // 1 + 1 + 5 + head
  CHECK(report.tiles_total == 8);
  CHECK(report.logit_max_abs_err < 0.02);
  CHECK(report.argmax_agreement() >= 0.0);
  CHECK(report.argmax_agreement() <= 1.0);
}

TEST_CASE("overflow is a structured error that names the layer") {
  FoldedNetwork f;
  f.y_stem.push_back(ident("y_stem[0]", 1, 2));
  f.uv_stem.push_back(ident("uv_stem[0]", 2, 1));
  f.trunk.push_back(ident("trunk[0]", 3, 1));
  f.head = ident("head", 3, 1);

  CalibrationStats stats;
  stats.y_input_max = exp_max(-14);
  stats.uv_input_max = exp_max(-14);
  // an absurdly fine output grid forces a giant left shift at requantization
  stats.output_max = {exp_max(-14), exp_max(-14), exp_max(-70), exp_max(-13)};
  QuantizedNetwork qnet = quantize_folded(f, stats);
  Tensor4 y(1, 1, 8, 8), uv(1, 2, 4, 4);
  for (double& v : y.data) v = 1.0;
  CHECK_THROWS_WITH_AS(forward_tiles_quantized(qnet, f, y, uv),
                       doctest::Contains("trunk[0]"), std::overflow_error);

  FoldedNetwork g = f;
  g.head.bias.assign(3, 1e12);  // unrepresentable at accumulator scale
  CalibrationStats ok = stats;
  ok.output_max = {exp_max(-14), exp_max(-14), exp_max(-14), exp_max(-13)};
  CHECK_THROWS_WITH_AS(quantize_folded(g, ok), doctest::Contains("head"), std::overflow_error);
}

TEST_CASE("calibration and measurement run over a dataset split") {
  fs::path dir = fs::temp_directory_path() / "soildnet_tq_data";
  if (!fs::exists(dir / "manifest")) {
    DatasetConfig cfg = DatasetConfig::with_total(6);
    cfg.width = 128;
    cfg.height = 128;
    build_dataset(cfg, dir.string());
  }
  std::string root = dir.string();

  Network net = build_network(reference_spec("net2", "desk"), 77);
  FoldedNetwork folded = fold_network(net);
  CalibrationStats stats = calibrate(folded, root, "train", 4, 2);
  CHECK(stats.output_max.size() == 8);
  CHECK(stats.y_input_max > 0.0);
  CHECK(stats.y_input_max <= 1.0);
  for (double m : stats.output_max) CHECK(m > 0.0);

  QuantizedNetwork qnet = quantize_network(net, stats);
  CHECK(qnet.seed == 77);
  CHECK(qnet.spec_json == serialize_spec(net.spec));

  QuantReport report = measure_quantized(qnet, folded, root, "val", 4, 2);
  CHECK(report.per_layer.size() == 8);
  CHECK(report.tiles_total > 0);
  CHECK(report.argmax_agreement() >= 0.0);
  CHECK(report.argmax_agreement() <= 1.0);

  CHECK_THROWS_AS(calibrate(folded, root, "train", 0), std::invalid_argument);
  CHECK_THROWS_AS(calibrate(folded, root, "nowhere", 4), std::invalid_argument);

  std::string csv = quant_report_csv(report);
  CHECK(csv.find("# tile_argmax_agreement=") == 0);
  CHECK(csv.find("layer,max_abs_err\n") != std::string::npos);
  CHECK(csv.find("y_stem[0],") != std::string::npos);
  CHECK(csv.find("trunk[4],") != std::string::npos);
  CHECK(csv.find("\nlogits,") != std::string::npos);
}

TEST_CASE("the model container round-trips and rejects damage") {
  Network net = build_network(reference_spec("net3", "desk"), 9);
  FoldedNetwork folded = fold_network(net);
  CalibrationStats stats;
  stats.y_input_max = 1.0;
  stats.uv_input_max = 1.0;
  stats.output_max.assign(8, 1.5);  // two stems, a 5-conv trunk and the head
  QuantizedNetwork qnet = quantize_network(net, stats);

  fs::path dir = fs::temp_directory_path() / "soildnet_q16";
  fs::create_directories(dir);
  std::string path = (dir / "model.q16").string();
  save_quantized(path, qnet);
  QuantizedNetwork back = load_quantized(path);
  CHECK(back.seed == qnet.seed);
  CHECK(back.spec_json == qnet.spec_json);
  REQUIRE(back.trunk.size() == qnet.trunk.size());
  auto same = [](const QuantConv& a, const QuantConv& b) {
    return a.name == b.name && a.in_channels == b.in_channels &&
           a.out_channels == b.out_channels && a.stride == b.stride && a.groups == b.groups &&
           a.kernel == b.kernel && a.relu_after == b.relu_after &&
           a.reorder_groups == b.reorder_groups && a.w_exp == b.w_exp && a.in_exp == b.in_exp &&
           a.out_exp == b.out_exp && a.weights == b.weights && a.bias_q == b.bias_q;
  };
  CHECK(same(back.head, qnet.head));
  for (size_t i = 0; i < qnet.trunk.size(); ++i) CHECK(same(back.trunk[i], qnet.trunk[i]));
  CHECK(same(back.y_stem[0], qnet.y_stem[0]));
  CHECK(same(back.uv_stem[0], qnet.uv_stem[0]));

  std::string copy = (dir / "copy.q16").string();
  save_quantized(copy, back);
  CHECK(read_file_bytes(copy) == read_file_bytes(path));

  std::vector<uint8_t> bytes = read_file_bytes(path);
  std::vector<uint8_t> corrupt = bytes;
  corrupt[bytes.size() / 2] ^= 0x40;
  write_file_bytes(path + ".bad", corrupt.data(), corrupt.size());
  CHECK_THROWS_WITH_AS(load_quantized(path + ".bad"), doctest::Contains("digest"),
                       std::runtime_error);

  write_file_bytes(path + ".cut", bytes.data(), bytes.size() - 5);
  CHECK_THROWS_AS(load_quantized(path + ".cut"), std::runtime_error);

  // valid digest over a wrong magic still fails, on the magic itself
  std::vector<uint8_t> remagic = bytes;
  remagic[0] = 'X';
  uint64_t digest = fnv1a64(remagic.data(), remagic.size() - 8);
  for (int i = 0; i < 8; ++i) remagic[remagic.size() - 8 + i] = uint8_t(digest >> (8 * i));
  write_file_bytes(path + ".mag", remagic.data(), remagic.size());
  CHECK_THROWS_WITH_AS(load_quantized(path + ".mag"), doctest::Contains("magic"),
                       std::runtime_error);
  fs::remove_all(dir);
}
