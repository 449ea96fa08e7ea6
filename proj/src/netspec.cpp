#include "soildnet/netspec.hpp"

#include <algorithm>
#include <array>
#include <cctype>

#include "json.hpp"
#include "soildnet/tensor.hpp"
#include "soildnet/util.hpp"

using nlohmann::json;

namespace soildnet {

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "Conv";
    case LayerKind::BatchNorm: return "BatchNorm";
    case LayerKind::ReLU: return "ReLU";
    case LayerKind::ChannelReorder: return "ChannelReorder";
  }
  return "?";
}

LayerSpec LayerSpec::conv(int out_channels, int stride, int groups, int kernel, bool bias) {
  LayerSpec l;
  l.kind = LayerKind::Conv;
  l.out_channels = out_channels;
  l.stride = stride;
  l.groups = groups;
  l.kernel = kernel;
  l.bias = bias;
  return l;
}

LayerSpec LayerSpec::batchnorm() {
  LayerSpec l;
  l.kind = LayerKind::BatchNorm;
  return l;
}

LayerSpec LayerSpec::relu() {
  LayerSpec l;
  l.kind = LayerKind::ReLU;
  return l;
}

LayerSpec LayerSpec::reorder(int groups) {
  LayerSpec l;
  l.kind = LayerKind::ChannelReorder;
  l.groups = groups;
  return l;
}

bool LintReport::has_errors() const {
  for (const auto& f : findings)
    if (f.severity == "error") return true;
  return false;
}

std::string LintReport::to_string() const {
  std::string out;
  for (const auto& f : findings)
    out += strf("%s: [%s] %s layer %d: %s\n", f.severity.c_str(), f.rule.c_str(),
                f.section.c_str(), f.layer_index, f.message.c_str());
  return out;
}

namespace {

json layer_to_json(const LayerSpec& l) {
  json j;
  j["kind"] = layer_kind_name(l.kind);
  switch (l.kind) {
    case LayerKind::Conv:
      j["out_channels"] = l.out_channels;
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      j["groups"] = l.groups;
      j["bias"] = l.bias;
      break;
    case LayerKind::ChannelReorder:
      j["groups"] = l.groups;
      break;
    default:
      break;
  }
  return j;
}

int require_int(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key))
    throw std::invalid_argument(strf("spec: %s is missing \"%s\"", where.c_str(), key));
  const json& v = j.at(key);
  if (!v.is_number_integer())
    throw std::invalid_argument(strf("spec: %s field \"%s\" must be an integer", where.c_str(), key));
  return v.get<int>();
}

void check_keys(const json& obj, const std::vector<std::string>& allowed,
                const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw std::invalid_argument(
          strf("spec: %s has unknown field \"%s\"", where.c_str(), it.key().c_str()));
}

// Returns false when the kind is not representable; the caller records it as
// a foreign layer instead.
bool layer_from_json(const json& j, const std::string& where, LayerSpec& out,
                     std::string& foreign_kind) {
  if (!j.is_object()) throw std::invalid_argument(strf("spec: %s must be an object", where.c_str()));
  if (!j.contains("kind") || !j.at("kind").is_string())
    throw std::invalid_argument(strf("spec: %s needs a string \"kind\"", where.c_str()));
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "Conv") {
    check_keys(j, {"kind", "out_channels", "kernel", "stride", "groups", "bias"}, where);
    out = LayerSpec::conv(require_int(j, "out_channels", where),
                          j.contains("stride") ? require_int(j, "stride", where) : 1,
                          j.contains("groups") ? require_int(j, "groups", where) : 1,
                          j.contains("kernel") ? require_int(j, "kernel", where) : 5,
                          j.contains("bias") ? j.at("bias").get<bool>() : true);
    return true;
  }
  if (kind == "BatchNorm") {
    check_keys(j, {"kind"}, where);
    out = LayerSpec::batchnorm();
    return true;
  }
  if (kind == "ReLU") {
    check_keys(j, {"kind"}, where);
    out = LayerSpec::relu();
    return true;
  }
  if (kind == "ChannelReorder") {
    check_keys(j, {"kind", "groups"}, where);
    out = LayerSpec::reorder(require_int(j, "groups", where));
    return true;
  }
  foreign_kind = kind;
  return false;
}

void parse_section(const json& root, const char* key, std::vector<LayerSpec>& out,
                   std::vector<ForeignLayer>& foreign) {
  if (!root.contains(key) || !root.at(key).is_array())
    throw std::invalid_argument(strf("spec: \"%s\" must be a layer array", key));
  int idx = 0;
  for (const json& j : root.at(key)) {
    LayerSpec l;
    std::string foreign_kind;
    if (layer_from_json(j, strf("%s[%d]", key, idx), l, foreign_kind))
      out.push_back(l);
    else
      foreign.push_back({key, idx, foreign_kind});
    ++idx;
  }
}

}  // namespace

std::string serialize_spec(const NetworkSpec& spec) {
  if (!spec.foreign.empty())
    throw std::invalid_argument(
        strf("spec \"%s\" holds unrepresentable layers and cannot be serialized",
             spec.name.c_str()));
  json j;
  j["name"] = spec.name;
  const std::pair<const char*, const std::vector<LayerSpec>*> sections[] = {
      {"y_stem", &spec.y_stem}, {"uv_stem", &spec.uv_stem}, {"trunk", &spec.trunk}};
  for (const auto& [key, sec] : sections) {
    json arr = json::array();
    for (const LayerSpec& l : *sec) arr.push_back(layer_to_json(l));
    j[key] = arr;
  }
  j["head"] = layer_to_json(spec.head);
  return j.dump() + "\n";  // dump() sorts keys and emits no insignificant whitespace
}

NetworkSpec parse_spec(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(strf("spec: not valid JSON: %s", e.what()));
  }
  if (!root.is_object()) throw std::invalid_argument("spec: top level must be an object");
  check_keys(root, {"name", "y_stem", "uv_stem", "trunk", "head"}, "spec");
  NetworkSpec spec;
  if (!root.contains("name") || !root.at("name").is_string())
    throw std::invalid_argument("spec: needs a string \"name\"");
  spec.name = root.at("name").get<std::string>();
  parse_section(root, "y_stem", spec.y_stem, spec.foreign);
  parse_section(root, "uv_stem", spec.uv_stem, spec.foreign);
  parse_section(root, "trunk", spec.trunk, spec.foreign);
  if (!root.contains("head"))
    throw std::invalid_argument("spec: missing \"head\"");
  std::string foreign_kind;
  if (!layer_from_json(root.at("head"), "head", spec.head, foreign_kind))
    spec.foreign.push_back({"head", 0, foreign_kind});
  return spec;
}

namespace {

long long section_stride(const std::vector<LayerSpec>& sec) {
  long long s = 1;
  for (const LayerSpec& l : sec)
    if (l.kind == LayerKind::Conv) s *= l.stride;
  return s;
}

// Channel walk through one section; validates divisibility as it goes.
int walk_channels(const std::vector<LayerSpec>& sec, const char* name, int channels) {
  int idx = 0;
  for (const LayerSpec& l : sec) {
    switch (l.kind) {
      case LayerKind::Conv:
        if (l.out_channels < 1 || l.kernel < 1 || l.stride < 1 || l.groups < 1)
          throw std::invalid_argument(
              strf("spec: %s layer %d: conv fields must be positive", name, idx));
        if (channels % l.groups != 0)
          throw std::invalid_argument(
              strf("spec: %s layer %d: groups %d does not divide input channels %d", name, idx,
                   l.groups, channels));
        if (l.out_channels % l.groups != 0)
          throw std::invalid_argument(
              strf("spec: %s layer %d: groups %d does not divide out_channels %d", name, idx,
                   l.groups, l.out_channels));
        channels = l.out_channels;
        break;
      case LayerKind::ChannelReorder:
        if (l.groups < 1 || channels % l.groups != 0)
          throw std::invalid_argument(
              strf("spec: %s layer %d: reorder groups %d does not divide channels %d", name, idx,
                   l.groups, channels));
        break;
      default:
        break;
    }
    ++idx;
  }
  return channels;
}

}  // namespace

void validate_spec(const NetworkSpec& spec) {
  if (!spec.foreign.empty()) {
    std::string kinds;
    for (const auto& f : spec.foreign) {
      if (!kinds.empty()) kinds += ", ";
      kinds += strf("%s[%d]=%s", f.section.c_str(), f.index, f.kind.c_str());
    }
    throw std::invalid_argument(
        strf("spec \"%s\" contains unsupported layer kinds: %s", spec.name.c_str(),
             kinds.c_str()));
  }
  if (spec.y_stem.empty() || spec.uv_stem.empty() || spec.trunk.empty())
    throw std::invalid_argument(
        strf("spec \"%s\": y_stem, uv_stem and trunk must each hold at least one layer",
             spec.name.c_str()));
  if (spec.head.kind != LayerKind::Conv)
    throw std::invalid_argument(strf("spec \"%s\": head must be a Conv layer", spec.name.c_str()));
  if (spec.head.out_channels != kNumClasses)
    throw std::invalid_argument(strf("spec \"%s\": head must emit %d channels, not %d",
                                     spec.name.c_str(), kNumClasses, spec.head.out_channels));

  long long y_s = section_stride(spec.y_stem);
  long long uv_s = section_stride(spec.uv_stem);
  if (y_s != 2 * uv_s)
    throw std::invalid_argument(
        strf("spec \"%s\": y_stem stride %lld must be twice uv_stem stride %lld so the streams "
             "meet at one resolution",
             spec.name.c_str(), y_s, uv_s));
  long long total = y_s * section_stride(spec.trunk) * spec.head.stride;
  if (total != kTileSize)
    throw std::invalid_argument(
        strf("spec \"%s\": strides along the Y path multiply to %lld, expected %d (one output "
             "cell per tile)",
             spec.name.c_str(), total, kTileSize));

  int y_out = walk_channels(spec.y_stem, "y_stem", 1);
  int uv_out = walk_channels(spec.uv_stem, "uv_stem", 2);
  int trunk_out = walk_channels(spec.trunk, "trunk", y_out + uv_out);
  std::vector<LayerSpec> head_only = {spec.head};
  walk_channels(head_only, "head", trunk_out);
}

std::vector<LayerPlacement> walk_spec(const NetworkSpec& spec, int y_h, int y_w) {
  validate_spec(spec);
  if (y_h % kTileSize != 0 || y_w % kTileSize != 0)
    throw std::invalid_argument(
        strf("resolution %dx%d is not divisible by the %d-pixel tile size", y_h, y_w, kTileSize));

  std::vector<LayerPlacement> out;
  auto walk_section = [&](const std::vector<LayerSpec>& sec, const char* name, int channels,
                          int h, int w) {
    int idx = 0;
    for (const LayerSpec& l : sec) {
      LayerPlacement p;
      p.section = name;
      p.index = idx++;
      p.layer = l;
      p.in_channels = channels;
      p.in_h = h;
      p.in_w = w;
      if (l.kind == LayerKind::Conv) {
        channels = l.out_channels;
        h = conv_output_extent(h, l.kernel, l.stride, l.kernel / 2);
        w = conv_output_extent(w, l.kernel, l.stride, l.kernel / 2);
      }
      p.out_channels = channels;
      p.out_h = h;
      p.out_w = w;
      out.push_back(p);
    }
    return std::array<int, 3>{channels, h, w};
  };

  auto y_end = walk_section(spec.y_stem, "y_stem", 1, y_h, y_w);
  auto uv_end = walk_section(spec.uv_stem, "uv_stem", 2, y_h / 2, y_w / 2);
  if (y_end[1] != uv_end[1] || y_end[2] != uv_end[2])
    throw std::invalid_argument(
        strf("streams disagree on pre-concat resolution: %dx%d vs %dx%d", y_end[1], y_end[2],
             uv_end[1], uv_end[2]));
  auto trunk_end =
      walk_section(spec.trunk, "trunk", y_end[0] + uv_end[0], y_end[1], y_end[2]);
  std::vector<LayerSpec> head_only = {spec.head};
  walk_section(head_only, "head", trunk_end[0], trunk_end[1], trunk_end[2]);
  return out;
}

namespace {

std::string lowercase(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

void lint_section(const std::vector<LayerSpec>& sec, const char* name, LintReport& rep) {
  int idx = 0;
  for (const LayerSpec& l : sec) {
    if (l.kind == LayerKind::Conv) {
      if (l.kernel != 5)
        rep.findings.push_back({"kernel-5x5", name, idx,
                                strf("conv kernel %dx%d; the embedded profile requires 5x5 "
                                     "kernels for full MAC-array utilization",
                                     l.kernel, l.kernel),
                                "warning"});
      if (l.kernel % 2 == 0)
        rep.findings.push_back({"stride-only-downsampling", name, idx,
                                strf("even kernel %d changes spatial extent outside stride "
                                     "control under same-padding",
                                     l.kernel),
                                "warning"});
    }
    ++idx;
  }
}

}  // namespace

LintReport lint_embedded(const NetworkSpec& spec) {
  LintReport rep;
  for (const ForeignLayer& f : spec.foreign) {
    std::string k = lowercase(f.kind);
    std::string rule = "unknown-kind";
    std::string msg = strf("layer kind \"%s\" is not supported", f.kind.c_str());
    if (k.find("pool") != std::string::npos) {
      rule = "no-pooling";
      msg = strf("pooling layer \"%s\": the embedded profile forbids pooling; downsample by "
                 "stride instead",
                 f.kind.c_str());
    } else if (k.find("residual") != std::string::npos || k.find("skip") != std::string::npos ||
               k.find("shortcut") != std::string::npos || k.find("add") != std::string::npos) {
      rule = "no-residual";
      msg = strf("residual construct \"%s\": skip connections are excluded on the embedded "
                 "target",
                 f.kind.c_str());
    }
    rep.findings.push_back({rule, f.section, f.index, msg, "error"});
  }
  lint_section(spec.y_stem, "y_stem", rep);
  lint_section(spec.uv_stem, "uv_stem", rep);
  lint_section(spec.trunk, "trunk", rep);
  std::vector<LayerSpec> head_only = {spec.head};
  lint_section(head_only, "head", rep);
  return rep;
}

const std::vector<std::string>& reference_names() {
  static const std::vector<std::string> names = {"net1", "net2", "net3", "net4", "soildnet"};
  return names;
}

NetworkSpec reference_spec(const std::string& name, const std::string& scale) {
  bool desk;
  if (scale == "full")
    desk = false;
  else if (scale == "desk")
    desk = true;
  else
    throw std::invalid_argument(strf("unknown scale \"%s\" (use full or desk)", scale.c_str()));

  std::vector<int> trunk_groups;
  bool reorder = false;
  if (name == "net1") {
    trunk_groups = {1, 1, 1, 1, 1};
  } else if (name == "net2" || name == "net3") {
    trunk_groups = {4, 4, 4, 4, 4};
    reorder = (name == "net3");
  } else if (name == "net4" || name == "soildnet") {
    trunk_groups = {8, 2, 8, 2, 8};
    reorder = (name == "soildnet");
  } else {
    throw std::invalid_argument(strf("unknown reference spec \"%s\"", name.c_str()));
  }

  // Desk trunk widths are roughly a quarter of the full-scale ones; stage 2
  // is 16 rather than 12 so the dynamic schedule's groups=8 stages keep
  // divisible inputs.
  int stem = desk ? 4 : 16;
  std::vector<int> widths = desk ? std::vector<int>{8, 16, 16, 24, 32}
                                 : std::vector<int>{32, 48, 64, 96, 128};

  NetworkSpec spec;
  spec.name = name;
  spec.y_stem = {LayerSpec::conv(stem, 2), LayerSpec::batchnorm(), LayerSpec::relu()};
  spec.uv_stem = {LayerSpec::conv(stem, 1), LayerSpec::batchnorm(), LayerSpec::relu()};
  for (size_t i = 0; i < widths.size(); ++i) {
    int g = trunk_groups[i];
    spec.trunk.push_back(LayerSpec::conv(widths[i], 2, g));
    spec.trunk.push_back(LayerSpec::batchnorm());
    spec.trunk.push_back(LayerSpec::relu());
    if (reorder && g > 1) spec.trunk.push_back(LayerSpec::reorder(g));
  }
  spec.head = LayerSpec::conv(kNumClasses, 1);
  return spec;
}

}  // namespace soildnet
