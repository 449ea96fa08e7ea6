#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>

#include "doctest.h"
#include "soildnet/netspec.hpp"
#include "soildnet/network.hpp"

using namespace soildnet;

TEST_CASE("all reference specs validate and lint clean at both scales") {
  for (const std::string& name : reference_names()) {
    for (const char* scale : {"full", "desk"}) {
      NetworkSpec spec = reference_spec(name, scale);
      CHECK_NOTHROW(validate_spec(spec));
      LintReport rep = lint_embedded(spec);
      CHECK(rep.clean());
    }
  }
  CHECK_THROWS_AS(reference_spec("net9"), std::invalid_argument);
  CHECK_THROWS_AS(reference_spec("net1", "tiny"), std::invalid_argument);
}

TEST_CASE("reference schemes differ only in groups and reorder placement") {
  NetworkSpec net2 = reference_spec("net2");
  NetworkSpec net3 = reference_spec("net3");
  // net3 = net2 plus reorder layers
  std::vector<LayerSpec> stripped;
  for (const LayerSpec& l : net3.trunk)
    if (l.kind != LayerKind::ChannelReorder) stripped.push_back(l);
  REQUIRE(stripped.size() == net2.trunk.size());
  for (size_t i = 0; i < stripped.size(); ++i) {
    CHECK(stripped[i].kind == net2.trunk[i].kind);
    CHECK(stripped[i].out_channels == net2.trunk[i].out_channels);
    CHECK(stripped[i].groups == net2.trunk[i].groups);
  }
  // every reorder follows a ReLU and shuffles with the producing conv's groups
  NetworkSpec sn = reference_spec("soildnet");
  int last_conv_groups = 0;
  for (size_t i = 0; i < sn.trunk.size(); ++i) {
    const LayerSpec& l = sn.trunk[i];
    if (l.kind == LayerKind::Conv) last_conv_groups = l.groups;
    if (l.kind == LayerKind::ChannelReorder) {
      REQUIRE(i > 0);
      CHECK(sn.trunk[i - 1].kind == LayerKind::ReLU);
      CHECK(l.groups == last_conv_groups);
    }
  }
}

TEST_CASE("dynamic schedule alternates high and low group counts") {
  for (const char* name : {"net4", "soildnet"}) {
    NetworkSpec spec = reference_spec(name);
    std::vector<int> groups;
    for (const LayerSpec& l : spec.trunk)
      if (l.kind == LayerKind::Conv && l.groups > 1) groups.push_back(l.groups);
    REQUIRE(groups.size() >= 2);
    int low = *std::min_element(groups.begin(), groups.end());
    for (size_t i = 0; i + 1 < groups.size(); ++i)
      CHECK(!(groups[i] > low && groups[i + 1] > low));
  }
}

TEST_CASE("spec round-trip through canonical serialization is byte-identical") {
  for (const std::string& name : reference_names()) {
    for (const char* scale : {"full", "desk"}) {
      std::string a = serialize_spec(reference_spec(name, scale));
      std::string b = serialize_spec(parse_spec(a));
      CHECK(a == b);
      CHECK(a.back() == '\n');
      CHECK(a.find('\r') == std::string::npos);
      CHECK(a.find(": ") == std::string::npos);  // no insignificant whitespace
    }
  }
}

TEST_CASE("parse rejects malformed specs with structured messages") {
  CHECK_THROWS_WITH_AS(parse_spec("not json"), doctest::Contains("JSON"), std::invalid_argument);
  CHECK_THROWS_AS(parse_spec("[1,2,3]"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(parse_spec(R"({"name":"x","y_stem":[],"uv_stem":[],"trunk":[],"head":{"kind":"Conv","out_channels":3},"extra":1})"),
                       doctest::Contains("unknown field"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(
      parse_spec(R"({"name":"x","y_stem":[{"kind":"Conv","out_channels":"four"}],"uv_stem":[],"trunk":[],"head":{"kind":"Conv","out_channels":3}})"),
      doctest::Contains("integer"), std::invalid_argument);
  CHECK_THROWS_AS(parse_spec(R"({"y_stem":[],"uv_stem":[],"trunk":[],"head":{"kind":"Conv","out_channels":3}})"),
                  std::invalid_argument);
}

TEST_CASE("pooling and residual kinds are captured and surface as lint errors") {
  NetworkSpec spec = parse_spec(R"({"name":"imported","y_stem":[{"kind":"Conv","out_channels":4,"stride":2}],"uv_stem":[{"kind":"Conv","out_channels":4}],"trunk":[{"kind":"MaxPool"},{"kind":"Conv","out_channels":8,"stride":2}],"head":{"kind":"Conv","out_channels":3}})");
  REQUIRE(spec.foreign.size() == 1);
  CHECK(spec.foreign[0].kind == "MaxPool");
  CHECK(spec.foreign[0].section == "trunk");
  CHECK(spec.foreign[0].index == 0);
  LintReport rep = lint_embedded(spec);
  REQUIRE(!rep.clean());
  bool found = false;
  for (const auto& f : rep.findings)
    if (f.rule == "no-pooling" && f.severity == "error") found = true;
  CHECK(found);
  CHECK_THROWS_WITH_AS(validate_spec(spec), doctest::Contains("MaxPool"), std::invalid_argument);
  CHECK_THROWS_AS(serialize_spec(spec), std::invalid_argument);

  NetworkSpec res = parse_spec(R"({"name":"r","y_stem":[{"kind":"ResidualAdd"}],"uv_stem":[{"kind":"Conv","out_channels":4}],"trunk":[{"kind":"Conv","out_channels":8,"stride":2}],"head":{"kind":"Conv","out_channels":3}})");
  LintReport rep2 = lint_embedded(res);
  bool found2 = false;
  for (const auto& f : rep2.findings)
    if (f.rule == "no-residual" && f.severity == "error") found2 = true;
  CHECK(found2);
}

TEST_CASE("lint flags non-5x5 and even kernels") {
  NetworkSpec spec = reference_spec("net1");
  spec.trunk[0].kernel = 3;
  LintReport rep = lint_embedded(spec);
  REQUIRE(rep.findings.size() == 1);
  CHECK(rep.findings[0].rule == "kernel-5x5");
  CHECK(rep.findings[0].section == "trunk");
  CHECK(rep.findings[0].layer_index == 0);
  CHECK(rep.findings[0].severity == "warning");
  CHECK(!rep.has_errors());

  spec.trunk[0].kernel = 4;
  LintReport rep2 = lint_embedded(spec);
  CHECK(rep2.findings.size() == 2);  // 5x5 rule and stride-only rule
  bool stride_rule = false;
  for (const auto& f : rep2.findings)
    if (f.rule == "stride-only-downsampling") stride_rule = true;
  CHECK(stride_rule);
}

TEST_CASE("structural validation rejects bad stride arithmetic and heads") {
  NetworkSpec spec = reference_spec("soildnet");
  spec.trunk[0].stride = 1;  // total now 32
  CHECK_THROWS_WITH_AS(validate_spec(spec), doctest::Contains("strides"), std::invalid_argument);

  spec = reference_spec("soildnet");
  spec.uv_stem[0].stride = 2;  // breaks the y = 2x uv relation
  CHECK_THROWS_WITH_AS(validate_spec(spec), doctest::Contains("twice"), std::invalid_argument);

  spec = reference_spec("soildnet");
  spec.head.out_channels = 4;
  CHECK_THROWS_WITH_AS(validate_spec(spec), doctest::Contains("head"), std::invalid_argument);

  spec = reference_spec("soildnet");
  spec.trunk[0].groups = 7;  // divides neither 8 nor 32
  CHECK_THROWS_WITH_AS(validate_spec(spec), doctest::Contains("divide"), std::invalid_argument);

  spec = reference_spec("soildnet");
  spec.trunk.clear();
  CHECK_THROWS_AS(validate_spec(spec), std::invalid_argument);
}

TEST_CASE("walk_spec computes tile-grid shapes") {
  NetworkSpec spec = reference_spec("soildnet");
  std::vector<LayerPlacement> full = walk_spec(spec, 768, 1280);
  const LayerPlacement& head = full.back();
  CHECK(head.section == "head");
  CHECK(head.out_channels == 3);
  CHECK(head.out_h == 12);
  CHECK(head.out_w == 20);
  CHECK(full[0].section == "y_stem");
  CHECK(full[0].in_h == 768);
  CHECK(full[0].out_h == 384);

  std::vector<LayerPlacement> desk = walk_spec(reference_spec("soildnet", "desk"), 192, 320);
  CHECK(desk.back().out_h == 3);
  CHECK(desk.back().out_w == 5);

  CHECK_THROWS_WITH_AS(walk_spec(spec, 768, 1300), doctest::Contains("divisible"),
                       std::invalid_argument);
}

TEST_CASE("build_network is deterministic per seed and validates the spec") {
  NetworkSpec spec = reference_spec("soildnet", "desk");
  Network a = build_network(spec, 42);
  Network b = build_network(spec, 42);
  CHECK(a.weight_checksum() == b.weight_checksum());
  Network c = build_network(spec, 43);
  CHECK(a.weight_checksum() != c.weight_checksum());

  NetworkSpec bad = reference_spec("soildnet");
  bad.trunk[0].stride = 1;
  CHECK_THROWS_AS(build_network(bad, 42), std::invalid_argument);
}

TEST_CASE("bias flag and custom layers survive the schema round trip") {
  NetworkSpec spec = reference_spec("net1", "desk");
  spec.name = "custom";
  spec.trunk[0].bias = false;
  spec.trunk[0].kernel = 3;
  std::string text = serialize_spec(spec);
  NetworkSpec back = parse_spec(text);
  CHECK(back.name == "custom");
  CHECK(back.trunk[0].bias == false);
  CHECK(back.trunk[0].kernel == 3);
  CHECK(serialize_spec(back) == text);
}
