#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <map>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "soildnet/analyzer.hpp"
#include "soildnet/network.hpp"

using namespace soildnet;

namespace {

const LayerCost& find_layer(const CostReport& rep, const std::string& section, int index) {
  for (const LayerCost& l : rep.layers)
    if (l.section == section && l.index == index) return l;
  FAIL("layer not found");
  return rep.layers.front();
}

// Counts every weight element and every multiply one at a time. Deliberately
// dumb so it cannot share a bug with the closed-form analyzer.
void brute_force_costs(const NetworkSpec& spec, int y_h, int y_w, long long& params_trainable,
                       long long& params_total, long long& macs) {
  params_trainable = params_total = macs = 0;
  for (const LayerPlacement& p : walk_spec(spec, y_h, y_w)) {
    if (p.layer.kind == LayerKind::Conv) {
      int icpg = p.in_channels / p.layer.groups;
      for (int oc = 0; oc < p.layer.out_channels; ++oc)
        for (int ic = 0; ic < icpg; ++ic)
          for (int kh = 0; kh < p.layer.kernel; ++kh)
            for (int kw = 0; kw < p.layer.kernel; ++kw) {
              ++params_trainable;
              ++params_total;
            }
      if (p.layer.bias)
        for (int oc = 0; oc < p.layer.out_channels; ++oc) {
          ++params_trainable;
          ++params_total;
        }
      for (int oh = 0; oh < p.out_h; ++oh)
        for (int ow = 0; ow < p.out_w; ++ow)
          for (int oc = 0; oc < p.layer.out_channels; ++oc) macs += (long long)icpg *
              p.layer.kernel * p.layer.kernel;
    } else if (p.layer.kind == LayerKind::BatchNorm) {
      for (int c = 0; c < p.in_channels; ++c) {
        params_trainable += 2;  // gamma, beta
        params_total += 4;      // plus running mean, var
      }
    }
    // relu and reorder carry no parameters and no multiplies
  }
}

// Valid random spec: five stride-2 trunk convs after a stride-2 Y stem.
NetworkSpec random_spec(Rng& rng) {
  auto pick = [&](std::initializer_list<int> opts) {
    std::vector<int> v(opts);
    return v[(size_t)rng.below(v.size())];
  };
  NetworkSpec s;
  s.name = "rand";
  int y_out = pick({2, 4});
  int uv_out = pick({2, 4});
  s.y_stem = {LayerSpec::conv(y_out, 2, 1, pick({3, 5})), LayerSpec::batchnorm(),
              LayerSpec::relu()};
  s.uv_stem = {LayerSpec::conv(uv_out, 1, 1, pick({3, 5})), LayerSpec::batchnorm(),
               LayerSpec::relu()};
  int in = y_out + uv_out;
  for (int stage = 0; stage < 5; ++stage) {
    int out = pick({2, 4, 6, 8});
    std::vector<int> divisors;
    for (int g = 1; g <= in; ++g)
      if (in % g == 0 && out % g == 0) divisors.push_back(g);
    int g = divisors[(size_t)rng.below(divisors.size())];
    LayerSpec conv = LayerSpec::conv(out, 2, g, pick({3, 5}));
    conv.bias = rng.below(2) == 0;
    s.trunk.push_back(conv);
    s.trunk.push_back(LayerSpec::batchnorm());
    s.trunk.push_back(LayerSpec::relu());
    if (g > 1 && rng.below(2) == 0) s.trunk.push_back(LayerSpec::reorder(g));
    in = out;
  }
  s.head = LayerSpec::conv(3, 1, 1, pick({3, 5}));
  return s;
}

}  // namespace

TEST_CASE("single-layer parameter counts match hand-worked examples") {
  // trunk input 3 channels: Conv(3 -> 8, 5x5, groups 1, bias) has
  // 8*3*25 + 8 = 608 parameters
  NetworkSpec a;
  a.name = "a";
  a.y_stem = {LayerSpec::conv(1, 2)};
  a.uv_stem = {LayerSpec::conv(2, 1)};
  a.trunk = {LayerSpec::conv(8, 2, 1), LayerSpec::conv(8, 2, 2), LayerSpec::conv(8, 2, 4),
             LayerSpec::conv(8, 2, 8), LayerSpec::conv(16, 2, 2)};
  a.head = LayerSpec::conv(3, 1);
  CostReport ra = analyze_spec(a, 128, 128);
  CHECK(find_layer(ra, "trunk", 0).params_trainable == 608);

  // Conv(4 -> 8, 5x5, groups 2, bias): 8*(4/2)*25 + 8 = 408
  NetworkSpec b = a;
  b.y_stem = {LayerSpec::conv(2, 2)};
  b.uv_stem = {LayerSpec::conv(2, 1)};
  b.trunk[0] = LayerSpec::conv(8, 2, 2);
  CostReport rb = analyze_spec(b, 128, 128);
  CHECK(find_layer(rb, "trunk", 0).params_trainable == 408);

  // without bias the 8 constant terms drop out
  NetworkSpec c = b;
  c.trunk[0].bias = false;
  CHECK(find_layer(analyze_spec(c, 128, 128), "trunk", 0).params_trainable == 400);
}

TEST_CASE("single-layer MAC count matches the hand-worked example") {
  // Conv(3 -> 8, 5x5, stride 2, pad 2) over 64x64 input: out 32x32,
  // 32*32*8*3*25 = 614,400 MACs
  NetworkSpec a;
  a.name = "a";
  a.y_stem = {LayerSpec::conv(1, 2)};
  a.uv_stem = {LayerSpec::conv(2, 1)};
  a.trunk = {LayerSpec::conv(8, 2, 1), LayerSpec::conv(8, 2), LayerSpec::conv(8, 2),
             LayerSpec::conv(8, 2), LayerSpec::conv(8, 2)};
  a.head = LayerSpec::conv(3, 1);
  CostReport r = analyze_spec(a, 128, 128);  // trunk input is 64x64 after the stems
  const LayerCost& l = find_layer(r, "trunk", 0);
  CHECK(l.macs == 614400);
  // batch-norm, relu and reorder rows cost zero MACs
  NetworkSpec spec = reference_spec("soildnet", "desk");
  for (const LayerCost& row : analyze_spec(spec, 192, 320).layers)
    if (row.kind != "Conv") CHECK(row.macs == 0);
}

TEST_CASE("closed-form counts equal brute-force enumeration on random specs") {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    NetworkSpec spec = random_spec(rng);
    int h = 64 * (int)(1 + rng.below(2)), w = 64 * (int)(1 + rng.below(3));
    long long pt, pa, m;
    brute_force_costs(spec, h, w, pt, pa, m);
    CostReport r = analyze_spec(spec, h, w);
    CHECK(r.params_trainable == pt);
    CHECK(r.params_total == pa);
    CHECK(r.macs == m);
  }
}

TEST_CASE("brute force also pins the reference inference path") {
  for (const std::string& name : reference_names()) {
    NetworkSpec spec = reference_spec(name, "desk");
    long long pt, pa, m;
    brute_force_costs(spec, 192, 320, pt, pa, m);
    CostReport r = analyze_spec(spec, 192, 320);
    CHECK(r.params_trainable == pt);
    CHECK(r.params_total == pa);
    CHECK(r.macs == m);
  }
}

TEST_CASE("analyzer params equal the weights a built network holds") {
  for (const char* name : {"net1", "soildnet"}) {
    NetworkSpec spec = reference_spec(name, "desk");
    Network net = build_network(spec, 4);
    long long held = 0;
    for (const std::vector<double>* arr : net.trainable_arrays()) held += (long long)arr->size();
    CHECK(count_params(spec).first == held);
  }
}

TEST_CASE("grouping divides layer cost and reorders are free") {
  NetworkSpec base;
  base.name = "g";
  base.y_stem = {LayerSpec::conv(4, 2)};
  base.uv_stem = {LayerSpec::conv(4, 1)};
  base.trunk = {LayerSpec::conv(8, 2, 1), LayerSpec::conv(8, 2), LayerSpec::conv(8, 2),
                LayerSpec::conv(8, 2), LayerSpec::conv(8, 2)};
  base.head = LayerSpec::conv(3, 1);

  CostReport g1 = analyze_spec(base, 128, 128);
  base.trunk[0].groups = 2;
  CostReport g2 = analyze_spec(base, 128, 128);
  base.trunk[0].groups = 4;
  CostReport g4 = analyze_spec(base, 128, 128);
  const LayerCost& l1 = find_layer(g1, "trunk", 0);
  const LayerCost& l2 = find_layer(g2, "trunk", 0);
  const LayerCost& l4 = find_layer(g4, "trunk", 0);
  CHECK(l1.macs == 2 * l2.macs);
  CHECK(l2.macs == 2 * l4.macs);
  CHECK(l1.params_trainable - 8 == 2 * (l2.params_trainable - 8));  // bias is group-blind

  // inserting a reorder changes neither count
  base.trunk.insert(base.trunk.begin() + 1, LayerSpec::reorder(4));
  CostReport shuffled = analyze_spec(base, 128, 128);
  CHECK(shuffled.macs == g4.macs);
  CHECK(shuffled.params_trainable == g4.params_trainable);
  CHECK(shuffled.params_total == g4.params_total);
}

TEST_CASE("section rows sum to the report totals") {
  CostReport r = analyze_spec(reference_spec("soildnet"), 768, 1280);
  long long macs = 0, pt = 0, pa = 0;
  for (const LayerCost& l : r.layers) {
    macs += l.macs;
    pt += l.params_trainable;
    pa += l.params_total;
  }
  CHECK(macs == r.macs);
  CHECK(pt == r.params_trainable);
  CHECK(pa == r.params_total);
}

TEST_CASE("reference schemes keep the published structural relations") {
  std::map<std::string, CostReport> reps;
  for (const std::string& name : reference_names())
    reps.emplace(name, analyze_spec(reference_spec(name), 768, 1280));

  // static-group twins: reordering costs nothing
  CHECK(reps.at("net2").params_trainable == reps.at("net3").params_trainable);
  CHECK(reps.at("net2").macs == reps.at("net3").macs);
  CHECK(reps.at("net4").params_trainable == reps.at("soildnet").params_trainable);
  CHECK(reps.at("net4").macs == reps.at("soildnet").macs);

  // strict ordering: dynamic schedule < static groups < ungrouped
  CHECK(reps.at("net4").params_trainable < reps.at("net2").params_trainable);
  CHECK(reps.at("net2").params_trainable < reps.at("net1").params_trainable);
  CHECK(reps.at("net4").macs < reps.at("net2").macs);
  CHECK(reps.at("net2").macs < reps.at("net1").macs);
  CHECK(reps.at("net4").params_total < reps.at("net2").params_total);
  CHECK(reps.at("net2").params_total < reps.at("net1").params_total);
}

TEST_CASE("model size is linear in parameters plus a header") {
  NetworkSpec spec = reference_spec("soildnet", "desk");
  long long f32 = model_size(spec, Precision::Float32);
  long long f16 = model_size(spec, Precision::Fixed16);
  CHECK(f32 - kModelHeaderBytes == 2 * (f16 - kModelHeaderBytes));
  CHECK(f32 == count_params(spec).second * 4 + kModelHeaderBytes);
  CHECK(model_size(reference_spec("net1", "desk"), Precision::Float32) > f32);
}

TEST_CASE("published cost rows render the quoted ratios") {
  // externally quoted counts for the ungrouped baseline and the dynamic net
  std::vector<SchemeCost> rows = {
      {"net1", 4.203, 900849, 900849, 3569.0},
      {"soildnet", 0.6672, 87601, 87601, 478.0},
  };
  ComparisonTable t = compare_costs(rows);
  std::vector<std::string> lines = t.ratio_lines();
  REQUIRE(lines.size() == 3);
  CHECK(lines[0].find("9.72%") != std::string::npos);
  CHECK(lines[1].find("7.5x smaller") != std::string::npos);
  CHECK(lines[2].find("6.30x fewer MACs") != std::string::npos);

  std::string csv = t.render_csv();
  CHECK(csv.find("network,gmacs,params_trainable,params_total,size_kb") == 0);
  CHECK(csv.find("net1,4.2030,900849,900849,3569.0") != std::string::npos);
  CHECK(csv.find("soildnet,0.6672,87601,87601,478.0") != std::string::npos);

  std::string table = t.render_table();
  CHECK(table.find("Network") != std::string::npos);
  CHECK(table.find("GMACS") != std::string::npos);
  CHECK(table.find("soildnet") != std::string::npos);
}

TEST_CASE("a scheme compared against itself reports unit ratios") {
  ComparisonTable t = compare_schemes(
      {reference_spec("soildnet", "desk"), reference_spec("soildnet", "desk")}, 192, 320,
      Precision::Fixed16);
  std::vector<std::string> lines = t.ratio_lines();
  REQUIRE(lines.size() == 3);
  CHECK(lines[0].find("100.00%") != std::string::npos);
  CHECK(lines[1].find("1.0x") != std::string::npos);
  CHECK(t.rows[0].gmacs == t.rows[1].gmacs);
  CHECK_THROWS_AS(compare_schemes({reference_spec("net1")}, 768, 1280, Precision::Float32),
                  std::invalid_argument);
}

TEST_CASE("csv rows reparse to the table values") {
  ComparisonTable t = compare_schemes({reference_spec("net1", "desk"),
                                       reference_spec("soildnet", "desk")},
                                      192, 320, Precision::Float32);
  std::istringstream in(t.render_csv());
  std::string line;
  std::getline(in, line);  // header
  for (const SchemeCost& row : t.rows) {
    REQUIRE(std::getline(in, line));
    std::istringstream cells(line);
    std::string name, gmacs, pt, pa, kb;
    std::getline(cells, name, ',');
    std::getline(cells, gmacs, ',');
    std::getline(cells, pt, ',');
    std::getline(cells, pa, ',');
    std::getline(cells, kb, ',');
    CHECK(name == row.name);
    CHECK(std::stod(gmacs) == doctest::Approx(row.gmacs).epsilon(1e-4));
    CHECK(std::stoll(pt) == row.params_trainable);
    CHECK(std::stoll(pa) == row.params_total);
    CHECK(std::stod(kb) == doctest::Approx(row.size_kb).epsilon(1e-3));
  }
}
