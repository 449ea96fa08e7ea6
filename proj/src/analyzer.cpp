#include "soildnet/analyzer.hpp"

#include <algorithm>
#include <array>

#include "soildnet/util.hpp"

namespace soildnet {

CostReport analyze_spec(const NetworkSpec& spec, int y_h, int y_w) {
  CostReport rep;
  rep.network = spec.name;
  rep.input_h = y_h;
  rep.input_w = y_w;
  for (const LayerPlacement& p : walk_spec(spec, y_h, y_w)) {
    LayerCost c;
    c.section = p.section;
    c.index = p.index;
    c.kind = layer_kind_name(p.layer.kind);
    if (p.layer.kind == LayerKind::Conv) {
      long long icpg = p.in_channels / p.layer.groups;
      long long weights = static_cast<long long>(p.layer.out_channels) * icpg * p.layer.kernel *
                          p.layer.kernel;
      c.params_trainable = weights + (p.layer.bias ? p.layer.out_channels : 0);
      c.params_total = c.params_trainable;
      c.macs = static_cast<long long>(p.out_h) * p.out_w * p.layer.out_channels * icpg *
               p.layer.kernel * p.layer.kernel;
    } else if (p.layer.kind == LayerKind::BatchNorm) {
      c.params_trainable = 2LL * p.in_channels;   // gamma, beta
      c.params_total = 4LL * p.in_channels;       // plus running mean/var
      c.macs = 0;
    }
    rep.macs += c.macs;
    rep.params_trainable += c.params_trainable;
    rep.params_total += c.params_total;
    rep.layers.push_back(std::move(c));
  }
  return rep;
}

std::pair<long long, long long> count_params(const NetworkSpec& spec) {
  CostReport r = analyze_spec(spec, 12 * kTileSize, 20 * kTileSize);
  return {r.params_trainable, r.params_total};
}

long long count_macs(const NetworkSpec& spec, int y_h, int y_w) {
  return analyze_spec(spec, y_h, y_w).macs;
}

long long model_size(const NetworkSpec& spec, Precision p) {
  return analyze_spec(spec, 12 * kTileSize, 20 * kTileSize).model_bytes(p);
}

SchemeCost scheme_cost(const CostReport& report, Precision p) {
  SchemeCost c;
  c.name = report.network;
  c.gmacs = report.gmacs();
  c.params_trainable = report.params_trainable;
  c.params_total = report.params_total;
  c.size_kb = report.model_kb(p);
  return c;
}

std::string ComparisonTable::render_table() const {
  const char* headers[] = {"Network", "GMACS", "Params (trainable)", "Params (total)",
                           "Size (KB)"};
  std::vector<std::array<std::string, 5>> cells;
  for (const SchemeCost& r : rows)
    cells.push_back({r.name, strf("%.4f", r.gmacs), strf("%lld", r.params_trainable),
                     strf("%lld", r.params_total), strf("%.1f", r.size_kb)});
  size_t width[5];
  for (int c = 0; c < 5; ++c) {
    width[c] = std::string(headers[c]).size();
    for (const auto& row : cells) width[c] = std::max(width[c], row[c].size());
  }
  std::string out;
  auto emit = [&](const std::array<std::string, 5>& row) {
    for (int c = 0; c < 5; ++c) {
      out += strf("%-*s", static_cast<int>(width[c]), row[c].c_str());
      out += (c == 4) ? "\n" : "  ";
    }
  };
  emit({headers[0], headers[1], headers[2], headers[3], headers[4]});
  std::string rule;
  for (int c = 0; c < 5; ++c) {
    rule += std::string(width[c], '-');
    rule += (c == 4) ? "\n" : "  ";
  }
  out += rule;
  for (const auto& row : cells) emit(row);
  return out;
}

std::string ComparisonTable::render_csv() const {
  std::string out = "network,gmacs,params_trainable,params_total,size_kb\n";
  for (const SchemeCost& r : rows)
    out += strf("%s,%.4f,%lld,%lld,%.1f\n", r.name.c_str(), r.gmacs, r.params_trainable,
                r.params_total, r.size_kb);
  return out;
}

std::vector<std::string> ComparisonTable::ratio_lines() const {
  std::vector<std::string> lines;
  if (rows.size() < 2) return lines;
  const SchemeCost& base = rows[0];
  for (size_t i = 1; i < rows.size(); ++i) {
    const SchemeCost& r = rows[i];
    lines.push_back(strf("%s uses %.2f%% of %s trainable parameters",
                         r.name.c_str(),
                         100.0 * static_cast<double>(r.params_trainable) /
                             static_cast<double>(base.params_trainable),
                         base.name.c_str()));
    lines.push_back(strf("%s model is %.1fx smaller than %s", r.name.c_str(),
                         base.size_kb / r.size_kb, base.name.c_str()));
    lines.push_back(strf("%s needs %.2fx fewer MACs than %s", r.name.c_str(),
                         base.gmacs / r.gmacs, base.name.c_str()));
  }
  return lines;
}

ComparisonTable compare_schemes(const std::vector<NetworkSpec>& specs, int y_h, int y_w,
                                Precision p) {
  if (specs.size() < 2)
    throw std::invalid_argument("compare_schemes needs at least two specs");
  ComparisonTable t;
  for (const NetworkSpec& s : specs) t.rows.push_back(scheme_cost(analyze_spec(s, y_h, y_w), p));
  return t;
}

ComparisonTable compare_costs(const std::vector<SchemeCost>& rows) {
  if (rows.size() < 2)
    throw std::invalid_argument("compare_costs needs at least two rows");
  ComparisonTable t;
  t.rows = rows;
  return t;
}

}  // namespace soildnet
