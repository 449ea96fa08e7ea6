#pragma once

#include <string>
#include <utility>
#include <vector>

#include "soildnet/netspec.hpp"

namespace soildnet {

enum class Precision { Float32, Fixed16 };

// Serialized models carry a fixed-size header in front of the raw parameter
// payload; absolute sizes below include it.
constexpr long long kModelHeaderBytes = 64;

struct LayerCost {
  std::string section;
  int index = 0;
  std::string kind;
  long long macs = 0;
  long long params_trainable = 0;
  long long params_total = 0;  // batch-norm running stats included
};

struct CostReport {
  std::string network;
  int input_h = 0, input_w = 0;
  std::vector<LayerCost> layers;
  long long macs = 0;
  long long params_trainable = 0;
  long long params_total = 0;

  double gmacs() const { return static_cast<double>(macs) / 1e9; }
  long long model_bytes(Precision p) const {
    return params_total * (p == Precision::Float32 ? 4 : 2) + kModelHeaderBytes;
  }
  double model_kb(Precision p) const { return static_cast<double>(model_bytes(p)) / 1024.0; }
};

CostReport analyze_spec(const NetworkSpec& spec, int y_h, int y_w);
std::pair<long long, long long> count_params(const NetworkSpec& spec);  // (trainable, total)
long long count_macs(const NetworkSpec& spec, int y_h, int y_w);
long long model_size(const NetworkSpec& spec, Precision p);

// One comparison row. Costs normally come from analyze_spec, but rows can be
// built directly from externally published counts to check ratio arithmetic.
struct SchemeCost {
  std::string name;
  double gmacs = 0;
  long long params_trainable = 0;
  long long params_total = 0;
  double size_kb = 0;
};
SchemeCost scheme_cost(const CostReport& report, Precision p);

struct ComparisonTable {
  std::vector<SchemeCost> rows;
  // Aligned text table and CSV, both in the column order
  // network, gmacs, params, size.
  std::string render_table() const;
  std::string render_csv() const;
  // Ratios of every row against rows[0]: trainable-parameter percentage,
  // model-size factor, MAC factor.
  std::vector<std::string> ratio_lines() const;
};

ComparisonTable compare_schemes(const std::vector<NetworkSpec>& specs, int y_h, int y_w,
                                Precision p);
ComparisonTable compare_costs(const std::vector<SchemeCost>& rows);

}  // namespace soildnet
