#pragma once

#include <optional>
#include <string>
#include <vector>

#include "soildnet/network.hpp"
#include "soildnet/synth.hpp"

namespace soildnet {

struct TrainConfig {
  int batch_size = 16;
  int epochs = 50;
  double learning_rate = 0.001;
  double beta1 = 0.9, beta2 = 0.999, adam_epsilon = 1e-8;
  uint64_t seed = 42;
  bool step_decay = false;  // off by default; on: lr x0.1 after 2/3 of the epochs
};

struct AdamState {
  std::vector<std::vector<double>> m, v;  // parallel to Network::trainable_arrays
  long long t = 0;
};

AdamState adam_init(Network& net);
// One bias-corrected update; a zero gradient with zero moments is a no-op.
void adam_step(const std::vector<std::vector<double>*>& params,
               const std::vector<std::vector<double>*>& grads, AdamState& state,
               double learning_rate, const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double loss = 0.0;
  double categorical_accuracy = 0.0;              // per-tile, training split
  std::optional<double> val_accuracy;             // absent when the val split is empty
};

struct TrainResult {
  Network final_net;
  Network best_net;  // highest validation accuracy (final_net when no val split)
  int best_epoch = 0;
  std::optional<double> best_val_accuracy;
  std::vector<EpochRecord> log;
};

// Deterministic given the seed: fixed init, per-epoch shuffles drawn from
// hash_seed(seed, epoch). Throws on a non-finite loss, naming the epoch.
TrainResult train(const NetworkSpec& spec, const std::string& data_root, const TrainConfig& cfg);

struct ClassCounts {
  long long tp = 0, fp = 0, tn = 0, fn = 0;
};
struct ConfusionSet {
  ClassCounts cls[kNumClasses];
  long long total = 0, correct = 0;
};

struct MetricsRow {
  std::optional<double> tpr, tnr, fpr, fnr, fdr;
};
struct MetricsTable {
  MetricsRow per_class[kNumClasses];
};

// One-vs-rest rates; zero denominators stay undefined, never 0/0 = 0.
MetricsRow metrics_from_counts(const ClassCounts& c);
MetricsTable compute_metrics(const ConfusionSet& confusion);
// Unweighted mean over the three classes; any undefined cell poisons it.
MetricsRow average_metrics(const MetricsTable& table);

double accuracy(const ConfusionSet& confusion);
// Tile share of the most common class in a split's labels.
double majority_baseline(const std::string& data_root, const std::string& split);

struct EvalResult {
  ConfusionSet confusion;
  MetricsTable per_class;
};
EvalResult evaluate(Network& net, const std::string& data_root, const std::string& split,
                    int batch_size = 16);

std::string format_metric(const std::optional<double>& v);  // "%.4f" or an em dash
std::string per_class_csv(const std::string& network, const MetricsTable& table);
std::string averaged_csv(const std::string& network, const MetricsRow& row);
std::string train_log_csv(const std::vector<EpochRecord>& log, uint64_t seed);

TileLabelGrid predict_tiles(Network& net, const Yuv420Frame& frame);

// Overlay rendering: 40% tint toward Clean (0,255,0), Opaque (0,255,255),
// Transparent (0,0,255), 1-pixel tile borders.
RgbImage render_grid_overlay(const Yuv420Frame& frame, const TileLabelGrid& grid);
RgbImage side_by_side(const RgbImage& left, const RgbImage& right, int gutter = 8);
void write_ppm(const std::string& path, const RgbImage& image, const std::string& comment = "");

}  // namespace soildnet
