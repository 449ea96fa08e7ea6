#include "soildnet/traineval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace soildnet {

namespace {

struct LoadedSet {
  std::vector<Yuv420Frame> frames;
  std::vector<TileLabelGrid> labels;
  int width = 0, height = 0;
};

LoadedSet load_split(const std::string& root, const DatasetManifest& manifest,
                     const std::string& split) {
  LoadedSet set;
  set.width = manifest.width;
  set.height = manifest.height;
  for (const ManifestEntry& e : split_entries(manifest, split)) {
    std::vector<uint8_t> bytes = read_file_bytes(root + "/" + e.frame_path);
    set.frames.push_back(Yuv420Frame::from_bytes(manifest.width, manifest.height, bytes));
    TileLabelGrid grid = read_label_grid(root + "/" + e.label_path);
    if (grid.rows != manifest.height / kTileSize || grid.cols != manifest.width / kTileSize)
      throw std::invalid_argument(strf("label grid %s does not match %dx%d frames",
                                       e.label_path.c_str(), manifest.width, manifest.height));
    set.labels.push_back(std::move(grid));
  }
  return set;
}

int argmax3(const Tensor4& logits, int b, int r, int c) {
  int best = 0;
  for (int k = 1; k < kNumClasses; ++k)
    if (logits.at(b, k, r, c) > logits.at(b, best, r, c)) best = k;
  return best;
}

// Accumulates one-vs-rest counts for every tile of a batch.
void tally_batch(const Tensor4& logits, const std::vector<TileLabelGrid>& labels,
                 ConfusionSet& confusion) {
  for (int b = 0; b < logits.batch; ++b)
    for (int r = 0; r < logits.height; ++r)
      for (int c = 0; c < logits.width; ++c) {
        int pred = argmax3(logits, b, r, c);
        int truth = int(labels[static_cast<size_t>(b)].at(r, c));
        ++confusion.total;
        if (pred == truth) ++confusion.correct;
        for (int k = 0; k < kNumClasses; ++k) {
          bool is_pred = pred == k, is_truth = truth == k;
          if (is_pred && is_truth) ++confusion.cls[k].tp;
          else if (is_pred) ++confusion.cls[k].fp;
          else if (is_truth) ++confusion.cls[k].fn;
          else ++confusion.cls[k].tn;
        }
      }
}

ConfusionSet confusion_over(Network& net, const LoadedSet& set, int batch_size) {
  ConfusionSet confusion;
  size_t n = set.frames.size();
  for (size_t start = 0; start < n; start += static_cast<size_t>(batch_size)) {
    size_t count = std::min(n - start, static_cast<size_t>(batch_size));
    Tensor4 y(static_cast<int>(count), 1, set.height, set.width);
    Tensor4 uv(static_cast<int>(count), 2, set.height / 2, set.width / 2);
    std::vector<TileLabelGrid> labels(count);
    for (size_t i = 0; i < count; ++i) {
      fill_batch_slot(y, uv, static_cast<int>(i), set.frames[start + i]);
      labels[i] = set.labels[start + i];
    }
    Tensor4 logits = forward_tiles(net, y, uv, false);
    tally_batch(logits, labels, confusion);
  }
  return confusion;
}

}  // namespace

AdamState adam_init(Network& net) {
  AdamState state;
  for (const std::vector<double>* arr : net.trainable_arrays()) {
    state.m.emplace_back(arr->size(), 0.0);
    state.v.emplace_back(arr->size(), 0.0);
  }
  return state;
}

void adam_step(const std::vector<std::vector<double>*>& params,
               const std::vector<std::vector<double>*>& grads, AdamState& state,
               double learning_rate, const TrainConfig& cfg) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw std::invalid_argument("adam_step: mismatched parameter and state lists");
  state.t += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (size_t a = 0; a < params.size(); ++a) {
    std::vector<double>& p = *params[a];
    const std::vector<double>& g = *grads[a];
    if (p.size() != g.size() || p.size() != state.m[a].size())
      throw std::invalid_argument("adam_step: mismatched array lengths");
    for (size_t i = 0; i < p.size(); ++i) {
      double& m = state.m[a][i];
      double& v = state.v[a][i];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g[i];
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g[i] * g[i];
      p[i] -= learning_rate * (m / bc1) / (std::sqrt(v / bc2) + cfg.adam_epsilon);
    }
  }
}

TrainResult train(const NetworkSpec& spec, const std::string& data_root, const TrainConfig& cfg) {
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (cfg.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (cfg.learning_rate < 0.0) throw std::invalid_argument("train: learning rate must be >= 0");

  DatasetManifest manifest = load_manifest(data_root);
  LoadedSet train_set = load_split(data_root, manifest, "train");
  LoadedSet val_set = load_split(data_root, manifest, "val");
  if (train_set.frames.empty()) throw std::invalid_argument("train: train split is empty");

  TrainResult result;
  result.final_net = build_network(spec, cfg.seed);
  Network& net = result.final_net;
  AdamState adam = adam_init(net);
  std::vector<std::vector<double>*> params = net.trainable_arrays();

  double best = -1.0;
  std::vector<size_t> order(train_set.frames.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle_rng(hash_seed(cfg.seed, 0xE90C0000ull + static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    double lr = cfg.learning_rate;
    if (cfg.step_decay && epoch > (2 * cfg.epochs) / 3) lr *= 0.1;

    double loss_sum = 0.0;
    long long tiles = 0, correct = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      size_t count = std::min(order.size() - start, static_cast<size_t>(cfg.batch_size));
      Tensor4 y(static_cast<int>(count), 1, train_set.height, train_set.width);
      Tensor4 uv(static_cast<int>(count), 2, train_set.height / 2, train_set.width / 2);
      std::vector<TileLabelGrid> labels(count);
      for (size_t i = 0; i < count; ++i) {
        fill_batch_slot(y, uv, static_cast<int>(i), train_set.frames[order[start + i]]);
        labels[i] = train_set.labels[order[start + i]];
      }

      ForwardTrace trace = forward_tiles_trace(net, y, uv, true);
      SoftmaxCeResult ce = softmax_ce_per_tile(trace.logits, labels);
      if (!std::isfinite(ce.loss))
        throw std::runtime_error(strf("training diverged at epoch %d: non-finite loss", epoch));

      long long batch_tiles =
          static_cast<long long>(count) * trace.logits.height * trace.logits.width;
      loss_sum += ce.loss * static_cast<double>(batch_tiles);
      tiles += batch_tiles;
      for (int b = 0; b < trace.logits.batch; ++b)
        for (int r = 0; r < trace.logits.height; ++r)
          for (int c = 0; c < trace.logits.width; ++c)
            if (argmax3(trace.logits, b, r, c) == int(labels[static_cast<size_t>(b)].at(r, c)))
              ++correct;

      NetworkGrads grads = backward_tiles(net, trace, ce.grad_logits);
      std::vector<std::vector<double>*> gslots = grad_arrays(net, grads);
      adam_step(params, gslots, adam, lr, cfg);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(tiles);
    rec.categorical_accuracy = static_cast<double>(correct) / static_cast<double>(tiles);
    if (!val_set.frames.empty()) {
      ConfusionSet confusion = confusion_over(net, val_set, cfg.batch_size);
      rec.val_accuracy = accuracy(confusion);
      if (*rec.val_accuracy > best) {
        best = *rec.val_accuracy;
        result.best_net = net;
        result.best_epoch = epoch;
        result.best_val_accuracy = rec.val_accuracy;
      }
    }
    result.log.push_back(rec);
  }

  if (val_set.frames.empty()) {
    result.best_net = net;
    result.best_epoch = cfg.epochs;
  }
  return result;
}

MetricsRow metrics_from_counts(const ClassCounts& c) {
  MetricsRow row;
  auto rate = [](long long num, long long den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  row.tpr = rate(c.tp, c.tp + c.fn);
  row.tnr = rate(c.tn, c.tn + c.fp);
  row.fpr = rate(c.fp, c.fp + c.tn);
  row.fnr = rate(c.fn, c.fn + c.tp);
  row.fdr = rate(c.fp, c.fp + c.tp);
  return row;
}

MetricsTable compute_metrics(const ConfusionSet& confusion) {
  MetricsTable table;
  for (int k = 0; k < kNumClasses; ++k) table.per_class[k] = metrics_from_counts(confusion.cls[k]);
  return table;
}

MetricsRow average_metrics(const MetricsTable& table) {
  MetricsRow avg;
  auto mean = [&](std::optional<double> MetricsRow::*field) -> std::optional<double> {
    double sum = 0.0;
    for (int k = 0; k < kNumClasses; ++k) {
      const std::optional<double>& v = table.per_class[k].*field;
      if (!v) return std::nullopt;  // an undefined class metric poisons the average
      sum += *v;
    }
    return sum / kNumClasses;
  };
  avg.tpr = mean(&MetricsRow::tpr);
  avg.tnr = mean(&MetricsRow::tnr);
  avg.fpr = mean(&MetricsRow::fpr);
  avg.fnr = mean(&MetricsRow::fnr);
  avg.fdr = mean(&MetricsRow::fdr);
  return avg;
}

double accuracy(const ConfusionSet& confusion) {
  if (confusion.total == 0) throw std::invalid_argument("accuracy: no tiles evaluated");
  return static_cast<double>(confusion.correct) / static_cast<double>(confusion.total);
}

double majority_baseline(const std::string& data_root, const std::string& split) {
  DatasetManifest manifest = load_manifest(data_root);
  long long counts[kNumClasses] = {0, 0, 0};
  for (const ManifestEntry& e : split_entries(manifest, split)) {
    TileLabelGrid grid = read_label_grid(data_root + "/" + e.label_path);
    for (SoilClass l : grid.labels) ++counts[int(l)];
  }
  long long total = counts[0] + counts[1] + counts[2];
  if (total == 0) throw std::invalid_argument(strf("split '%s' is empty", split.c_str()));
  return static_cast<double>(std::max({counts[0], counts[1], counts[2]})) /
         static_cast<double>(total);
}

EvalResult evaluate(Network& net, const std::string& data_root, const std::string& split,
                    int batch_size) {
  if (batch_size < 1) throw std::invalid_argument("evaluate: batch_size must be >= 1");
  DatasetManifest manifest = load_manifest(data_root);
  LoadedSet set = load_split(data_root, manifest, split);
  if (set.frames.empty()) throw std::invalid_argument(strf("split '%s' is empty", split.c_str()));
  EvalResult result;
  result.confusion = confusion_over(net, set, batch_size);
  result.per_class = compute_metrics(result.confusion);
  return result;
}

std::string format_metric(const std::optional<double>& v) {
  if (!v) return "—";
  return strf("%.4f", *v);
}

std::string per_class_csv(const std::string& network, const MetricsTable& table) {
  std::string out = "network,class,tpr,tnr,fpr,fnr,fdr\n";
  for (int k = 0; k < kNumClasses; ++k) {
    const MetricsRow& r = table.per_class[k];
    out += strf("%s,%s,%s,%s,%s,%s,%s\n", network.c_str(), soil_class_name(SoilClass(k)),
                format_metric(r.tpr).c_str(), format_metric(r.tnr).c_str(),
                format_metric(r.fpr).c_str(), format_metric(r.fnr).c_str(),
                format_metric(r.fdr).c_str());
  }
  return out;
}

std::string averaged_csv(const std::string& network, const MetricsRow& row) {
  std::string out = "network,tpr,tnr,fpr,fnr,fdr\n";
  out += strf("%s,%s,%s,%s,%s,%s\n", network.c_str(), format_metric(row.tpr).c_str(),
              format_metric(row.tnr).c_str(), format_metric(row.fpr).c_str(),
              format_metric(row.fnr).c_str(), format_metric(row.fdr).c_str());
  return out;
}

std::string train_log_csv(const std::vector<EpochRecord>& log, uint64_t seed) {
  std::string out = strf("# seed=%llu\n", static_cast<unsigned long long>(seed));
  out += "epoch,loss,categorical_accuracy,val_accuracy\n";
  for (const EpochRecord& r : log)
    out += strf("%d,%.6f,%.4f,%s\n", r.epoch, r.loss, r.categorical_accuracy,
                format_metric(r.val_accuracy).c_str());
  return out;
}

TileLabelGrid predict_tiles(Network& net, const Yuv420Frame& frame) {
  Tensor4 y(1, 1, frame.height, frame.width);
  Tensor4 uv(1, 2, frame.height / 2, frame.width / 2);
  fill_batch_slot(y, uv, 0, frame);
  Tensor4 logits = forward_tiles(net, y, uv, false);
  TileLabelGrid grid(logits.height, logits.width);
  for (int r = 0; r < logits.height; ++r)
    for (int c = 0; c < logits.width; ++c) grid.at(r, c) = SoilClass(argmax3(logits, 0, r, c));
  return grid;
}

RgbImage render_grid_overlay(const Yuv420Frame& frame, const TileLabelGrid& grid) {
  if (grid.rows != frame.height / kTileSize || grid.cols != frame.width / kTileSize)
    throw std::invalid_argument(strf("grid %dx%d does not cover a %dx%d frame", grid.rows,
                                     grid.cols, frame.width, frame.height));
  static const uint8_t kClassColor[kNumClasses][3] = {
      {0, 255, 0},    // Clean: green
      {0, 255, 255},  // Opaque: cyan
      {0, 0, 255},    // Transparent: blue
  };
  RgbImage img = yuv420_to_rgb(frame);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const uint8_t* color = kClassColor[int(grid.at(y / kTileSize, x / kTileSize))];
      for (int c = 0; c < 3; ++c) {
        double tinted = 0.6 * img.at(x, y, c) + 0.4 * color[c];
        img.at(x, y, c) = static_cast<uint8_t>(std::lround(tinted));
      }
      bool border = x % kTileSize == 0 || y % kTileSize == 0 || x == img.width - 1 ||
                    y == img.height - 1;
      if (border)
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = 0;
    }
  return img;
}

RgbImage side_by_side(const RgbImage& left, const RgbImage& right, int gutter) {
  if (left.height != right.height || gutter < 0)
    throw std::invalid_argument("side_by_side: heights must match");
  RgbImage out(left.width + gutter + right.width, left.height);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < 3; ++c) {
        if (x < left.width) out.at(x, y, c) = left.at(x, y, c);
        else if (x < left.width + gutter) out.at(x, y, c) = 128;
        else out.at(x, y, c) = right.at(x - left.width - gutter, y, c);
      }
  return out;
}

void write_ppm(const std::string& path, const RgbImage& image, const std::string& comment) {
  if (comment.find('\n') != std::string::npos)
    throw std::invalid_argument("ppm comment must be a single line");
  std::string header = "P6\n";
  if (!comment.empty()) header += "# " + comment + "\n";
  header += strf("%d %d\n255\n", image.width, image.height);
  std::vector<uint8_t> bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), image.data.begin(), image.data.end());
  write_file_bytes(path, bytes.data(), bytes.size());
}

}  // namespace soildnet
