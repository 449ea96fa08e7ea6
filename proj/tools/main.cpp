#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "soildnet/analyzer.hpp"
#include "soildnet/quantize.hpp"
#include "soildnet/traineval.hpp"

namespace fs = std::filesystem;
using namespace soildnet;

namespace {

bool is_reference(const std::string& name) {
  for (const std::string& n : reference_names())
    if (n == name) return true;
  return false;
}

NetworkSpec resolve_spec(const std::string& arg, const std::string& scale) {
  if (is_reference(arg)) return reference_spec(arg, scale);
  if (!fs::exists(arg))
    throw std::invalid_argument(
        strf("unknown spec '%s': neither a reference name nor a file", arg.c_str()));
  NetworkSpec spec = parse_spec(read_file_text(arg));
  validate_spec(spec);
  return spec;
}

// SOILDNET_OUT overrides the default artifact root.
std::string default_out() {
  const char* env = std::getenv("SOILDNET_OUT");
  return env && *env ? env : ".";
}

std::pair<int, int> parse_hw(const std::string& s) {
  const size_t x = s.find('x');
  size_t hp = 0, wp = 0;
  int h = 0, w = 0;
  try {
    h = std::stoi(s.substr(0, x), &hp);
    w = std::stoi(s.substr(x + 1), &wp);
  } catch (const std::exception&) {
    hp = std::string::npos;
  }
  if (x == std::string::npos || hp != x || wp != s.size() - x - 1 || h < 1 || w < 1)
    throw std::invalid_argument(strf("--input-hw wants HxW like 768x1280, got '%s'", s.c_str()));
  return {h, w};
}

std::string artifact(const std::string& out, const std::string& name) {
  fs::create_directories(out);
  return (fs::path(out) / name).string();
}

struct AnalyzeArgs {
  std::vector<std::string> specs;
  std::string input_hw = "768x1280";
  std::string format = "table";
  std::string scale = "full";
  std::string precision = "f32";
  bool strict = false;
};

void cmd_analyze(const AnalyzeArgs& a) {
  auto [h, w] = parse_hw(a.input_hw);
  const Precision prec = a.precision == "f16" ? Precision::Fixed16 : Precision::Float32;
  std::vector<NetworkSpec> specs;
  std::string first_rule;
  for (const std::string& name : a.specs) {
    NetworkSpec spec = resolve_spec(name, a.scale);
    LintReport lint = lint_embedded(spec);
    if (!lint.clean()) {
      fputs(lint.to_string().c_str(), stderr);
      if (first_rule.empty()) first_rule = lint.findings.front().rule;
    }
    specs.push_back(std::move(spec));
  }
  if (a.strict && !first_rule.empty())
    throw std::invalid_argument(strf("lint violations under --strict (%s)", first_rule.c_str()));

  ComparisonTable table;
  if (specs.size() >= 2) {
    table = compare_schemes(specs, h, w, prec);
  } else {
    table.rows.push_back(scheme_cost(analyze_spec(specs[0], h, w), prec));
  }
  if (a.format == "csv") {
    fputs(table.render_csv().c_str(), stdout);
  } else {
    fputs(table.render_table().c_str(), stdout);
    for (const std::string& line : table.ratio_lines()) printf("%s\n", line.c_str());
  }
}

struct GenArgs {
  int samples = 0;
  double clean_bias = 0.3;
  uint64_t seed = 42;
  int width = 320, height = 192;
  std::string out = default_out();
};

void cmd_gen_data(const GenArgs& g) {
  DatasetConfig cfg = DatasetConfig::with_total(g.samples);
  cfg.clean_bias = g.clean_bias;
  cfg.seed = g.seed;
  cfg.width = g.width;
  cfg.height = g.height;
  fs::create_directories(g.out);
  DatasetManifest m = build_dataset(cfg, g.out);

  printf("generated %zu samples at %dx%d (seed %llu, clean bias %.3f) into %s\n",
         m.entries.size(), m.width, m.height, (unsigned long long)m.seed, m.clean_bias,
         g.out.c_str());
  auto frames_with = [&](const std::string& key, bool by_camera) {
    long long n = 0;
    for (const ManifestEntry& e : m.entries)
      if ((by_camera ? e.camera : e.split) == key) ++n;
    return n;
  };
  auto section = [&](const char* title,
                     const std::vector<std::pair<std::string, ClassTally>>& tallies,
                     bool by_camera) {
    printf("%-7s %7s %8s %8s %12s\n", title, "frames", "clean", "opaque", "transparent");
    for (const auto& [tag, tally] : tallies)
      printf("%-7s %7lld %8lld %8lld %12lld\n", tag.c_str(), frames_with(tag, by_camera),
             tally.counts[0], tally.counts[1], tally.counts[2]);
  };
  section("camera", m.camera_tallies, true);
  section("split", m.split_tallies, false);
}

struct TrainArgs {
  std::string spec = "soildnet";
  std::string data;
  std::string scale = "desk";
  std::string out = default_out();
  TrainConfig cfg;
};

void cmd_train(const TrainArgs& t) {
  NetworkSpec spec = resolve_spec(t.spec, t.scale);
  TrainResult r = train(spec, t.data, t.cfg);
  write_file_text(artifact(t.out, "train_log.csv"), train_log_csv(r.log, t.cfg.seed));
  save_checkpoint(r.final_net, artifact(t.out, "checkpoint.bin"));
  save_checkpoint(r.best_net, artifact(t.out, "best.bin"));
  const EpochRecord& last = r.log.back();
  printf("trained %s for %d epochs: loss %.6f, accuracy %.4f\n", spec.name.c_str(),
         last.epoch, last.loss, last.categorical_accuracy);
  if (r.best_val_accuracy)
    printf("best validation accuracy %.4f at epoch %d\n", *r.best_val_accuracy, r.best_epoch);
  else
    printf("no validation split; best checkpoint mirrors the final one\n");
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  std::string out = default_out();
  int overlays = 0;
  int batch = 16;
};

void cmd_eval(const EvalArgs& e) {
  Network net = load_checkpoint(e.checkpoint);
  EvalResult res = evaluate(net, e.data, e.split, e.batch);
  const std::string seed_line = strf("# seed=%llu\n", (unsigned long long)net.seed);
  write_file_text(artifact(e.out, "metrics_per_class.csv"),
                  seed_line + per_class_csv(net.spec.name, res.per_class));
  write_file_text(artifact(e.out, "metrics_avg.csv"),
                  seed_line + averaged_csv(net.spec.name, average_metrics(res.per_class)));
  printf("%s on %s: accuracy %.4f (majority baseline %.4f, %lld tiles)\n",
         net.spec.name.c_str(), e.split.c_str(), accuracy(res.confusion),
         majority_baseline(e.data, e.split), res.confusion.total);

  if (e.overlays > 0) {
    DatasetManifest m = load_manifest(e.data);
    std::vector<ManifestEntry> entries = split_entries(m, e.split);
    const int n = std::min<int>(e.overlays, int(entries.size()));
    for (int i = 0; i < n; ++i) {
      Yuv420Frame frame = Yuv420Frame::from_bytes(
          m.width, m.height, read_file_bytes(e.data + "/" + entries[i].frame_path));
      TileLabelGrid pred = predict_tiles(net, frame);
      TileLabelGrid truth = read_label_grid(e.data + "/" + entries[i].label_path);
      RgbImage img =
          side_by_side(render_grid_overlay(frame, pred), render_grid_overlay(frame, truth));
      write_ppm(artifact(e.out, strf("overlay_%03d.ppm", i)), img,
                strf("seed=%llu prediction|truth %s", (unsigned long long)net.seed,
                     entries[i].id.c_str()));
    }
    printf("wrote %d overlay pixmaps to %s\n", n, e.out.c_str());
  }
}

struct QuantArgs {
  std::string checkpoint;
  std::string data;
  std::string out = default_out();
  std::string calib_split = "train";
  std::string measure_split = "test";
  int calib = 128;
  int frames = 64;
  int batch = 16;
};

void cmd_quantize(const QuantArgs& q) {
  Network net = load_checkpoint(q.checkpoint);
  FoldedNetwork folded = fold_network(net);
  CalibrationStats stats = calibrate(folded, q.data, q.calib_split, q.calib, q.batch);
  QuantizedNetwork qnet = quantize_network(net, stats);
  save_quantized(artifact(q.out, "model.q16"), qnet);
  QuantReport report = measure_quantized(qnet, folded, q.data, q.measure_split, q.frames, q.batch);
  write_file_text(artifact(q.out, "quant_report.csv"),
                  strf("# seed=%llu\n", (unsigned long long)net.seed) + quant_report_csv(report));
  printf("tile argmax agreement on %s: %.6f (max logit error %.3e)\n", q.measure_split.c_str(),
         report.argmax_agreement(), report.logit_max_abs_err);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tile-level camera soiling toolkit"};
  app.require_subcommand(1);

  AnalyzeArgs aa;
  CLI::App* a = app.add_subcommand("analyze", "cost and lint report for network schemes");
  a->add_option("specs", aa.specs, "reference names or spec files")->required();
  a->add_option("--input-hw", aa.input_hw, "Y-plane size as HxW (default 768x1280)");
  a->add_option("--format", aa.format, "table or csv")
      ->check(CLI::IsMember({"table", "csv"}));
  a->add_option("--scale", aa.scale, "reference scale")->check(CLI::IsMember({"full", "desk"}));
  a->add_option("--precision", aa.precision, "size column precision")
      ->check(CLI::IsMember({"f32", "f16"}));
  a->add_flag("--strict", aa.strict, "exit 2 on any lint finding");

  GenArgs ga;
  CLI::App* g = app.add_subcommand("gen-data", "synthesize a labeled dataset");
  g->add_option("--samples", ga.samples, "total frame count")->required();
  g->add_option("--clean-bias", ga.clean_bias, "exact fraction of all-clean frames");
  g->add_option("--seed", ga.seed, "dataset seed");
  g->add_option("--width", ga.width, "frame width (multiple of 64)");
  g->add_option("--height", ga.height, "frame height (multiple of 64)");
  g->add_option("--out", ga.out, "dataset root");

  TrainArgs ta;
  CLI::App* t = app.add_subcommand("train", "train a scheme on a dataset");
  t->add_option("--spec", ta.spec, "reference name or spec file");
  t->add_option("--data", ta.data, "dataset root")->required();
  t->add_option("--scale", ta.scale, "reference scale")->check(CLI::IsMember({"full", "desk"}));
  t->add_option("--epochs", ta.cfg.epochs, "training epochs");
  t->add_option("--batch", ta.cfg.batch_size, "batch size");
  t->add_option("--lr", ta.cfg.learning_rate, "initial learning rate");
  t->add_option("--seed", ta.cfg.seed, "init and shuffle seed");
  t->add_flag("--step-decay", ta.cfg.step_decay, "decay lr 10x after 2/3 of the epochs");
  t->add_option("--out", ta.out, "artifact directory");

  EvalArgs ea;
  CLI::App* e = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  e->add_option("--checkpoint", ea.checkpoint, "checkpoint file")->required();
  e->add_option("--data", ea.data, "dataset root")->required();
  e->add_option("--split", ea.split, "train, val or test");
  e->add_option("--overlays", ea.overlays, "prediction-vs-truth pixmaps to write");
  e->add_option("--batch", ea.batch, "evaluation batch size");
  e->add_option("--out", ea.out, "artifact directory");

  QuantArgs qa;
  CLI::App* q = app.add_subcommand("quantize", "fold, calibrate and fix-point a checkpoint");
  q->add_option("--checkpoint", qa.checkpoint, "checkpoint file")->required();
  q->add_option("--data", qa.data, "dataset root")->required();
  q->add_option("--calib", qa.calib, "calibration frame budget");
  q->add_option("--calib-split", qa.calib_split, "calibration split");
  q->add_option("--measure-split", qa.measure_split, "agreement measurement split");
  q->add_option("--frames", qa.frames, "measurement frame budget");
  q->add_option("--batch", qa.batch, "batch size");
  q->add_option("--out", qa.out, "artifact directory");

  a->callback([&] { cmd_analyze(aa); });
  g->callback([&] { cmd_gen_data(ga); });
  t->callback([&] { cmd_train(ta); });
  e->callback([&] { cmd_eval(ea); });
  q->callback([&] { cmd_quantize(qa); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  } catch (const std::invalid_argument& err) {
    fprintf(stderr, "error: %s\n", err.what());
    return 2;
  } catch (const std::exception& err) {
    fprintf(stderr, "error: %s\n", err.what());
    return 1;
  }
  return 0;
}
