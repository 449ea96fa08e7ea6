#include "soildnet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace soildnet {

namespace {

uint8_t clamp_byte(double v) {
  long r = std::lround(v);
  return static_cast<uint8_t>(std::clamp(r, 0L, 255L));
}

void require_tile_aligned(int width, int height) {
  if (width <= 0 || height <= 0 || width % kTileSize != 0 || height % kTileSize != 0)
    throw std::invalid_argument(
        strf("frame %dx%d is not divisible by the %d-pixel tile", width, height, kTileSize));
}

}  // namespace

Yuv420Frame::Yuv420Frame(int w, int h) : width(w), height(h) {
  if (w <= 0 || h <= 0 || w % 2 != 0 || h % 2 != 0)
    throw std::invalid_argument(strf("yuv420 dims %dx%d must be positive and even", w, h));
  y.assign(static_cast<size_t>(w) * h, 0);
  u.assign(static_cast<size_t>(w / 2) * (h / 2), 128);
  v.assign(static_cast<size_t>(w / 2) * (h / 2), 128);
}

void Yuv420Frame::validate() const {
  if (width <= 0 || height <= 0 || width % 2 != 0 || height % 2 != 0)
    throw std::invalid_argument(strf("yuv420 dims %dx%d must be positive and even", width, height));
  size_t luma = static_cast<size_t>(width) * height;
  size_t chroma = static_cast<size_t>(width / 2) * (height / 2);
  if (y.size() != luma || u.size() != chroma || v.size() != chroma)
    throw std::invalid_argument(strf("yuv420 plane lengths %zu/%zu/%zu do not match %dx%d",
                                     y.size(), u.size(), v.size(), width, height));
}

std::vector<uint8_t> Yuv420Frame::to_bytes() const {
  validate();
  std::vector<uint8_t> out;
  out.reserve(y.size() + u.size() + v.size());
  out.insert(out.end(), y.begin(), y.end());
  out.insert(out.end(), u.begin(), u.end());
  out.insert(out.end(), v.begin(), v.end());
  return out;
}

Yuv420Frame Yuv420Frame::from_bytes(int width, int height, const std::vector<uint8_t>& bytes) {
  Yuv420Frame f(width, height);
  size_t luma = f.y.size(), chroma = f.u.size();
  if (bytes.size() != luma + 2 * chroma)
    throw std::invalid_argument(
        strf("yuv420 payload of %zu bytes does not match %dx%d", bytes.size(), width, height));
  std::copy(bytes.begin(), bytes.begin() + luma, f.y.begin());
  std::copy(bytes.begin() + luma, bytes.begin() + luma + chroma, f.u.begin());
  std::copy(bytes.begin() + luma + chroma, bytes.end(), f.v.begin());
  return f;
}

Yuv420Frame rgb_to_yuv420(const RgbImage& rgb) {
  Yuv420Frame f(rgb.width, rgb.height);
  // full-resolution chroma kept real-valued until after the box average
  std::vector<double> uf(static_cast<size_t>(rgb.width) * rgb.height);
  std::vector<double> vf(uf.size());
  for (int yy = 0; yy < rgb.height; ++yy)
    for (int x = 0; x < rgb.width; ++x) {
      double r = rgb.at(x, yy, 0), g = rgb.at(x, yy, 1), b = rgb.at(x, yy, 2);
      f.y[static_cast<size_t>(yy) * rgb.width + x] =
          clamp_byte(0.299 * r + 0.587 * g + 0.114 * b);
      size_t p = static_cast<size_t>(yy) * rgb.width + x;
      uf[p] = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0;
      vf[p] = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0;
    }
  int cw = rgb.width / 2, ch = rgb.height / 2;
  for (int cy = 0; cy < ch; ++cy)
    for (int cx = 0; cx < cw; ++cx) {
      size_t base = static_cast<size_t>(2 * cy) * rgb.width + 2 * cx;
      double us = uf[base] + uf[base + 1] + uf[base + rgb.width] + uf[base + rgb.width + 1];
      double vs = vf[base] + vf[base + 1] + vf[base + rgb.width] + vf[base + rgb.width + 1];
      f.u[static_cast<size_t>(cy) * cw + cx] = clamp_byte(us / 4.0);
      f.v[static_cast<size_t>(cy) * cw + cx] = clamp_byte(vs / 4.0);
    }
  return f;
}

RgbImage yuv420_to_rgb(const Yuv420Frame& frame) {
  frame.validate();
  RgbImage rgb(frame.width, frame.height);
  int cw = frame.width / 2;
  for (int yy = 0; yy < frame.height; ++yy)
    for (int x = 0; x < frame.width; ++x) {
      double Y = frame.y[static_cast<size_t>(yy) * frame.width + x];
      size_t cp = static_cast<size_t>(yy / 2) * cw + x / 2;
      double U = frame.u[cp] - 128.0, V = frame.v[cp] - 128.0;
      rgb.at(x, yy, 0) = clamp_byte(Y + 1.402 * V);
      rgb.at(x, yy, 1) = clamp_byte(Y - 0.344136 * U - 0.714136 * V);
      rgb.at(x, yy, 2) = clamp_byte(Y + 1.772 * U);
    }
  return rgb;
}

namespace {

// separable box blur, clamped borders
void box_blur(std::vector<double>& img, int width, int height, int radius) {
  std::vector<double> tmp(img.size());
  double norm = 1.0 / (2 * radius + 1);
  for (int c = 0; c < 3; ++c) {
    for (int yy = 0; yy < height; ++yy)
      for (int x = 0; x < width; ++x) {
        double acc = 0;
        for (int d = -radius; d <= radius; ++d)
          acc += img[(static_cast<size_t>(yy) * width + std::clamp(x + d, 0, width - 1)) * 3 + c];
        tmp[(static_cast<size_t>(yy) * width + x) * 3 + c] = acc * norm;
      }
    for (int yy = 0; yy < height; ++yy)
      for (int x = 0; x < width; ++x) {
        double acc = 0;
        for (int d = -radius; d <= radius; ++d)
          acc += tmp[(static_cast<size_t>(std::clamp(yy + d, 0, height - 1)) * width + x) * 3 + c];
        img[(static_cast<size_t>(yy) * width + x) * 3 + c] = acc * norm;
      }
  }
}

}  // namespace

Scene generate_scene(uint64_t seed, int width, int height, const SceneParams& params) {
  require_tile_aligned(width, height);
  Rng rng(seed);
  Scene scene;
  scene.rgb = RgbImage(width, height);
  scene.mask = ClassMask(width, height);

  // clean base: two low-frequency sinusoids per channel
  double amp[3][2], fx[3][2], fy[3][2], ph[3][2];
  for (int c = 0; c < 3; ++c)
    for (int k = 0; k < 2; ++k) {
      amp[c][k] = rng.uniform(20.0, 45.0);
      double cycles = rng.uniform(0.5, 2.5);
      double angle = rng.uniform(0.0, 6.283185307179586);
      fx[c][k] = 6.283185307179586 * cycles * std::cos(angle) / width;
      fy[c][k] = 6.283185307179586 * cycles * std::sin(angle) / height;
      ph[c][k] = rng.uniform(0.0, 6.283185307179586);
    }
  std::vector<double> base(static_cast<size_t>(width) * height * 3);
  for (int yy = 0; yy < height; ++yy)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = 128.0;
        for (int k = 0; k < 2; ++k) v += amp[c][k] * std::sin(fx[c][k] * x + fy[c][k] * yy + ph[c][k]);
        base[(static_cast<size_t>(yy) * width + x) * 3 + c] = v;
      }

  // scattered solid shapes give the clean content hard edges; density matters,
  // a transparent smear is only visible where there is structure to smear
  int shapes = 7 + static_cast<int>(rng.below(7));
  for (int s = 0; s < shapes; ++s) {
    double col[3] = {rng.uniform(30.0, 225.0), rng.uniform(30.0, 225.0), rng.uniform(30.0, 225.0)};
    int cx = static_cast<int>(rng.below(static_cast<uint64_t>(width)));
    int cy = static_cast<int>(rng.below(static_cast<uint64_t>(height)));
    int rx = 8 + static_cast<int>(rng.below(static_cast<uint64_t>(width / 4)));
    int ry = 8 + static_cast<int>(rng.below(static_cast<uint64_t>(height / 4)));
    bool ellipse = rng.below(2) == 0;
    for (int yy = std::max(0, cy - ry); yy <= std::min(height - 1, cy + ry); ++yy)
      for (int x = std::max(0, cx - rx); x <= std::min(width - 1, cx + rx); ++x) {
        if (ellipse) {
          double nx = double(x - cx) / rx, ny = double(yy - cy) / ry;
          if (nx * nx + ny * ny > 1.0) continue;
        }
        for (int c = 0; c < 3; ++c) base[(static_cast<size_t>(yy) * width + x) * 3 + c] = col[c];
      }
  }

  bool soiled = rng.uniform01() < params.overlay_probability;
  if (soiled) {
    // what a transparent smear shows: heavily blurred, fully desaturated clean
    // content with a haze lift; killing chroma makes the smear readable in the
    // UV planes even where the luma is locally flat
    std::vector<double> hazy = base;
    box_blur(hazy, width, height, 12);
    for (size_t p = 0; p < hazy.size(); p += 3) {
      double luma = 0.299 * hazy[p] + 0.587 * hazy[p + 1] + 0.114 * hazy[p + 2];
      for (int c = 0; c < 3; ++c) hazy[p + c] = luma + 18.0;
    }

    int blobs = params.min_blobs +
                static_cast<int>(rng.below(static_cast<uint64_t>(params.max_blobs - params.min_blobs + 1)));
    double scale = std::min(width, height);
    for (int bl = 0; bl < blobs; ++bl) {
      bool opaque = rng.uniform01() < params.opaque_fraction;
      double cx = rng.uniform(0.0, double(width));
      double cy = rng.uniform(0.0, double(height));
      double r0 = rng.uniform(params.min_radius_frac, params.max_radius_frac) * scale;
      double wobble_k = 2 + static_cast<double>(rng.below(4));
      double wobble_ph = rng.uniform(0.0, 6.283185307179586);
      bool dark = rng.below(2) == 0;
      double col[3];
      if (dark) {
        double g = rng.uniform(25.0, 60.0);
        col[0] = col[1] = col[2] = g;
      } else {  // dried-mud ochre
        col[0] = rng.uniform(140.0, 175.0);
        col[1] = rng.uniform(95.0, 125.0);
        col[2] = rng.uniform(30.0, 60.0);
      }
      double rmax = r0 * 1.3;
      int x0 = std::max(0, static_cast<int>(std::floor(cx - rmax)));
      int x1 = std::min(width - 1, static_cast<int>(std::ceil(cx + rmax)));
      int y0 = std::max(0, static_cast<int>(std::floor(cy - rmax)));
      int y1 = std::min(height - 1, static_cast<int>(std::ceil(cy + rmax)));
      for (int yy = y0; yy <= y1; ++yy)
        for (int x = x0; x <= x1; ++x) {
          double dx = x - cx, dy = yy - cy;
          double dist = std::sqrt(dx * dx + dy * dy);
          double theta = std::atan2(dy, dx);
          double edge = r0 * (1.0 + 0.3 * std::sin(wobble_k * theta + wobble_ph));
          if (dist > edge) continue;
          size_t p = (static_cast<size_t>(yy) * width + x) * 3;
          if (opaque) {
            // flat fill with faint grain keeps the in-blob variance low
            for (int c = 0; c < 3; ++c) base[p + c] = col[c] + rng.uniform(-4.0, 4.0);
            scene.mask.at(x, yy) = uint8_t(SoilClass::Opaque);
          } else {
            for (int c = 0; c < 3; ++c) base[p + c] = 0.2 * base[p + c] + 0.8 * hazy[p + c];
            scene.mask.at(x, yy) = uint8_t(SoilClass::Transparent);
          }
        }
    }
  }

  for (size_t p = 0; p < base.size(); ++p) scene.rgb.data[p] = clamp_byte(base[p]);
  return scene;
}

TileLabelGrid label_tiles(const ClassMask& mask, int tile) {
  if (tile <= 0 || mask.width % tile != 0 || mask.height % tile != 0)
    throw std::invalid_argument(
        strf("mask %dx%d is not divisible by tile %d", mask.width, mask.height, tile));
  TileLabelGrid grid(mask.height / tile, mask.width / tile);
  for (int tr = 0; tr < grid.rows; ++tr)
    for (int tc = 0; tc < grid.cols; ++tc) {
      long long counts[kNumClasses] = {0, 0, 0};
      for (int yy = tr * tile; yy < (tr + 1) * tile; ++yy)
        for (int x = tc * tile; x < (tc + 1) * tile; ++x) ++counts[mask.at(x, yy)];
      // plurality, ties broken Opaque > Transparent > Clean
      SoilClass best = SoilClass::Opaque;
      if (counts[int(SoilClass::Transparent)] > counts[int(best)]) best = SoilClass::Transparent;
      if (counts[int(SoilClass::Clean)] > counts[int(best)]) best = SoilClass::Clean;
      grid.at(tr, tc) = best;
    }
  return grid;
}

DatasetConfig DatasetConfig::with_total(int samples) {
  if (samples < 1) throw std::invalid_argument("dataset needs at least one sample");
  DatasetConfig cfg;
  const char* tags[4] = {"FV", "RV", "MVL", "MVR"};
  int base = samples / 4, extra = samples % 4;
  for (int i = 0; i < 4; ++i) {
    int n = base + (i < extra ? 1 : 0);
    if (n > 0) cfg.camera_counts.emplace_back(tags[i], n);
  }
  return cfg;
}

namespace {

nlohmann::json tally_json(const std::vector<std::pair<std::string, ClassTally>>& tallies) {
  nlohmann::json obj = nlohmann::json::object();
  for (const auto& [tag, tally] : tallies)
    obj[tag] = {tally.counts[0], tally.counts[1], tally.counts[2]};
  return obj;
}

std::vector<std::pair<std::string, ClassTally>> parse_tallies(const nlohmann::json& obj) {
  std::vector<std::pair<std::string, ClassTally>> out;
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    ClassTally t;
    if (!it.value().is_array() || it.value().size() != kNumClasses)
      throw std::invalid_argument("manifest: tally must list three class counts");
    for (int c = 0; c < kNumClasses; ++c) t.counts[c] = it.value()[c].get<long long>();
    out.emplace_back(it.key(), t);
  }
  return out;
}

}  // namespace

std::string DatasetManifest::to_text() const {
  nlohmann::json j;
  j["width"] = width;
  j["height"] = height;
  j["seed"] = seed;
  j["clean_bias"] = clean_bias;
  nlohmann::json list = nlohmann::json::array();
  for (const ManifestEntry& e : entries)
    list.push_back({{"id", e.id},
                    {"frame", e.frame_path},
                    {"label", e.label_path},
                    {"split", e.split},
                    {"camera", e.camera}});
  j["entries"] = std::move(list);
  j["camera_tallies"] = tally_json(camera_tallies);
  j["split_tallies"] = tally_json(split_tallies);
  return j.dump() + "\n";
}

DatasetManifest DatasetManifest::parse(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw std::invalid_argument("manifest: invalid JSON");
  DatasetManifest m;
  try {
    m.width = j.at("width").get<int>();
    m.height = j.at("height").get<int>();
    m.seed = j.at("seed").get<uint64_t>();
    m.clean_bias = j.at("clean_bias").get<double>();
    for (const auto& e : j.at("entries")) {
      ManifestEntry entry;
      entry.id = e.at("id").get<std::string>();
      entry.frame_path = e.at("frame").get<std::string>();
      entry.label_path = e.at("label").get<std::string>();
      entry.split = e.at("split").get<std::string>();
      entry.camera = e.at("camera").get<std::string>();
      m.entries.push_back(std::move(entry));
    }
    m.camera_tallies = parse_tallies(j.at("camera_tallies"));
    m.split_tallies = parse_tallies(j.at("split_tallies"));
  } catch (const nlohmann::json::exception& ex) {
    throw std::invalid_argument(strf("manifest: %s", ex.what()));
  }
  for (const ManifestEntry& e : m.entries)
    if (e.split != "train" && e.split != "val" && e.split != "test")
      throw std::invalid_argument(strf("manifest: unknown split '%s'", e.split.c_str()));
  return m;
}

DatasetManifest build_dataset(const DatasetConfig& cfg, const std::string& root) {
  if (cfg.camera_counts.empty()) throw std::invalid_argument("dataset: no camera counts given");
  long long total = 0;
  for (const auto& [tag, count] : cfg.camera_counts) {
    if (count < 1) throw std::invalid_argument(strf("dataset: camera %s count must be >= 1", tag.c_str()));
    total += count;
  }
  if (cfg.clean_bias < 0.0 || cfg.clean_bias > 1.0)
    throw std::invalid_argument("dataset: clean bias must lie in [0, 1]");
  if (cfg.train_frac < 0.0 || cfg.val_frac < 0.0 || cfg.train_frac + cfg.val_frac > 1.0)
    throw std::invalid_argument("dataset: split fractions must be nonnegative and sum to <= 1");
  require_tile_aligned(cfg.width, cfg.height);

  namespace fs = std::filesystem;
  fs::create_directories(fs::path(root) / "frames");
  fs::create_directories(fs::path(root) / "labels");

  std::vector<std::string> camera(total);
  {
    size_t i = 0;
    for (const auto& [tag, count] : cfg.camera_counts)
      for (int k = 0; k < count; ++k) camera[i++] = tag;
  }

  // exact clean count, assignment and splits by independent seeded shuffles
  std::vector<size_t> order(total);
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<bool> clean(total, false);
  {
    std::vector<size_t> pick = order;
    Rng rng(hash_seed(cfg.seed, 0xC1EA9));
    rng.shuffle(pick);
    auto n_clean = static_cast<size_t>(std::llround(cfg.clean_bias * static_cast<double>(total)));
    for (size_t i = 0; i < n_clean && i < pick.size(); ++i) clean[pick[i]] = true;
  }
  std::vector<std::string> split(total);
  {
    std::vector<size_t> pick = order;
    Rng rng(hash_seed(cfg.seed, 0x59717));
    rng.shuffle(pick);
    auto n_train = static_cast<size_t>(std::llround(cfg.train_frac * static_cast<double>(total)));
    auto n_val = static_cast<size_t>(std::llround(cfg.val_frac * static_cast<double>(total)));
    for (size_t i = 0; i < pick.size(); ++i)
      split[pick[i]] = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
  }

  DatasetManifest manifest;
  manifest.width = cfg.width;
  manifest.height = cfg.height;
  manifest.seed = cfg.seed;
  manifest.clean_bias = cfg.clean_bias;
  for (const auto& [tag, count] : cfg.camera_counts) {
    (void)count;
    manifest.camera_tallies.emplace_back(tag, ClassTally{});
  }
  for (const char* tag : {"train", "val", "test"}) manifest.split_tallies.emplace_back(tag, ClassTally{});

  auto tally_for = [](std::vector<std::pair<std::string, ClassTally>>& tallies,
                      const std::string& tag) -> ClassTally& {
    for (auto& [t, tally] : tallies)
      if (t == tag) return tally;
    throw std::logic_error("tally tag missing");
  };

  for (long long i = 0; i < total; ++i) {
    SceneParams params = cfg.scene;
    params.overlay_probability = clean[i] ? 0.0 : 1.0;
    Scene scene = generate_scene(hash_seed(cfg.seed, static_cast<uint64_t>(2 * i)), cfg.width,
                                 cfg.height, params);
    Yuv420Frame frame = rgb_to_yuv420(scene.rgb);
    TileLabelGrid grid = label_tiles(scene.mask);

    ManifestEntry entry;
    entry.id = strf("%06lld", i);
    entry.frame_path = "frames/" + entry.id + ".yuv";
    entry.label_path = "labels/" + entry.id + ".txt";
    entry.split = split[i];
    entry.camera = camera[i];

    std::vector<uint8_t> bytes = frame.to_bytes();
    write_file_bytes((fs::path(root) / entry.frame_path).string(), bytes.data(), bytes.size());
    write_label_grid((fs::path(root) / entry.label_path).string(), grid);

    ClassTally& cam = tally_for(manifest.camera_tallies, entry.camera);
    ClassTally& spl = tally_for(manifest.split_tallies, entry.split);
    for (SoilClass label : grid.labels) {
      ++cam.counts[int(label)];
      ++spl.counts[int(label)];
    }
    manifest.entries.push_back(std::move(entry));
  }

  write_file_text((fs::path(root) / "manifest").string(), manifest.to_text());
  return manifest;
}

DatasetManifest load_manifest(const std::string& root) {
  return DatasetManifest::parse(read_file_text(root + "/manifest"));
}

std::vector<ManifestEntry> split_entries(const DatasetManifest& manifest,
                                         const std::string& split) {
  if (split != "train" && split != "val" && split != "test")
    throw std::invalid_argument(strf("unknown split '%s'", split.c_str()));
  std::vector<ManifestEntry> out;
  for (const ManifestEntry& e : manifest.entries)
    if (e.split == split) out.push_back(e);
  return out;
}

TileLabelGrid read_label_grid(const std::string& path) {
  std::istringstream in(read_file_text(path));
  std::vector<std::vector<int>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream cells(line);
    std::vector<int> row;
    int v;
    while (cells >> v) row.push_back(v);
    if (!cells.eof()) throw std::invalid_argument(strf("label grid %s: non-integer cell", path.c_str()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::invalid_argument(strf("label grid %s is empty", path.c_str()));
  TileLabelGrid grid(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
  for (size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows[0].size())
      throw std::invalid_argument(strf("label grid %s: ragged row %zu", path.c_str(), r));
    for (size_t c = 0; c < rows[r].size(); ++c) {
      if (rows[r][c] < 0 || rows[r][c] >= kNumClasses)
        throw std::invalid_argument(
            strf("label grid %s: class %d outside {0,1,2}", path.c_str(), rows[r][c]));
      grid.at(static_cast<int>(r), static_cast<int>(c)) = SoilClass(rows[r][c]);
    }
  }
  return grid;
}

void write_label_grid(const std::string& path, const TileLabelGrid& grid) {
  std::string out;
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      if (c) out += ' ';
      out += std::to_string(int(grid.at(r, c)));
    }
    out += '\n';
  }
  write_file_text(path, out);
}

void fill_batch_slot(Tensor4& y, Tensor4& uv, int b, const Yuv420Frame& frame) {
  frame.validate();
  if (y.channels != 1 || uv.channels != 2 || y.height != frame.height || y.width != frame.width ||
      uv.height != frame.height / 2 || uv.width != frame.width / 2)
    throw std::invalid_argument(strf("batch tensors %s/%s do not fit a %dx%d frame",
                                     y.shape_str().c_str(), uv.shape_str().c_str(), frame.width,
                                     frame.height));
  if (b < 0 || b >= y.batch || y.batch != uv.batch)
    throw std::invalid_argument("batch slot out of range");
  size_t luma = frame.y.size(), chroma = frame.u.size();
  double* yd = y.data.data() + y.index(b, 0, 0, 0);
  for (size_t i = 0; i < luma; ++i) yd[i] = frame.y[i] / 255.0;
  double* ud = uv.data.data() + uv.index(b, 0, 0, 0);
  double* vd = uv.data.data() + uv.index(b, 1, 0, 0);
  for (size_t i = 0; i < chroma; ++i) {
    ud[i] = frame.u[i] / 255.0;
    vd[i] = frame.v[i] / 255.0;
  }
}

}  // namespace soildnet
