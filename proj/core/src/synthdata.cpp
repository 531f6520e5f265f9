#include "vldet/synthdata.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "vldet/rng.hpp"

namespace vldet {

namespace {

struct PaletteColor {
  const char* name;
  double rgb[3];
};

constexpr PaletteColor kPalette[8] = {
    {"red", {0.85, 0.10, 0.10}},    {"green", {0.10, 0.75, 0.15}},
    {"blue", {0.10, 0.20, 0.85}},   {"yellow", {0.90, 0.85, 0.10}},
    {"purple", {0.55, 0.15, 0.80}}, {"orange", {0.95, 0.55, 0.10}},
    {"cyan", {0.10, 0.80, 0.80}},   {"magenta", {0.90, 0.15, 0.70}},
};

constexpr const char* kShapeNames[4] = {"circle", "square", "triangle",
                                        "diamond"};

constexpr double kBackgroundGray = 0.5;
constexpr double kMaxGtIou = 0.3;
constexpr std::size_t kMinSide = 12;
constexpr std::size_t kMaxSide = 40;
constexpr std::size_t kPlaceAttempts = 100;

bool inside_shape(std::size_t shape_idx, const Box& b, double x, double y) {
  const double cx = b.cx();
  const double cy = b.cy();
  const double rx = 0.5 * b.w();
  const double ry = 0.5 * b.h();
  switch (shape_idx) {
    case 0:  // circle (rx == ry by construction)
      return (x - cx) * (x - cx) + (y - cy) * (y - cy) <= rx * rx;
    case 1:  // square
      return true;
    case 2: {  // triangle: apex top-center, base along the bottom edge
      // Left edge (cx, y1)->(x1, y2), right edge (cx, y1)->(x2, y2).
      const double t = (y - b.y1) / b.h();
      const double half = t * rx;
      return x >= cx - half && x <= cx + half;
    }
    default:  // diamond
      return std::abs(x - cx) / rx + std::abs(y - cy) / ry <= 1.0;
  }
}

std::string pad_index(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%06zu", prefix, i);
  return buf;
}

nlohmann::json vocab_to_json(const Vocabulary& v) {
  return {{"colors", v.colors},
          {"shapes", v.shapes},
          {"class_names", v.class_names},
          {"base_ids", v.base_ids},
          {"novel_ids", v.novel_ids}};
}

Vocabulary vocab_from_json(const nlohmann::json& j) {
  Vocabulary v;
  v.colors = j.at("colors").get<std::vector<std::string>>();
  v.shapes = j.at("shapes").get<std::vector<std::string>>();
  v.class_names = j.at("class_names").get<std::vector<std::string>>();
  v.base_ids = j.at("base_ids").get<std::vector<std::size_t>>();
  v.novel_ids = j.at("novel_ids").get<std::vector<std::size_t>>();
  return v;
}

}  // namespace

std::size_t max_palette_colors() { return 8; }
std::size_t max_palette_shapes() { return 4; }

Vocabulary build_vocabulary(std::size_t n_colors, std::size_t n_shapes,
                            std::size_t n_novel, std::uint64_t seed) {
  if (n_colors < 1 || n_colors > max_palette_colors()) {
    throw std::invalid_argument("build_vocabulary: colors must be 1.." +
                                std::to_string(max_palette_colors()));
  }
  if (n_shapes < 1 || n_shapes > max_palette_shapes()) {
    throw std::invalid_argument("build_vocabulary: shapes must be 1.." +
                                std::to_string(max_palette_shapes()));
  }
  const std::size_t total = n_colors * n_shapes;
  const std::size_t cover = std::max(n_colors, n_shapes);
  if (total - std::min(n_novel, total) < cover || n_novel >= total) {
    throw std::invalid_argument(
        "build_vocabulary: holding out " + std::to_string(n_novel) + " of " +
        std::to_string(total) +
        " classes cannot keep every color and shape in a base class");
  }
  Vocabulary v;
  for (std::size_t c = 0; c < n_colors; ++c) v.colors.push_back(kPalette[c].name);
  for (std::size_t s = 0; s < n_shapes; ++s) v.shapes.push_back(kShapeNames[s]);
  for (std::size_t c = 0; c < n_colors; ++c) {
    for (std::size_t s = 0; s < n_shapes; ++s) {
      v.class_names.push_back(v.colors[c] + " " + v.shapes[s]);
    }
  }
  // A fixed transversal of size max(colors, shapes) covers every primitive;
  // novel classes are drawn from outside it so coverage can never break.
  std::vector<bool> protected_combo(total, false);
  for (std::size_t i = 0; i < cover; ++i) {
    protected_combo[(i % n_colors) * n_shapes + (i % n_shapes)] = true;
  }
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < total; ++i) {
    if (!protected_combo[i]) candidates.push_back(i + 1);
  }
  Rng rng(derive_seed(seed, 0x56C4Bull));
  rng.shuffle(candidates);
  v.novel_ids.assign(candidates.begin(),
                     candidates.begin() + static_cast<long>(n_novel));
  std::sort(v.novel_ids.begin(), v.novel_ids.end());
  std::vector<bool> is_novel(total + 1, false);
  for (std::size_t id : v.novel_ids) is_novel[id] = true;
  for (std::size_t id = 1; id <= total; ++id) {
    if (!is_novel[id]) v.base_ids.push_back(id);
  }
  return v;
}

SceneRecord render_scene(const Vocabulary& vocab,
                         const std::vector<std::size_t>& allowed_ids,
                         std::uint64_t scene_seed, const Config& cfg) {
  if (allowed_ids.empty()) {
    throw std::invalid_argument("render_scene: no allowed class ids");
  }
  const std::size_t n_shapes = vocab.shapes.size();
  const std::size_t h = cfg.image_h;
  const std::size_t w = cfg.image_w;
  const std::size_t hi_side = std::min(kMaxSide, std::min(h, w) - 2);
  if (hi_side < kMinSide) {
    throw std::invalid_argument("render_scene: image too small for objects");
  }
  Rng rng(scene_seed);

  std::vector<bool> color_seen(vocab.colors.size(), false);
  std::size_t distinct_colors = 0;
  for (std::size_t id : allowed_ids) {
    if (id == 0 || id > vocab.class_names.size()) {
      throw std::invalid_argument("render_scene: class id out of range");
    }
    const std::size_t c = (id - 1) / n_shapes;
    if (!color_seen[c]) {
      color_seen[c] = true;
      ++distinct_colors;
    }
  }
  const std::size_t k_max =
      std::min<std::size_t>(4, std::min(distinct_colors, allowed_ids.size()));
  const std::size_t k = 1 + rng.uniform_int(k_max);

  std::vector<std::size_t> pool = allowed_ids;
  rng.shuffle(pool);
  std::vector<std::size_t> picked;
  std::fill(color_seen.begin(), color_seen.end(), false);
  for (std::size_t id : pool) {
    const std::size_t c = (id - 1) / n_shapes;
    if (color_seen[c]) continue;
    color_seen[c] = true;
    picked.push_back(id);
    if (picked.size() == k) break;
  }

  SceneRecord rec;
  rec.image = Tensor::full({h, w, 3}, kBackgroundGray);
  std::string caption = "a picture of";
  for (std::size_t oi = 0; oi < picked.size(); ++oi) {
    const std::size_t id = picked[oi];
    const std::size_t color_idx = (id - 1) / n_shapes;
    const std::size_t shape_idx = (id - 1) % n_shapes;
    const std::size_t bw = kMinSide + rng.uniform_int(hi_side - kMinSide + 1);
    const std::size_t bh = shape_idx <= 1
                               ? bw
                               : kMinSide + rng.uniform_int(hi_side - kMinSide + 1);
    Box box;
    bool placed = false;
    for (std::size_t attempt = 0; attempt < kPlaceAttempts; ++attempt) {
      const std::size_t x1 = rng.uniform_int(w - bw + 1);
      const std::size_t y1 = rng.uniform_int(h - bh + 1);
      box = {static_cast<double>(x1), static_cast<double>(y1),
             static_cast<double>(x1 + bw), static_cast<double>(y1 + bh)};
      placed = true;
      for (const Box& other : rec.boxes) {
        if (iou(box, other) > kMaxGtIou) {
          placed = false;
          break;
        }
      }
      if (placed) break;
    }
    if (!placed) {
      throw std::runtime_error("render_scene: layout rejection after " +
                               std::to_string(kPlaceAttempts) + " attempts");
    }
    const double* rgb = kPalette[color_idx].rgb;
    for (std::size_t py = static_cast<std::size_t>(box.y1);
         py < static_cast<std::size_t>(box.y2); ++py) {
      for (std::size_t px = static_cast<std::size_t>(box.x1);
           px < static_cast<std::size_t>(box.x2); ++px) {
        const double x = static_cast<double>(px) + 0.5;
        const double y = static_cast<double>(py) + 0.5;
        if (!inside_shape(shape_idx, box, x, y)) continue;
        for (std::size_t ch = 0; ch < 3; ++ch) {
          rec.image.at(py, px, ch) = rgb[ch];
        }
      }
    }
    rec.boxes.push_back(box);
    rec.class_ids.push_back(id);
    caption += oi == 0 ? " a " : " and a ";
    caption += vocab.class_names[id - 1];
  }
  rec.caption = caption;
  return rec;
}

std::string generate_dataset(const Vocabulary& vocab,
                             std::size_t train_scenes,
                             std::size_t eval_scenes, std::uint64_t vocab_seed,
                             std::uint64_t data_seed, const Config& cfg,
                             const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "scenes", ec);
  if (ec) {
    throw std::runtime_error("generate_dataset: cannot create '" + out_dir +
                             "': " + ec.message());
  }
  std::vector<std::size_t> all_ids(vocab.class_names.size());
  std::iota(all_ids.begin(), all_ids.end(), 1);

  nlohmann::json scenes_json = nlohmann::json::array();
  nlohmann::json train_ids = nlohmann::json::array();
  nlohmann::json eval_ids = nlohmann::json::array();
  std::ofstream ann(fs::path(out_dir) / "annotations.jsonl",
                    std::ios::binary);
  if (!ann) {
    throw std::runtime_error("generate_dataset: cannot write annotations in '" +
                             out_dir + "'");
  }
  auto emit = [&](const char* prefix, std::size_t index, std::uint64_t salt,
                  const std::vector<std::size_t>& allowed,
                  nlohmann::json& id_list) {
    SceneRecord rec =
        render_scene(vocab, allowed, derive_seed(data_seed, index, salt), cfg);
    rec.scene_id = pad_index(prefix, index);
    const std::string rel = "scenes/" + rec.scene_id + ".vldt";
    save_vldt((fs::path(out_dir) / rel).string(), rec.image);
    nlohmann::json boxes = nlohmann::json::array();
    for (const Box& b : rec.boxes) {
      boxes.push_back({b.x1, b.y1, b.x2, b.y2});
    }
    nlohmann::json line = {{"scene_id", rec.scene_id},
                           {"boxes", boxes},
                           {"class_ids", rec.class_ids},
                           {"caption", rec.caption}};
    ann << line.dump() << "\n";
    scenes_json.push_back({{"id", rec.scene_id}, {"file", rel}});
    id_list.push_back(rec.scene_id);
  };
  for (std::size_t i = 0; i < train_scenes; ++i) {
    emit("train", i, 0, vocab.base_ids, train_ids);
  }
  for (std::size_t i = 0; i < eval_scenes; ++i) {
    emit("eval", i, 1, all_ids, eval_ids);
  }
  ann.close();
  if (!ann) {
    throw std::runtime_error("generate_dataset: annotation write failed");
  }

  nlohmann::json manifest = {
      {"image_h", cfg.image_h},
      {"image_w", cfg.image_w},
      {"vocabulary", vocab_to_json(vocab)},
      {"seeds", {{"vocab", vocab_seed}, {"data", data_seed}}},
      {"splits", {{"train", train_ids}, {"eval", eval_ids}}},
      {"scenes", scenes_json}};
  const std::string text = manifest.dump(2) + "\n";
  std::ofstream mf(fs::path(out_dir) / "manifest.json", std::ios::binary);
  mf << text;
  mf.close();
  if (!mf) {
    throw std::runtime_error("generate_dataset: manifest write failed");
  }
  return text;
}

Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) {
    throw std::runtime_error("load_dataset: cannot open manifest in '" + dir +
                             "'");
  }
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load_dataset: bad manifest.json: " +
                             std::string(e.what()));
  }
  Dataset ds;
  ds.vocab = vocab_from_json(manifest.at("vocabulary"));
  ds.image_h = manifest.at("image_h").get<std::size_t>();
  ds.image_w = manifest.at("image_w").get<std::size_t>();

  std::unordered_map<std::string, std::size_t> index_of;
  for (const auto& entry : manifest.at("scenes")) {
    SceneRecord rec;
    rec.scene_id = entry.at("id").get<std::string>();
    const std::string rel = entry.at("file").get<std::string>();
    rec.image = load_vldt((fs::path(dir) / rel).string());
    if (rec.image.rank() != 3 || rec.image.dim(0) != ds.image_h ||
        rec.image.dim(1) != ds.image_w || rec.image.dim(2) != 3) {
      throw std::runtime_error("load_dataset: scene '" + rec.scene_id +
                               "' has shape " + rec.image.shape_str());
    }
    index_of[rec.scene_id] = ds.scenes.size();
    ds.scenes.push_back(std::move(rec));
  }

  std::ifstream ann(fs::path(dir) / "annotations.jsonl");
  if (!ann) {
    throw std::runtime_error("load_dataset: cannot open annotations in '" +
                             dir + "'");
  }
  std::string line;
  std::size_t annotated = 0;
  while (std::getline(ann, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("load_dataset: bad annotation line: " +
                               std::string(e.what()));
    }
    const std::string id = j.at("scene_id").get<std::string>();
    auto it = index_of.find(id);
    if (it == index_of.end()) {
      throw std::runtime_error("load_dataset: annotation for unknown scene '" +
                               id + "'");
    }
    SceneRecord& rec = ds.scenes[it->second];
    for (const auto& bj : j.at("boxes")) {
      Box b{bj.at(0).get<double>(), bj.at(1).get<double>(),
            bj.at(2).get<double>(), bj.at(3).get<double>()};
      if (!(b.w() > 0.0) || !(b.h() > 0.0)) {
        throw std::runtime_error("load_dataset: degenerate box in scene '" +
                                 id + "'");
      }
      rec.boxes.push_back(b);
    }
    rec.class_ids = j.at("class_ids").get<std::vector<std::size_t>>();
    rec.caption = j.at("caption").get<std::string>();
    if (rec.boxes.size() != rec.class_ids.size()) {
      throw std::runtime_error("load_dataset: box/class mismatch in scene '" +
                               id + "'");
    }
    for (std::size_t cid : rec.class_ids) {
      if (cid == 0 || cid > ds.vocab.class_names.size()) {
        throw std::runtime_error("load_dataset: class id out of range in '" +
                                 id + "'");
      }
    }
    ++annotated;
  }
  if (annotated != ds.scenes.size()) {
    throw std::runtime_error("load_dataset: " +
                             std::to_string(ds.scenes.size() - annotated) +
                             " scenes lack annotations");
  }

  for (const auto& id : manifest.at("splits").at("train")) {
    ds.train_idx.push_back(index_of.at(id.get<std::string>()));
  }
  for (const auto& id : manifest.at("splits").at("eval")) {
    ds.eval_idx.push_back(index_of.at(id.get<std::string>()));
  }
  return ds;
}

}  // namespace vldet
