#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "vldet/boxes.hpp"
#include "vldet/config.hpp"
#include "vldet/tensor.hpp"

namespace vldet {

// Compositional color x shape class vocabulary. Foreground class ids are
// 1..colors*shapes (0 is background); id c maps to class_names[c-1] =
// "<color> <shape>" with color-major enumeration.
struct Vocabulary {
  std::vector<std::string> colors;
  std::vector<std::string> shapes;
  std::vector<std::string> class_names;
  std::vector<std::size_t> base_ids;
  std::vector<std::size_t> novel_ids;
};

std::size_t max_palette_colors();
std::size_t max_palette_shapes();

// Holds out n_novel color/shape combinations such that every color and
// every shape still appears in some base class. Selection is a pure
// function of the arguments.
Vocabulary build_vocabulary(std::size_t n_colors, std::size_t n_shapes,
                            std::size_t n_novel, std::uint64_t seed);

struct SceneRecord {
  std::string scene_id;
  Tensor image;  // [H, W, 3] in [0, 1]
  std::vector<Box> boxes;
  std::vector<std::size_t> class_ids;
  std::string caption;
};

// Renders 1-4 filled shapes in distinct colors on a gray background with
// integer-corner tight boxes, pairwise gt IoU <= 0.3, and a caption naming
// every object. Fully determined by scene_seed.
SceneRecord render_scene(const Vocabulary& vocab,
                         const std::vector<std::size_t>& allowed_ids,
                         std::uint64_t scene_seed, const Config& cfg);

// Writes manifest.json, scenes/<id>.vldt, and annotations.jsonl. Train
// scenes draw classes from base ids only; eval scenes from all foreground
// ids. Returns the serialized manifest text.
std::string generate_dataset(const Vocabulary& vocab,
                             std::size_t train_scenes,
                             std::size_t eval_scenes, std::uint64_t vocab_seed,
                             std::uint64_t data_seed, const Config& cfg,
                             const std::string& out_dir);

struct Dataset {
  Vocabulary vocab;
  std::size_t image_h = 0;
  std::size_t image_w = 0;
  std::vector<SceneRecord> scenes;
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> eval_idx;
  std::size_t n_classes() const { return vocab.class_names.size() + 1; }
};

Dataset load_dataset(const std::string& dir);

}  // namespace vldet
