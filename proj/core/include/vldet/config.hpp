#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace vldet {

// Model and training hyperparameters. File form is flat `key = value` text,
// one pair per line, '#' comments; unknown keys are errors.
struct Config {
  // model
  std::size_t image_h = 64;
  std::size_t image_w = 64;
  std::size_t patch_size = 16;
  std::size_t c_v_trunk = 64;
  std::size_t c_pyr = 64;
  std::size_t c_l = 32;
  std::size_t n_classes = 0;  // including background; 0 = resolve from data
  std::size_t anchors_per_cell = 3;
  std::size_t pyramid_levels = 5;
  double tau_icl = 0.07;
  double tau_aal = 0.07;
  double tau_ral = 0.07;
  std::size_t minibatch_m = 8;
  double w_icl = 1.0;
  double w_aal = 1.0;
  double w_ral = 1.0;
  double w_rpnbox = 1.0;
  double w_roibox = 1.0;
  std::size_t max_caption_tokens = 64;
  std::size_t heads = 4;
  std::size_t encoder_depth = 2;
  std::size_t vocab_size = 4096;
  std::size_t roi_hidden = 128;

  // training
  std::size_t batch_size = 8;
  std::size_t epochs = 1000;
  std::size_t max_steps = 2000;  // 0 = no cap
  double lr = 1e-3;
  double lr_text = 1e-4;
  double weight_decay = 1e-4;
  double clip_norm = 10.0;
  std::uint64_t seed = 42;
  std::size_t checkpoint_every = 0;  // 0 = final only

  std::size_t grid_h() const { return image_h / patch_size; }
  std::size_t grid_w() const { return image_w / patch_size; }
};

// Throws std::invalid_argument describing the first violated invariant.
void validate_config(const Config& cfg);

// Parses `key = value` lines; throws on unknown keys, bad values, or a
// violated invariant. `parse_config_text` starts from defaults, then applies
// overrides in order.
Config parse_config_text(const std::string& text);
Config parse_config_file(const std::string& path);

// Round-trippable snapshot (every key, one per line, sorted by key).
std::string config_to_text(const Config& cfg);

}  // namespace vldet
