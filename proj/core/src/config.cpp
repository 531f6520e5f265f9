#include "vldet/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace vldet {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad value '" + v + "' for " + key);
  }
  if (used != v.size()) {
    throw std::invalid_argument("config: bad value '" + v + "' for " + key);
  }
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  if (!v.empty() && v[0] == '-') {
    throw std::invalid_argument("config: negative value '" + v + "' for " +
                                key);
  }
  std::size_t used = 0;
  std::uint64_t out = 0;
  try {
    out = std::stoull(v, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad value '" + v + "' for " + key);
  }
  if (used != v.size()) {
    throw std::invalid_argument("config: bad value '" + v + "' for " + key);
  }
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  return static_cast<std::size_t>(parse_u64(key, v));
}

using Setter = std::function<void(Config&, const std::string&)>;

#define SIZE_KEY(field) \
  {#field, [](Config& c, const std::string& v) { \
     c.field = parse_size(#field, v); \
   }}
#define DOUBLE_KEY(field) \
  {#field, [](Config& c, const std::string& v) { \
     c.field = parse_double(#field, v); \
   }}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      SIZE_KEY(image_h),
      SIZE_KEY(image_w),
      SIZE_KEY(patch_size),
      SIZE_KEY(c_v_trunk),
      SIZE_KEY(c_pyr),
      SIZE_KEY(c_l),
      SIZE_KEY(n_classes),
      SIZE_KEY(anchors_per_cell),
      SIZE_KEY(pyramid_levels),
      DOUBLE_KEY(tau_icl),
      DOUBLE_KEY(tau_aal),
      DOUBLE_KEY(tau_ral),
      SIZE_KEY(minibatch_m),
      DOUBLE_KEY(w_icl),
      DOUBLE_KEY(w_aal),
      DOUBLE_KEY(w_ral),
      DOUBLE_KEY(w_rpnbox),
      DOUBLE_KEY(w_roibox),
      SIZE_KEY(max_caption_tokens),
      SIZE_KEY(heads),
      SIZE_KEY(encoder_depth),
      SIZE_KEY(vocab_size),
      SIZE_KEY(roi_hidden),
      SIZE_KEY(batch_size),
      SIZE_KEY(epochs),
      SIZE_KEY(max_steps),
      DOUBLE_KEY(lr),
      DOUBLE_KEY(lr_text),
      DOUBLE_KEY(weight_decay),
      DOUBLE_KEY(clip_norm),
      {"seed",
       [](Config& c, const std::string& v) { c.seed = parse_u64("seed", v); }},
      SIZE_KEY(checkpoint_every),
  };
  return table;
}

#undef SIZE_KEY
#undef DOUBLE_KEY

void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument("config: " + msg);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void validate_config(const Config& cfg) {
  check(cfg.patch_size >= 1, "patch_size must be positive");
  check(cfg.patch_size % 4 == 0,
        "patch_size must be divisible by 4 (finest stride is patch_size/4)");
  check(cfg.image_h % cfg.patch_size == 0,
        "image_h not divisible by patch_size");
  check(cfg.image_w % cfg.patch_size == 0,
        "image_w not divisible by patch_size");
  check((cfg.image_h / cfg.patch_size) % 4 == 0,
        "image_h / patch_size must be divisible by 4");
  check((cfg.image_w / cfg.patch_size) % 4 == 0,
        "image_w / patch_size must be divisible by 4");
  check(cfg.pyramid_levels == 5, "pyramid_levels must be 5");
  check(cfg.c_v_trunk >= 1 && cfg.c_pyr >= 1 && cfg.c_l >= 1,
        "channel widths must be positive");
  check(cfg.heads >= 1, "heads must be positive");
  check(cfg.c_l % cfg.heads == 0, "c_l not divisible by heads");
  check(cfg.c_v_trunk % cfg.heads == 0, "c_v_trunk not divisible by heads");
  check(cfg.tau_icl > 0.0 && cfg.tau_aal > 0.0 && cfg.tau_ral > 0.0,
        "temperatures must be positive");
  check(cfg.n_classes == 0 || cfg.n_classes >= 2,
        "n_classes must be at least 2 (background plus one class)");
  check(cfg.anchors_per_cell >= 1, "anchors_per_cell must be positive");
  check(cfg.minibatch_m >= 1, "minibatch_m must be positive");
  check(cfg.batch_size >= 1, "batch_size must be positive");
  check(cfg.batch_size % cfg.minibatch_m == 0,
        "minibatch_m must divide batch_size");
  check(cfg.max_caption_tokens >= 1, "max_caption_tokens must be positive");
  check(cfg.encoder_depth >= 1, "encoder_depth must be positive");
  check(cfg.vocab_size >= 2, "vocab_size must be at least 2");
  check(cfg.roi_hidden >= 1, "roi_hidden must be positive");
  check(cfg.lr >= 0.0 && cfg.lr_text >= 0.0, "learning rates must be >= 0");
  check(cfg.weight_decay >= 0.0, "weight_decay must be >= 0");
  check(cfg.clip_norm > 0.0, "clip_norm must be positive");
}

Config parse_config_text(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: line " + std::to_string(line_no) +
                                  " is not 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw std::invalid_argument("config: line " + std::to_string(line_no) +
                                  " is not 'key = value'");
    }
    const auto it = setters().find(key);
    if (it == setters().end()) {
      throw std::invalid_argument("config: unknown key '" + key + "'");
    }
    it->second(cfg, value);
  }
  validate_config(cfg);
  return cfg;
}

Config parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("config: cannot open '" + path + "'");
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string config_to_text(const Config& cfg) {
  std::ostringstream out;
  out << "anchors_per_cell = " << cfg.anchors_per_cell << "\n"
      << "batch_size = " << cfg.batch_size << "\n"
      << "c_l = " << cfg.c_l << "\n"
      << "c_pyr = " << cfg.c_pyr << "\n"
      << "c_v_trunk = " << cfg.c_v_trunk << "\n"
      << "checkpoint_every = " << cfg.checkpoint_every << "\n"
      << "clip_norm = " << fmt_double(cfg.clip_norm) << "\n"
      << "encoder_depth = " << cfg.encoder_depth << "\n"
      << "epochs = " << cfg.epochs << "\n"
      << "heads = " << cfg.heads << "\n"
      << "image_h = " << cfg.image_h << "\n"
      << "image_w = " << cfg.image_w << "\n"
      << "lr = " << fmt_double(cfg.lr) << "\n"
      << "lr_text = " << fmt_double(cfg.lr_text) << "\n"
      << "max_caption_tokens = " << cfg.max_caption_tokens << "\n"
      << "max_steps = " << cfg.max_steps << "\n"
      << "minibatch_m = " << cfg.minibatch_m << "\n"
      << "n_classes = " << cfg.n_classes << "\n"
      << "patch_size = " << cfg.patch_size << "\n"
      << "pyramid_levels = " << cfg.pyramid_levels << "\n"
      << "roi_hidden = " << cfg.roi_hidden << "\n"
      << "seed = " << cfg.seed << "\n"
      << "tau_aal = " << fmt_double(cfg.tau_aal) << "\n"
      << "tau_icl = " << fmt_double(cfg.tau_icl) << "\n"
      << "tau_ral = " << fmt_double(cfg.tau_ral) << "\n"
      << "vocab_size = " << cfg.vocab_size << "\n"
      << "w_aal = " << fmt_double(cfg.w_aal) << "\n"
      << "w_icl = " << fmt_double(cfg.w_icl) << "\n"
      << "w_ral = " << fmt_double(cfg.w_ral) << "\n"
      << "w_roibox = " << fmt_double(cfg.w_roibox) << "\n"
      << "w_rpnbox = " << fmt_double(cfg.w_rpnbox) << "\n";
  return out.str();
}

}  // namespace vldet
