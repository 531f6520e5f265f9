#include "vldet/pyramid.hpp"

#include <stdexcept>
#include <string>

#include "vldet/ops.hpp"

namespace vldet {

std::vector<std::pair<std::size_t, std::size_t>> pyramid_shapes(
    std::size_t image_h, std::size_t image_w, std::size_t patch_size) {
  if (patch_size == 0) {
    throw std::invalid_argument("pyramid_shapes: patch_size is zero");
  }
  const auto grid = [&](std::size_t extent, const char* name) {
    if (extent % patch_size != 0) {
      throw std::invalid_argument(std::string("pyramid_shapes: ") + name +
                                  " not divisible by patch_size");
    }
    const std::size_t g = extent / patch_size;
    if (g % 4 != 0) {
      throw std::invalid_argument(std::string("pyramid_shapes: ") + name +
                                  " / patch_size not divisible by 4");
    }
    return g;
  };
  const std::size_t gh = grid(image_h, "image_h");
  const std::size_t gw = grid(image_w, "image_w");
  return {{4 * gh, 4 * gw},
          {2 * gh, 2 * gw},
          {gh, gw},
          {gh / 2, gw / 2},
          {gh / 4, gw / 4}};
}

std::vector<std::size_t> pyramid_strides(std::size_t patch_size) {
  if (patch_size % 4 != 0) {
    throw std::invalid_argument(
        "pyramid_strides: patch_size not divisible by 4");
  }
  return {patch_size / 4, patch_size / 2, patch_size, 2 * patch_size,
          4 * patch_size};
}

VlPubParams make_vl_pub(Registry& reg, const Config& cfg, Rng& rng) {
  VlPubParams p;
  p.fuse = make_vl_fuse(reg, "pyramid/fuse", cfg.c_v_trunk, cfg.c_l,
                        cfg.heads, rng);
  p.refine = make_text_refine(reg, "pyramid/text_refine", cfg.c_l, cfg.heads,
                              rng);
  const std::size_t upscales[5] = {2, 1, 0, 0, 0};
  for (std::size_t lvl = 0; lvl < 5; ++lvl) {
    PyramidLevelParams lp;
    const std::string prefix = "pyramid/level" + std::to_string(lvl);
    for (std::size_t d = 0; d < upscales[lvl]; ++d) {
      Var w = reg.add(prefix + "/deconv" + std::to_string(d) + "/weight",
                      init_normal({2, 2, cfg.c_v_trunk, cfg.c_v_trunk}, rng));
      Var b = reg.add(prefix + "/deconv" + std::to_string(d) + "/bias",
                      init_zeros({cfg.c_v_trunk}));
      lp.deconvs.emplace_back(w, b);
    }
    lp.conv1_w = reg.add(prefix + "/conv1/weight",
                         init_normal({1, 1, cfg.c_v_trunk, cfg.c_pyr}, rng));
    lp.conv1_b = reg.add(prefix + "/conv1/bias", init_zeros({cfg.c_pyr}));
    lp.conv3_w = reg.add(prefix + "/conv3/weight",
                         init_normal({3, 3, cfg.c_pyr, cfg.c_pyr}, rng));
    lp.conv3_b = reg.add(prefix + "/conv3/bias", init_zeros({cfg.c_pyr}));
    lp.ln_w = reg.add(prefix + "/ln/weight", init_ones({cfg.c_pyr}));
    lp.ln_b = reg.add(prefix + "/ln/bias", init_zeros({cfg.c_pyr}));
    p.levels.push_back(std::move(lp));
  }
  return p;
}

namespace {

Var channel_layer_norm(const Var& map, const Var& ln_w, const Var& ln_b) {
  const std::size_t h = map->value.dim(0);
  const std::size_t w = map->value.dim(1);
  const std::size_t c = map->value.dim(2);
  Var flat = reshape(map, {h * w, c});
  return reshape(layer_norm_rows(flat, ln_w, ln_b), {h, w, c});
}

}  // namespace

VlPubOutput vl_pub(const Var& v0_tokens, const Var& l_cls, const Var* l_cap,
                   const VlPubParams& p, const Config& cfg) {
  const std::size_t gh = cfg.grid_h();
  const std::size_t gw = cfg.grid_w();
  if (v0_tokens->value.rank() != 2 ||
      v0_tokens->value.dim(0) != gh * gw ||
      v0_tokens->value.dim(1) != cfg.c_v_trunk) {
    throw std::invalid_argument("vl_pub: expected [" +
                                std::to_string(gh * gw) + "," +
                                std::to_string(cfg.c_v_trunk) +
                                "] tokens, got " + v0_tokens->value.shape_str());
  }
  if (l_cls->value.rank() != 2 || l_cls->value.dim(1) != cfg.c_l) {
    throw std::invalid_argument("vl_pub: bad class embedding shape " +
                                l_cls->value.shape_str());
  }
  const std::size_t n = l_cls->value.dim(0);

  Var text = l_cap == nullptr ? l_cls : concat_rows({l_cls, *l_cap});
  auto [v_fused, l_fused] = vl_fuse(v0_tokens, text, p.fuse);
  Var l_pub = text_refine(
      l_cap == nullptr ? l_fused : slice_rows(l_fused, 0, n), p.refine);

  Var base = reshape(v_fused, {gh, gw, cfg.c_v_trunk});
  VlPubOutput out;
  out.l_cls_pub = l_pub;
  const std::size_t pools_per_level[5] = {0, 0, 0, 1, 2};
  for (std::size_t lvl = 0; lvl < p.levels.size(); ++lvl) {
    const PyramidLevelParams& lp = p.levels[lvl];
    Var x = base;
    for (const auto& [w, b] : lp.deconvs) {
      x = conv_transpose2d(x, w, b, 2);
    }
    for (std::size_t i = 0; i < pools_per_level[lvl]; ++i) {
      x = maxpool2d(x);
    }
    x = conv2d(x, lp.conv1_w, lp.conv1_b, 1, 0);
    x = conv2d(x, lp.conv3_w, lp.conv3_b, 1, 1);
    out.levels.push_back(channel_layer_norm(x, lp.ln_w, lp.ln_b));
  }
  return out;
}

}  // namespace vldet
