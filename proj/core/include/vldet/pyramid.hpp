#pragma once

#include <utility>
#include <vector>

#include "vldet/config.hpp"
#include "vldet/fusion.hpp"
#include "vldet/graph.hpp"
#include "vldet/params.hpp"

namespace vldet {

// Spatial extents of the five pyramid levels relative to the (H/p)x(W/p)
// token grid: {x4, x2, x1, x1/2, x1/4}. Throws when a divisibility
// requirement fails, naming the offending dimension.
std::vector<std::pair<std::size_t, std::size_t>> pyramid_shapes(
    std::size_t image_h, std::size_t image_w, std::size_t patch_size);

// Pixels per cell at each level: {p/4, p/2, p, 2p, 4p}.
std::vector<std::size_t> pyramid_strides(std::size_t patch_size);

struct PyramidLevelParams {
  // Upscaling deconvolutions (kernel 2, stride 2): two for the x4 level,
  // one for x2, none for the rest.
  std::vector<std::pair<Var, Var>> deconvs;
  Var conv1_w, conv1_b;  // 1x1, C_v_trunk -> C_pyr
  Var conv3_w, conv3_b;  // 3x3 pad 1, C_pyr -> C_pyr
  Var ln_w, ln_b;        // per-cell layer norm over channels
};

struct VlPubParams {
  CrossAttentionParams fuse;
  TextRefineParams refine;
  std::vector<PyramidLevelParams> levels;
};

VlPubParams make_vl_pub(Registry& reg, const Config& cfg, Rng& rng);

struct VlPubOutput {
  std::vector<Var> levels;  // [h_i, w_i, C_pyr] each
  Var l_cls_pub;            // [N, C_l]
};

// v0_tokens: [grid_h*grid_w, C_v_trunk]; l_cls: [N, C_l]; l_cap: optional
// [1, C_l] caption row that joins the fusion and is dropped afterwards.
VlPubOutput vl_pub(const Var& v0_tokens, const Var& l_cls, const Var* l_cap,
                   const VlPubParams& p, const Config& cfg);

}  // namespace vldet
