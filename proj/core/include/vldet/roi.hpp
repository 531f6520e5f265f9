#pragma once

#include <cstddef>
#include <vector>

#include "vldet/boxes.hpp"
#include "vldet/config.hpp"
#include "vldet/graph.hpp"
#include "vldet/params.hpp"
#include "vldet/rng.hpp"
#include "vldet/rpn.hpp"
#include "vldet/tensor.hpp"

namespace vldet {

inline constexpr std::size_t kRoiAlignSize = 7;
inline constexpr std::size_t kRoiSample = 64;
inline constexpr std::size_t kRoiSampleMaxFg = 16;  // 25% of the budget
inline constexpr double kRoiFgIou = 0.5;
inline constexpr double kDetScoreMin = 0.05;
inline constexpr double kDetNmsIou = 0.5;
inline constexpr std::size_t kDetMax = 100;

// FPN assignment heuristic: boxes of side 4*patch_size map to the middle
// (x1) level, each doubling in size moves one level coarser. Returns
// 0-based indices into the pyramid level vector (0 = finest).
std::size_t assign_level(const Box& b, std::size_t patch_size);
std::vector<std::size_t> assign_levels(const std::vector<Box>& boxes,
                                       std::size_t patch_size);

// Pools a 7x7xC patch from one pyramid level. The box is given in image
// pixels; stride converts to feature cells (cell centers sit at
// (i + 0.5) * stride). Each output cell averages four bilinear samples at
// the 1/4 and 3/4 positions of the cell. Differentiable w.r.t. feature.
Var roi_align(const Var& feature, const Box& box, double stride);

struct RoiHeadParams {
  Var fc1_w, fc1_b;    // [49*C_pyr, hidden]
  Var fc2_w, fc2_b;    // [hidden, hidden]
  Var proj_w, proj_b;  // [hidden, C_l] region embedding projection
  Var delta_w, delta_b;  // [hidden, 4] class-agnostic refinement
};

RoiHeadParams make_roi_head(Registry& reg, const Config& cfg, Rng& rng);

struct RoiOutput {
  Var region_embeddings;  // [R, C_l]
  Var box_deltas;         // [R, 4]
};

// patches: [R, 49*C_pyr] flattened pooled features.
RoiOutput roi_head_forward(const Var& patches, const RoiHeadParams& p);

struct RoiSample {
  std::vector<Box> boxes;
  std::vector<std::size_t> target_class;  // 0 = background
  std::vector<std::size_t> matched_gt;    // valid where target_class > 0
  std::size_t fg_count = 0;               // foreground rows come first
};

// Builds the per-image training region set: proposals plus the gt boxes,
// labeled foreground at IoU >= 0.5, sampled to 64 regions with at most 16
// foreground. gt_classes are 1..N-1 ids aligned with gt_boxes.
RoiSample sample_rois(const std::vector<Proposal>& proposals,
                      const std::vector<Box>& gt_boxes,
                      const std::vector<std::size_t>& gt_classes, Rng& rng);

// Softmax cross-entropy over cosine(region, text row)/tau with all N rows
// (background row 0 included) as classes.
Var loss_ral(const Var& region_embeddings, const Var& l_cls_rpn,
             const std::vector<std::size_t>& target_class, double tau);

// Smooth-L1 (beta = 1) between predicted deltas and encoded gt targets,
// averaged over foreground regions x 4 coordinates; exact zero constant
// when the sample has no foreground.
Var roi_box_loss(const Var& box_deltas, const RoiSample& sample,
                 const std::vector<Box>& gt_boxes);

struct Detection {
  Box box;
  std::size_t class_id = 0;  // 1..N-1, never background
  double score = 0.0;
};

// Classifies each region by softmax over cosine/tau (background in the
// normalization), drops background argmaxes and scores under 0.05, decodes
// the class-agnostic deltas, clips, applies per-class NMS at 0.5, and keeps
// the top 100 by score.
std::vector<Detection> postprocess_detections(
    const Tensor& region_embeddings, const Tensor& box_deltas,
    const std::vector<Box>& roi_boxes, const Tensor& l_cls_rpn, double tau,
    std::size_t image_w, std::size_t image_h);

}  // namespace vldet
