#pragma once

#include <cstddef>
#include <vector>

#include "vldet/boxes.hpp"
#include "vldet/config.hpp"
#include "vldet/fusion.hpp"
#include "vldet/graph.hpp"
#include "vldet/params.hpp"
#include "vldet/rng.hpp"
#include "vldet/tensor.hpp"

namespace vldet {

// Anchor matching thresholds and the per-image sampling budget.
inline constexpr double kMatchPosIou = 0.7;
inline constexpr double kMatchNegIou = 0.3;
inline constexpr std::size_t kAnchorSample = 256;
inline constexpr std::size_t kAnchorSampleMaxPos = 128;

// Proposal selection.
inline constexpr std::size_t kProposalsPerLevel = 256;
inline constexpr double kProposalNmsIou = 0.7;
inline constexpr std::size_t kProposalsTrain = 64;
inline constexpr std::size_t kProposalsInfer = 32;

// All anchors across the pyramid in canonical order: level-major, cells
// row-major within a level, aspect ratio {0.5, 1, 2} within a cell. This
// matches the row order of the flattened head outputs.
struct AnchorSet {
  std::vector<Box> boxes;
  std::vector<std::size_t> level;         // source level per anchor
  std::vector<std::size_t> level_offset;  // size levels+1, last = count
  std::size_t anchors_per_cell = 0;
  std::size_t count() const { return boxes.size(); }
};

// A=3 anchors per cell with aspect ratios h/w in {0.5, 1, 2}, each of area
// (4*stride)^2, centered on the cell. Anchors may exceed image bounds.
AnchorSet generate_anchors(const Config& cfg, std::size_t image_h,
                           std::size_t image_w);

struct SigRpnParams {
  CrossAttentionParams fuse;
  TextRefineParams refine;
  Var trunk1_w, trunk1_b;  // 3x3, C_pyr -> C_pyr
  Var trunk2_w, trunk2_b;
  Var obj_w, obj_b;        // 1x1, C_pyr -> A*C_l
  Var delta_w, delta_b;    // 1x1, C_pyr -> A*4
  std::size_t anchors_per_cell = 0;
  std::size_t c_l = 0;
};

SigRpnParams make_sig_rpn(Registry& reg, const Config& cfg, Rng& rng);

struct RpnOutput {
  Var objectness_embeddings;  // [total_anchors, C_l]
  Var deltas;                 // [total_anchors, 4]
  Var l_cls_rpn;              // [N, C_l]
};

// Flattens all pyramid levels into one token set, fuses it with the class
// text, refines the text, then runs a shared two-conv trunk and the two
// 1x1 heads per level. Row i of the outputs belongs to anchor i.
RpnOutput sig_rpn_forward(const std::vector<Var>& pyr_levels,
                          const Var& l_cls_pub, const SigRpnParams& p);

// Per-row score: (mean of cosine to foreground rows 1..N-1 minus cosine to
// background row 0) / tau. Requires N >= 2.
Var objectness_scores(const Var& embeddings, const Var& l_cls_rpn,
                      double tau);

// Same formula applied to a precomputed similarity matrix [K, N].
Var objectness_from_sims(const Var& sims, double tau);

// Graph-free variant used for proposal selection.
std::vector<double> objectness_scores_raw(const Tensor& embeddings,
                                          const Tensor& l_cls_rpn,
                                          double tau);

struct MatchResult {
  std::vector<int> labels;               // 1 positive, 0 negative, -1 ignore
  std::vector<std::size_t> matched_gt;   // valid where labels == 1
  std::vector<std::size_t> sampled_pos;  // anchor indices entering the loss
  std::vector<std::size_t> sampled_neg;
};

// Positive iff best IoU >= 0.7 or the anchor is a gt's argmax anchor;
// negative iff best IoU <= 0.3; ignore otherwise. Samples up to 256 anchors
// with at most 128 positive. Zero gt boxes make every anchor negative.
MatchResult match_anchors(const AnchorSet& anchors,
                          const std::vector<Box>& gt_boxes, Rng& rng);

// Mean BCE of the objectness score against the sampled 0/1 labels.
Var loss_aal(const Var& objectness_embeddings, const Var& l_cls_rpn,
             const MatchResult& match, double tau);

// Smooth-L1 (beta = 1/9) between predicted deltas and encoded targets,
// averaged over sampled positive anchors x 4 coordinates. Exact zero
// constant when there are no positives.
Var rpn_box_loss(const Var& deltas, const AnchorSet& anchors,
                 const std::vector<Box>& gt_boxes, const MatchResult& match);

struct Proposal {
  Box box;
  double score = 0.0;  // sigmoid(s_obj)
  std::size_t level = 0;
};

// Per level keeps the top 256 anchors by score, decodes and clips them,
// drops boxes with a side under one pixel, then applies joint NMS at IoU
// 0.7 and keeps the top max_proposals.
std::vector<Proposal> select_proposals(const std::vector<double>& s_obj,
                                       const Tensor& deltas,
                                       const AnchorSet& anchors,
                                       std::size_t image_w,
                                       std::size_t image_h,
                                       std::size_t max_proposals);

}  // namespace vldet
