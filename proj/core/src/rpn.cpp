#include "vldet/rpn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "vldet/ops.hpp"
#include "vldet/pyramid.hpp"

namespace vldet {

namespace {

constexpr double kAnchorRatios[3] = {0.5, 1.0, 2.0};

}  // namespace

AnchorSet generate_anchors(const Config& cfg, std::size_t image_h,
                           std::size_t image_w) {
  if (cfg.anchors_per_cell != 3) {
    throw std::invalid_argument(
        "generate_anchors: anchors_per_cell must be 3 (aspect ratio set is "
        "fixed at {0.5, 1, 2}), got " +
        std::to_string(cfg.anchors_per_cell));
  }
  const auto shapes = pyramid_shapes(image_h, image_w, cfg.patch_size);
  const auto strides = pyramid_strides(cfg.patch_size);
  AnchorSet out;
  out.anchors_per_cell = 3;
  out.level_offset.push_back(0);
  for (std::size_t lv = 0; lv < shapes.size(); ++lv) {
    const auto [h, w] = shapes[lv];
    const double stride = static_cast<double>(strides[lv]);
    const double area = (4.0 * stride) * (4.0 * stride);
    for (std::size_t oy = 0; oy < h; ++oy) {
      for (std::size_t ox = 0; ox < w; ++ox) {
        const double cx = (static_cast<double>(ox) + 0.5) * stride;
        const double cy = (static_cast<double>(oy) + 0.5) * stride;
        for (double r : kAnchorRatios) {
          const double bw = std::sqrt(area / r);
          const double bh = bw * r;
          out.boxes.push_back(
              {cx - 0.5 * bw, cy - 0.5 * bh, cx + 0.5 * bw, cy + 0.5 * bh});
          out.level.push_back(lv);
        }
      }
    }
    out.level_offset.push_back(out.boxes.size());
  }
  return out;
}

SigRpnParams make_sig_rpn(Registry& reg, const Config& cfg, Rng& rng) {
  SigRpnParams p;
  p.anchors_per_cell = cfg.anchors_per_cell;
  p.c_l = cfg.c_l;
  p.fuse = make_vl_fuse(reg, "rpn/fuse", cfg.c_pyr, cfg.c_l, cfg.heads, rng);
  p.refine = make_text_refine(reg, "rpn/text_refine", cfg.c_l, cfg.heads, rng);
  const std::size_t c = cfg.c_pyr;
  p.trunk1_w = reg.add("rpn/trunk1/weight", init_normal({3, 3, c, c}, rng));
  p.trunk1_b = reg.add("rpn/trunk1/bias", init_zeros({c}));
  p.trunk2_w = reg.add("rpn/trunk2/weight", init_normal({3, 3, c, c}, rng));
  p.trunk2_b = reg.add("rpn/trunk2/bias", init_zeros({c}));
  const std::size_t a = cfg.anchors_per_cell;
  p.obj_w = reg.add("rpn/objectness_head/weight",
                    init_normal({1, 1, c, a * cfg.c_l}, rng));
  p.obj_b = reg.add("rpn/objectness_head/bias", init_zeros({a * cfg.c_l}));
  p.delta_w =
      reg.add("rpn/delta_head/weight", init_normal({1, 1, c, a * 4}, rng));
  p.delta_b = reg.add("rpn/delta_head/bias", init_zeros({a * 4}));
  return p;
}

RpnOutput sig_rpn_forward(const std::vector<Var>& pyr_levels,
                          const Var& l_cls_pub, const SigRpnParams& p) {
  if (pyr_levels.empty()) {
    throw std::invalid_argument("sig_rpn_forward: no pyramid levels");
  }
  std::vector<std::pair<std::size_t, std::size_t>> dims;
  std::vector<Var> flat;
  flat.reserve(pyr_levels.size());
  for (const Var& lvl : pyr_levels) {
    if (lvl->value.rank() != 3) {
      throw std::invalid_argument("sig_rpn_forward: pyramid level must be "
                                  "rank 3, got " +
                                  lvl->value.shape_str());
    }
    const std::size_t h = lvl->value.dim(0);
    const std::size_t w = lvl->value.dim(1);
    dims.emplace_back(h, w);
    flat.push_back(reshape(lvl, {h * w, lvl->value.dim(2)}));
  }
  Var v_all = flat.size() == 1 ? flat[0] : concat_rows(flat);
  auto [v_fused, l_fused] = vl_fuse(v_all, l_cls_pub, p.fuse);
  Var l_rpn = text_refine(l_fused, p.refine);

  const std::size_t c_pyr = v_all->value.dim(1);
  std::vector<Var> emb_parts, delta_parts;
  emb_parts.reserve(dims.size());
  delta_parts.reserve(dims.size());
  std::size_t offset = 0;
  for (const auto& [h, w] : dims) {
    Var tokens = slice_rows(v_fused, offset, offset + h * w);
    offset += h * w;
    Var map = reshape(tokens, {h, w, c_pyr});
    Var t = relu(conv2d(map, p.trunk1_w, p.trunk1_b, 1, 1));
    t = relu(conv2d(t, p.trunk2_w, p.trunk2_b, 1, 1));
    Var emb = conv2d(t, p.obj_w, p.obj_b, 1, 0);
    Var del = conv2d(t, p.delta_w, p.delta_b, 1, 0);
    emb_parts.push_back(
        reshape(emb, {h * w * p.anchors_per_cell, p.c_l}));
    delta_parts.push_back(reshape(del, {h * w * p.anchors_per_cell, 4}));
  }
  RpnOutput out;
  out.objectness_embeddings =
      emb_parts.size() == 1 ? emb_parts[0] : concat_rows(emb_parts);
  out.deltas = delta_parts.size() == 1 ? delta_parts[0]
                                       : concat_rows(delta_parts);
  out.l_cls_rpn = l_rpn;
  return out;
}

Var objectness_from_sims(const Var& sims, double tau) {
  if (sims->value.rank() != 2 || sims->value.dim(1) < 2) {
    throw std::invalid_argument(
        "objectness_from_sims: need [K, N] similarities with N >= 2, got " +
        sims->value.shape_str());
  }
  if (!(tau > 0.0)) {
    throw std::invalid_argument("objectness_from_sims: tau must be positive");
  }
  const std::size_t n = sims->value.dim(1);
  const std::size_t k = sims->value.dim(0);
  Var fg = mean_cols(slice_cols(sims, 1, n));
  Var bg = reshape(slice_cols(sims, 0, 1), {k});
  return scale(sub(fg, bg), 1.0 / tau);
}

Var objectness_scores(const Var& embeddings, const Var& l_cls_rpn,
                      double tau) {
  return objectness_from_sims(cosine_matrix(embeddings, l_cls_rpn), tau);
}

std::vector<double> objectness_scores_raw(const Tensor& embeddings,
                                          const Tensor& l_cls_rpn,
                                          double tau) {
  if (embeddings.rank() != 2 || l_cls_rpn.rank() != 2 ||
      embeddings.dim(1) != l_cls_rpn.dim(1) || l_cls_rpn.dim(0) < 2) {
    throw std::invalid_argument("objectness_scores_raw: bad shapes " +
                                embeddings.shape_str() + " vs " +
                                l_cls_rpn.shape_str());
  }
  if (!(tau > 0.0)) {
    throw std::invalid_argument("objectness_scores_raw: tau must be positive");
  }
  constexpr double kEps = 1e-12;
  const std::size_t k = embeddings.dim(0);
  const std::size_t n = l_cls_rpn.dim(0);
  const std::size_t c = embeddings.dim(1);
  std::vector<double> l_inv(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t d = 0; d < c; ++d) {
      s += l_cls_rpn.at(j, d) * l_cls_rpn.at(j, d);
    }
    const double norm = std::sqrt(s);
    l_inv[j] = norm < kEps ? 0.0 : 1.0 / norm;
  }
  std::vector<double> out(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    double s = 0.0;
    for (std::size_t d = 0; d < c; ++d) {
      s += embeddings.at(i, d) * embeddings.at(i, d);
    }
    const double norm = std::sqrt(s);
    const double v_inv = norm < kEps ? 0.0 : 1.0 / norm;
    double fg = 0.0;
    double bg = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double dotp = 0.0;
      for (std::size_t d = 0; d < c; ++d) {
        dotp += embeddings.at(i, d) * l_cls_rpn.at(j, d);
      }
      const double cosv = dotp * v_inv * l_inv[j];
      if (j == 0) {
        bg = cosv;
      } else {
        fg += cosv;
      }
    }
    fg /= static_cast<double>(n - 1);
    out[i] = (fg - bg) / tau;
  }
  return out;
}

MatchResult match_anchors(const AnchorSet& anchors,
                          const std::vector<Box>& gt_boxes, Rng& rng) {
  const std::size_t k = anchors.count();
  MatchResult m;
  m.labels.assign(k, 0);
  m.matched_gt.assign(k, 0);
  if (!gt_boxes.empty()) {
    std::vector<double> best_iou(k, 0.0);
    std::vector<double> gt_best_iou(gt_boxes.size(), -1.0);
    std::vector<std::size_t> gt_best_anchor(gt_boxes.size(), 0);
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
        const double v = iou(anchors.boxes[i], gt_boxes[g]);
        if (v > best_iou[i]) {
          best_iou[i] = v;
          m.matched_gt[i] = g;
        }
        if (v > gt_best_iou[g]) {
          gt_best_iou[g] = v;
          gt_best_anchor[g] = i;
        }
      }
      if (best_iou[i] >= kMatchPosIou) {
        m.labels[i] = 1;
      } else if (best_iou[i] <= kMatchNegIou) {
        m.labels[i] = 0;
      } else {
        m.labels[i] = -1;
      }
    }
    // Every gt claims its argmax anchor even below the positive threshold.
    for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
      const std::size_t i = gt_best_anchor[g];
      if (m.labels[i] != 1) {
        m.labels[i] = 1;
        m.matched_gt[i] = g;
      }
    }
  }

  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < k; ++i) {
    if (m.labels[i] == 1) {
      pos.push_back(i);
    } else if (m.labels[i] == 0) {
      neg.push_back(i);
    }
  }
  const std::size_t n_pos = std::min(kAnchorSampleMaxPos, pos.size());
  if (n_pos < pos.size()) {
    rng.shuffle(pos);
    pos.resize(n_pos);
    std::sort(pos.begin(), pos.end());
  }
  const std::size_t n_neg = std::min(kAnchorSample - n_pos, neg.size());
  if (n_neg < neg.size()) {
    rng.shuffle(neg);
    neg.resize(n_neg);
    std::sort(neg.begin(), neg.end());
  }
  m.sampled_pos = std::move(pos);
  m.sampled_neg = std::move(neg);
  return m;
}

Var loss_aal(const Var& objectness_embeddings, const Var& l_cls_rpn,
             const MatchResult& match, double tau) {
  std::vector<std::size_t> ids;
  ids.reserve(match.sampled_pos.size() + match.sampled_neg.size());
  ids.insert(ids.end(), match.sampled_pos.begin(), match.sampled_pos.end());
  ids.insert(ids.end(), match.sampled_neg.begin(), match.sampled_neg.end());
  if (ids.empty()) {
    throw std::invalid_argument("loss_aal: no sampled anchors");
  }
  Tensor targets({ids.size()});
  for (std::size_t i = 0; i < match.sampled_pos.size(); ++i) {
    targets[i] = 1.0;
  }
  Var picked = gather_rows(objectness_embeddings, ids);
  Var s = objectness_scores(picked, l_cls_rpn, tau);
  return bce_with_logits_mean(s, targets);
}

Var rpn_box_loss(const Var& deltas, const AnchorSet& anchors,
                 const std::vector<Box>& gt_boxes, const MatchResult& match) {
  const std::size_t p = match.sampled_pos.size();
  if (p == 0) return make_constant(Tensor::zeros({1}));
  Tensor targets({p, 4});
  for (std::size_t i = 0; i < p; ++i) {
    const std::size_t a = match.sampled_pos[i];
    const auto d =
        encode_deltas(gt_boxes[match.matched_gt[a]], anchors.boxes[a]);
    for (std::size_t j = 0; j < 4; ++j) targets.at(i, j) = d[j];
  }
  Var pred = gather_rows(deltas, match.sampled_pos);
  return mean_all(smooth_l1(pred, make_constant(std::move(targets)),
                            1.0 / 9.0));
}

std::vector<Proposal> select_proposals(const std::vector<double>& s_obj,
                                       const Tensor& deltas,
                                       const AnchorSet& anchors,
                                       std::size_t image_w,
                                       std::size_t image_h,
                                       std::size_t max_proposals) {
  const std::size_t k = anchors.count();
  if (s_obj.size() != k || deltas.rank() != 2 || deltas.dim(0) != k ||
      deltas.dim(1) != 4) {
    throw std::invalid_argument(
        "select_proposals: scores/deltas do not match anchor count " +
        std::to_string(k));
  }
  std::vector<Box> cand_boxes;
  std::vector<double> cand_scores;
  std::vector<std::size_t> cand_level;
  const std::size_t levels = anchors.level_offset.size() - 1;
  for (std::size_t lv = 0; lv < levels; ++lv) {
    const std::size_t lo = anchors.level_offset[lv];
    const std::size_t hi = anchors.level_offset[lv + 1];
    std::vector<std::size_t> ids(hi - lo);
    std::iota(ids.begin(), ids.end(), lo);
    std::stable_sort(ids.begin(), ids.end(),
                     [&](std::size_t a, std::size_t b) {
                       return s_obj[a] > s_obj[b];
                     });
    const std::size_t take = std::min(kProposalsPerLevel, ids.size());
    for (std::size_t t = 0; t < take; ++t) {
      const std::size_t i = ids[t];
      Box b = decode_deltas(anchors.boxes[i], deltas.at(i, 0),
                            deltas.at(i, 1), deltas.at(i, 2),
                            deltas.at(i, 3));
      b = clip_box(b, static_cast<double>(image_w),
                   static_cast<double>(image_h));
      if (b.w() < 1.0 || b.h() < 1.0) continue;
      cand_boxes.push_back(b);
      // sigmoid is monotone, so the per-level top-k order is unchanged.
      cand_scores.push_back(1.0 / (1.0 + std::exp(-s_obj[i])));
      cand_level.push_back(lv);
    }
  }
  std::vector<Proposal> out;
  if (cand_boxes.empty()) return out;
  const std::vector<std::size_t> kept =
      nms(cand_boxes, cand_scores, kProposalNmsIou);
  const std::size_t take = std::min(max_proposals, kept.size());
  out.reserve(take);
  for (std::size_t t = 0; t < take; ++t) {
    const std::size_t i = kept[t];
    out.push_back({cand_boxes[i], cand_scores[i], cand_level[i]});
  }
  return out;
}

}  // namespace vldet
