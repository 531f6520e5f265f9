#include "vldet/model.hpp"

#include <stdexcept>
#include <string>

#include "vldet/ops.hpp"
#include "vldet/tokenizer.hpp"

namespace vldet {

VLDetModel build_model(const Config& cfg, std::uint64_t seed) {
  validate_config(cfg);
  VLDetModel m;
  m.cfg = cfg;
  Rng rng(derive_seed(seed, 0x3A0D31ull));
  m.text = make_text_encoder(m.reg, cfg, rng);
  m.image = make_image_encoder(m.reg, cfg, rng);
  m.global_proj = make_global_proj(m.reg, cfg, rng);
  m.pub = make_vl_pub(m.reg, cfg, rng);
  m.rpn = make_sig_rpn(m.reg, cfg, rng);
  m.roi = make_roi_head(m.reg, cfg, rng);
  m.anchors = generate_anchors(cfg, cfg.image_h, cfg.image_w);
  return m;
}

std::vector<std::string> with_background(const std::vector<std::string>& fg) {
  std::vector<std::string> names;
  names.reserve(fg.size() + 1);
  names.push_back("background");
  names.insert(names.end(), fg.begin(), fg.end());
  return names;
}

Var embed_prompts(const VLDetModel& m, const std::vector<std::string>& names) {
  if (names.size() < 2) {
    throw std::invalid_argument(
        "embed_prompts: need the background name plus at least one class");
  }
  return encode_text(tokenize_class_names(names, m.cfg), m.text, m.cfg);
}

namespace {

// Pools every sampled region from its assigned pyramid level and flattens
// to one row per region.
Var pool_regions(const VLDetModel& m, const std::vector<Var>& levels,
                 const std::vector<Box>& boxes) {
  const auto strides = pyramid_strides(m.cfg.patch_size);
  const std::size_t flat = kRoiAlignSize * kRoiAlignSize * m.cfg.c_pyr;
  std::vector<Var> rows;
  rows.reserve(boxes.size());
  for (const Box& b : boxes) {
    const std::size_t lv = assign_level(b, m.cfg.patch_size);
    rows.push_back(reshape(
        roi_align(levels[lv], b, static_cast<double>(strides[lv])),
        {1, flat}));
  }
  return rows.size() == 1 ? rows[0] : concat_rows(rows);
}

}  // namespace

LossBreakdown forward_train_batch(const VLDetModel& m,
                                  const std::vector<BatchExample>& batch,
                                  const std::vector<std::string>& prompt_names,
                                  Rng& rng) {
  if (batch.empty()) {
    throw std::invalid_argument("forward_train_batch: empty batch");
  }
  Var l_cls = embed_prompts(m, prompt_names);
  std::vector<Var> globals, captions;
  globals.reserve(batch.size());
  captions.reserve(batch.size());
  Var aal_acc, ral_acc, rpnbox_acc, roibox_acc;
  for (const BatchExample& ex : batch) {
    if (ex.scene == nullptr) {
      throw std::invalid_argument("forward_train_batch: null scene");
    }
    const SceneRecord& sc = *ex.scene;
    if (sc.boxes.size() != ex.gt_rows.size()) {
      throw std::invalid_argument(
          "forward_train_batch: scene '" + sc.scene_id + "' has " +
          std::to_string(sc.boxes.size()) + " boxes but " +
          std::to_string(ex.gt_rows.size()) + " target rows");
    }
    for (std::size_t row : ex.gt_rows) {
      if (row == 0 || row >= prompt_names.size()) {
        throw std::invalid_argument(
            "forward_train_batch: target row out of range in scene '" +
            sc.scene_id + "'");
      }
    }

    Var l_cap = encode_text({tokenize(sc.caption, TokenMode::kCaption, m.cfg)},
                            m.text, m.cfg);
    Var v0 = encode_image(sc.image, m.image, m.cfg);
    globals.push_back(project_image_global(v0, m.global_proj));
    captions.push_back(l_cap);

    VlPubOutput pub = vl_pub(v0, l_cls, &l_cap, m.pub, m.cfg);
    RpnOutput rpn = sig_rpn_forward(pub.levels, pub.l_cls_pub, m.rpn);
    MatchResult match = match_anchors(m.anchors, sc.boxes, rng);
    Var aal =
        loss_aal(rpn.objectness_embeddings, rpn.l_cls_rpn, match, m.cfg.tau_aal);
    Var rpnbox = rpn_box_loss(rpn.deltas, m.anchors, sc.boxes, match);

    const std::vector<double> scores = objectness_scores_raw(
        rpn.objectness_embeddings->value, rpn.l_cls_rpn->value, m.cfg.tau_aal);
    const std::vector<Proposal> proposals =
        select_proposals(scores, rpn.deltas->value, m.anchors, m.cfg.image_w,
                         m.cfg.image_h, kProposalsTrain);
    RoiSample sample = sample_rois(proposals, sc.boxes, ex.gt_rows, rng);
    Var patches = pool_regions(m, pub.levels, sample.boxes);
    RoiOutput roi = roi_head_forward(patches, m.roi);
    Var ral = loss_ral(roi.region_embeddings, rpn.l_cls_rpn,
                       sample.target_class, m.cfg.tau_ral);
    Var roibox = roi_box_loss(roi.box_deltas, sample, sc.boxes);

    aal_acc = aal_acc ? add(aal_acc, aal) : aal;
    ral_acc = ral_acc ? add(ral_acc, ral) : ral;
    rpnbox_acc = rpnbox_acc ? add(rpnbox_acc, rpnbox) : rpnbox;
    roibox_acc = roibox_acc ? add(roibox_acc, roibox) : roibox;
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  Var img_rows = globals.size() == 1 ? globals[0] : concat_rows(globals);
  Var cap_rows = captions.size() == 1 ? captions[0] : concat_rows(captions);
  Var icl = loss_icl(img_rows, cap_rows, m.cfg.minibatch_m, m.cfg.tau_icl);
  return total_loss(icl, scale(aal_acc, inv_b), scale(ral_acc, inv_b),
                    scale(rpnbox_acc, inv_b), scale(roibox_acc, inv_b), m.cfg);
}

std::vector<Detection> forward_infer(const VLDetModel& m, const Tensor& image,
                                     const std::vector<std::string>& prompt_names) {
  Var l_cls = embed_prompts(m, prompt_names);
  Var v0 = encode_image(image, m.image, m.cfg);
  VlPubOutput pub = vl_pub(v0, l_cls, nullptr, m.pub, m.cfg);
  RpnOutput rpn = sig_rpn_forward(pub.levels, pub.l_cls_pub, m.rpn);
  const std::vector<double> scores = objectness_scores_raw(
      rpn.objectness_embeddings->value, rpn.l_cls_rpn->value, m.cfg.tau_aal);
  const std::vector<Proposal> proposals =
      select_proposals(scores, rpn.deltas->value, m.anchors, m.cfg.image_w,
                       m.cfg.image_h, kProposalsInfer);
  if (proposals.empty()) return {};
  std::vector<Box> boxes;
  boxes.reserve(proposals.size());
  for (const Proposal& p : proposals) boxes.push_back(p.box);
  Var patches = pool_regions(m, pub.levels, boxes);
  RoiOutput roi = roi_head_forward(patches, m.roi);
  return postprocess_detections(roi.region_embeddings->value,
                                roi.box_deltas->value, boxes,
                                rpn.l_cls_rpn->value, m.cfg.tau_ral,
                                m.cfg.image_w, m.cfg.image_h);
}

}  // namespace vldet
