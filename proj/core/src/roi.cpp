#include "vldet/roi.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

#include "vldet/ops.hpp"

namespace vldet {

std::size_t assign_level(const Box& b, std::size_t patch_size) {
  if (b.w() <= 0.0 || b.h() <= 0.0) {
    throw std::invalid_argument("assign_level: degenerate box");
  }
  const double canonical = 4.0 * static_cast<double>(patch_size);
  const double k =
      3.0 + std::floor(std::log2(std::sqrt(b.w() * b.h()) / canonical));
  const double clamped = std::min(5.0, std::max(1.0, k));
  return static_cast<std::size_t>(clamped) - 1;
}

std::vector<std::size_t> assign_levels(const std::vector<Box>& boxes,
                                       std::size_t patch_size) {
  std::vector<std::size_t> out;
  out.reserve(boxes.size());
  for (const Box& b : boxes) out.push_back(assign_level(b, patch_size));
  return out;
}

Var roi_align(const Var& feature, const Box& box, double stride) {
  if (feature->value.rank() != 3) {
    throw std::invalid_argument("roi_align: feature must be [H,W,C], got " +
                                feature->value.shape_str());
  }
  if (!(box.w() > 0.0) || !(box.h() > 0.0)) {
    throw std::invalid_argument("roi_align: degenerate box");
  }
  if (!(stride > 0.0)) {
    throw std::invalid_argument("roi_align: stride must be positive");
  }
  const std::size_t fh = feature->value.dim(0);
  const std::size_t fw = feature->value.dim(1);
  const std::size_t c = feature->value.dim(2);
  const std::size_t s = kRoiAlignSize;

  struct Tap {
    std::size_t cell[4];  // flat H*W indices
    double w[4];
  };
  // 4 samples per output cell at the (1/4, 3/4) sub-cell positions.
  auto taps = std::make_shared<std::vector<Tap>>();
  taps->reserve(s * s * 4);
  const double bin_w = box.w() / static_cast<double>(s);
  const double bin_h = box.h() / static_cast<double>(s);
  for (std::size_t by = 0; by < s; ++by) {
    for (std::size_t bx = 0; bx < s; ++bx) {
      for (int sy = 0; sy < 2; ++sy) {
        for (int sx = 0; sx < 2; ++sx) {
          const double yi =
              box.y1 + (static_cast<double>(by) + (sy + 0.5) / 2.0) * bin_h;
          const double xi =
              box.x1 + (static_cast<double>(bx) + (sx + 0.5) / 2.0) * bin_w;
          // Cell centers sit at (i + 0.5) * stride in image space.
          double fy = yi / stride - 0.5;
          double fx = xi / stride - 0.5;
          fy = std::min(std::max(fy, 0.0), static_cast<double>(fh - 1));
          fx = std::min(std::max(fx, 0.0), static_cast<double>(fw - 1));
          const std::size_t y0 = static_cast<std::size_t>(fy);
          const std::size_t x0 = static_cast<std::size_t>(fx);
          const std::size_t y1 = std::min(y0 + 1, fh - 1);
          const std::size_t x1 = std::min(x0 + 1, fw - 1);
          const double dy = fy - static_cast<double>(y0);
          const double dx = fx - static_cast<double>(x0);
          Tap t;
          t.cell[0] = y0 * fw + x0;
          t.cell[1] = y0 * fw + x1;
          t.cell[2] = y1 * fw + x0;
          t.cell[3] = y1 * fw + x1;
          t.w[0] = (1.0 - dy) * (1.0 - dx);
          t.w[1] = (1.0 - dy) * dx;
          t.w[2] = dy * (1.0 - dx);
          t.w[3] = dy * dx;
          taps->push_back(t);
        }
      }
    }
  }

  Tensor out({s, s, c});
  const double* f = feature->value.data();
  for (std::size_t bin = 0; bin < s * s; ++bin) {
    double* o = out.data() + bin * c;
    for (std::size_t smp = 0; smp < 4; ++smp) {
      const Tap& t = (*taps)[bin * 4 + smp];
      for (std::size_t ch = 0; ch < c; ++ch) {
        o[ch] += 0.25 * (t.w[0] * f[t.cell[0] * c + ch] +
                         t.w[1] * f[t.cell[1] * c + ch] +
                         t.w[2] * f[t.cell[2] * c + ch] +
                         t.w[3] * f[t.cell[3] * c + ch]);
      }
    }
  }
  return custom_op(std::move(out), {feature}, [taps, s, c](Node& self) {
    if (!self.parents[0]->requires_grad) return;
    const Tensor& g = self.grad();
    Tensor& pg = self.parents[0]->ensure_grad();
    for (std::size_t bin = 0; bin < s * s; ++bin) {
      const double* go = g.data() + bin * c;
      for (std::size_t smp = 0; smp < 4; ++smp) {
        const Tap& t = (*taps)[bin * 4 + smp];
        for (std::size_t k = 0; k < 4; ++k) {
          double* dst = pg.data() + t.cell[k] * c;
          const double w = 0.25 * t.w[k];
          for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += w * go[ch];
        }
      }
    }
  });
}

RoiHeadParams make_roi_head(Registry& reg, const Config& cfg, Rng& rng) {
  RoiHeadParams p;
  const std::size_t in = kRoiAlignSize * kRoiAlignSize * cfg.c_pyr;
  const std::size_t hid = cfg.roi_hidden;
  p.fc1_w = reg.add("roi/fc1/weight", init_normal({in, hid}, rng));
  p.fc1_b = reg.add("roi/fc1/bias", init_zeros({hid}));
  p.fc2_w = reg.add("roi/fc2/weight", init_normal({hid, hid}, rng));
  p.fc2_b = reg.add("roi/fc2/bias", init_zeros({hid}));
  p.proj_w = reg.add("roi/region_proj/weight", init_normal({hid, cfg.c_l}, rng));
  p.proj_b = reg.add("roi/region_proj/bias", init_zeros({cfg.c_l}));
  p.delta_w = reg.add("roi/delta_head/weight", init_normal({hid, 4}, rng));
  p.delta_b = reg.add("roi/delta_head/bias", init_zeros({4}));
  return p;
}

RoiOutput roi_head_forward(const Var& patches, const RoiHeadParams& p) {
  if (patches->value.rank() != 2 ||
      patches->value.dim(1) != p.fc1_w->value.dim(0)) {
    throw std::invalid_argument("roi_head_forward: patches " +
                                patches->value.shape_str() +
                                " do not match fc1 " +
                                p.fc1_w->value.shape_str());
  }
  Var h = relu(linear(patches, p.fc1_w, p.fc1_b));
  h = relu(linear(h, p.fc2_w, p.fc2_b));
  RoiOutput out;
  out.region_embeddings = linear(h, p.proj_w, p.proj_b);
  out.box_deltas = linear(h, p.delta_w, p.delta_b);
  return out;
}

RoiSample sample_rois(const std::vector<Proposal>& proposals,
                      const std::vector<Box>& gt_boxes,
                      const std::vector<std::size_t>& gt_classes, Rng& rng) {
  if (gt_boxes.size() != gt_classes.size()) {
    throw std::invalid_argument("sample_rois: gt box/class count mismatch");
  }
  std::vector<Box> cand;
  cand.reserve(proposals.size() + gt_boxes.size());
  for (const Proposal& p : proposals) cand.push_back(p.box);
  // gt boxes join the pool so foreground regions exist from step one.
  cand.insert(cand.end(), gt_boxes.begin(), gt_boxes.end());

  std::vector<std::size_t> fg, bg, best_gt(cand.size(), 0);
  for (std::size_t i = 0; i < cand.size(); ++i) {
    double best = 0.0;
    for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
      const double v = iou(cand[i], gt_boxes[g]);
      if (v > best) {
        best = v;
        best_gt[i] = g;
      }
    }
    if (!gt_boxes.empty() && best >= kRoiFgIou) {
      fg.push_back(i);
    } else {
      bg.push_back(i);
    }
  }
  const std::size_t n_fg = std::min(kRoiSampleMaxFg, fg.size());
  if (n_fg < fg.size()) {
    rng.shuffle(fg);
    fg.resize(n_fg);
    std::sort(fg.begin(), fg.end());
  }
  const std::size_t n_bg = std::min(kRoiSample - n_fg, bg.size());
  if (n_bg < bg.size()) {
    rng.shuffle(bg);
    bg.resize(n_bg);
    std::sort(bg.begin(), bg.end());
  }
  RoiSample out;
  out.fg_count = fg.size();
  for (std::size_t i : fg) {
    out.boxes.push_back(cand[i]);
    out.target_class.push_back(gt_classes[best_gt[i]]);
    out.matched_gt.push_back(best_gt[i]);
  }
  for (std::size_t i : bg) {
    out.boxes.push_back(cand[i]);
    out.target_class.push_back(0);
    out.matched_gt.push_back(0);
  }
  return out;
}

Var loss_ral(const Var& region_embeddings, const Var& l_cls_rpn,
             const std::vector<std::size_t>& target_class, double tau) {
  if (target_class.empty()) {
    throw std::invalid_argument("loss_ral: empty region set");
  }
  if (region_embeddings->value.rank() != 2 ||
      region_embeddings->value.dim(0) != target_class.size()) {
    throw std::invalid_argument("loss_ral: embeddings " +
                                region_embeddings->value.shape_str() +
                                " vs " + std::to_string(target_class.size()) +
                                " targets");
  }
  if (!(tau > 0.0)) {
    throw std::invalid_argument("loss_ral: tau must be positive");
  }
  Var logits = scale(cosine_matrix(region_embeddings, l_cls_rpn), 1.0 / tau);
  return softmax_cross_entropy_mean(logits, target_class);
}

Var roi_box_loss(const Var& box_deltas, const RoiSample& sample,
                 const std::vector<Box>& gt_boxes) {
  if (sample.fg_count == 0) return make_constant(Tensor::zeros({1}));
  Tensor targets({sample.fg_count, 4});
  std::vector<std::size_t> rows(sample.fg_count);
  for (std::size_t i = 0; i < sample.fg_count; ++i) {
    rows[i] = i;  // foreground rows lead the sample
    const auto d =
        encode_deltas(gt_boxes[sample.matched_gt[i]], sample.boxes[i]);
    for (std::size_t j = 0; j < 4; ++j) targets.at(i, j) = d[j];
  }
  Var pred = gather_rows(box_deltas, rows);
  return mean_all(smooth_l1(pred, make_constant(std::move(targets)), 1.0));
}

std::vector<Detection> postprocess_detections(
    const Tensor& region_embeddings, const Tensor& box_deltas,
    const std::vector<Box>& roi_boxes, const Tensor& l_cls_rpn, double tau,
    std::size_t image_w, std::size_t image_h) {
  const std::size_t r = roi_boxes.size();
  if (region_embeddings.rank() != 2 || region_embeddings.dim(0) != r ||
      box_deltas.rank() != 2 || box_deltas.dim(0) != r ||
      box_deltas.dim(1) != 4) {
    throw std::invalid_argument(
        "postprocess_detections: outputs do not match " + std::to_string(r) +
        " regions");
  }
  if (l_cls_rpn.rank() != 2 || l_cls_rpn.dim(0) < 2 ||
      l_cls_rpn.dim(1) != region_embeddings.dim(1)) {
    throw std::invalid_argument("postprocess_detections: bad text shape " +
                                l_cls_rpn.shape_str());
  }
  constexpr double kEps = 1e-12;
  const std::size_t n = l_cls_rpn.dim(0);
  const std::size_t c = l_cls_rpn.dim(1);
  std::vector<double> l_inv(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t d = 0; d < c; ++d) {
      s += l_cls_rpn.at(j, d) * l_cls_rpn.at(j, d);
    }
    const double norm = std::sqrt(s);
    l_inv[j] = norm < kEps ? 0.0 : 1.0 / norm;
  }

  struct Cand {
    Box box;
    std::size_t class_id;
    double score;
  };
  std::vector<Cand> cands;
  std::vector<double> logits(n);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t d = 0; d < c; ++d) {
      s += region_embeddings.at(i, d) * region_embeddings.at(i, d);
    }
    const double norm = std::sqrt(s);
    const double v_inv = norm < kEps ? 0.0 : 1.0 / norm;
    double hi = -1e300;
    for (std::size_t j = 0; j < n; ++j) {
      double dotp = 0.0;
      for (std::size_t d = 0; d < c; ++d) {
        dotp += region_embeddings.at(i, d) * l_cls_rpn.at(j, d);
      }
      logits[j] = dotp * v_inv * l_inv[j] / tau;
      hi = std::max(hi, logits[j]);
    }
    double z = 0.0;
    std::size_t arg = 0;
    for (std::size_t j = 0; j < n; ++j) {
      z += std::exp(logits[j] - hi);
      if (logits[j] > logits[arg]) arg = j;
    }
    if (arg == 0) continue;
    const double prob = std::exp(logits[arg] - hi) / z;
    if (prob < kDetScoreMin) continue;
    Box b = decode_deltas(roi_boxes[i], box_deltas.at(i, 0),
                          box_deltas.at(i, 1), box_deltas.at(i, 2),
                          box_deltas.at(i, 3));
    b = clip_box(b, static_cast<double>(image_w),
                 static_cast<double>(image_h));
    if (!(b.w() > 0.0) || !(b.h() > 0.0)) continue;
    cands.push_back({b, arg, prob});
  }

  std::vector<Detection> dets;
  for (std::size_t cls = 1; cls < n; ++cls) {
    std::vector<Box> boxes;
    std::vector<double> scores;
    for (const Cand& cd : cands) {
      if (cd.class_id == cls) {
        boxes.push_back(cd.box);
        scores.push_back(cd.score);
      }
    }
    if (boxes.empty()) continue;
    for (std::size_t idx : nms(boxes, scores, kDetNmsIou)) {
      dets.push_back({boxes[idx], cls, scores[idx]});
    }
  }
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) {
                     return a.score > b.score;
                   });
  if (dets.size() > kDetMax) dets.resize(kDetMax);
  return dets;
}

}  // namespace vldet
