#include "vldet/battery.hpp"

#include <algorithm>
#include <stdexcept>
#include <utility>

#include "vldet/fusion.hpp"
#include "vldet/gradcheck.hpp"
#include "vldet/objective.hpp"
#include "vldet/ops.hpp"
#include "vldet/pyramid.hpp"
#include "vldet/rng.hpp"
#include "vldet/roi.hpp"
#include "vldet/rpn.hpp"

namespace vldet {

namespace {

constexpr double kTau = 0.07;

Tensor randn(Rng& rng, const std::vector<std::size_t>& shape,
             double stddev = 1.0) {
  Tensor t = Tensor::zeros(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, stddev);
  return t;
}

// Small enough that a full finite-difference sweep stays cheap, big enough
// to exercise every pyramid level (grid 4x4, five levels down to 1x1).
Config tiny_config() {
  Config cfg;
  cfg.image_h = 16;
  cfg.image_w = 16;
  cfg.patch_size = 4;
  cfg.c_v_trunk = 4;
  cfg.c_pyr = 4;
  cfg.c_l = 4;
  cfg.heads = 2;
  cfg.encoder_depth = 1;
  cfg.n_classes = 3;
  cfg.roi_hidden = 8;
  return cfg;
}

// Registry inits are meant for training (tiny weights, identity norms);
// redraw everything at a healthy scale so activations are well-conditioned
// for finite differences.
void redraw_params(Registry& reg, Rng& rng, double stddev) {
  for (const auto& p : reg.all()) {
    p->node->value = randn(rng, p->node->value.shape(), stddev);
  }
}

GradCheckReport check_loss_icl(std::uint64_t seed, double eps, double tol) {
  Rng rng(seed);
  const std::vector<Tensor> inputs = {randn(rng, {4, 6}), randn(rng, {4, 6})};
  return grad_check(
      [](const std::vector<Var>& in) {
        return loss_icl(in[0], in[1], 2, kTau);
      },
      inputs, eps, tol);
}

GradCheckReport check_loss_aal(std::uint64_t seed, double eps, double tol) {
  Rng rng(seed);
  MatchResult match;
  match.labels = {1, 0, 1, -1, 0, -1};
  match.matched_gt.assign(6, 0);
  match.sampled_pos = {0, 2};
  match.sampled_neg = {1, 4};
  const std::vector<Tensor> inputs = {randn(rng, {6, 5}), randn(rng, {3, 5})};
  return grad_check(
      [match](const std::vector<Var>& in) {
        return loss_aal(in[0], in[1], match, kTau);
      },
      inputs, eps, tol);
}

GradCheckReport check_loss_ral(std::uint64_t seed, double eps, double tol) {
  Rng rng(seed);
  const std::vector<std::size_t> targets = {1, 0, 2, 1, 0};
  const std::vector<Tensor> inputs = {randn(rng, {5, 4}), randn(rng, {3, 4})};
  return grad_check(
      [targets](const std::vector<Var>& in) {
        return loss_ral(in[0], in[1], targets, kTau);
      },
      inputs, eps, tol);
}

GradCheckReport check_rpn_box_loss(std::uint64_t seed, double eps,
                                   double tol) {
  Rng rng(seed);
  AnchorSet anchors;
  anchors.boxes = {Box{0, 0, 16, 16}, Box{8, 8, 24, 24}, Box{2, 2, 10, 14},
                   Box{4, 1, 20, 9}};
  anchors.level = {0, 0, 0, 0};
  anchors.level_offset = {0, 4};
  anchors.anchors_per_cell = 1;
  MatchResult match;
  match.labels = {1, -1, 0, 1};
  match.matched_gt = {0, 0, 0, 1};
  match.sampled_pos = {0, 3};
  match.sampled_neg = {2};
  const std::vector<Box> gt = {Box{1, 1, 15, 15}, Box{5, 2, 18, 10}};
  const std::vector<Tensor> inputs = {randn(rng, {4, 4}, 0.5)};
  return grad_check(
      [anchors, match, gt](const std::vector<Var>& in) {
        return rpn_box_loss(in[0], anchors, gt, match);
      },
      inputs, eps, tol);
}

GradCheckReport check_roi_box_loss(std::uint64_t seed, double eps,
                                   double tol) {
  Rng rng(seed);
  RoiSample sample;
  sample.boxes = {Box{1, 1, 13, 13}, Box{2, 3, 11, 12}, Box{0, 0, 8, 8}};
  sample.target_class = {1, 2, 0};
  sample.matched_gt = {0, 1, 0};
  sample.fg_count = 2;
  const std::vector<Box> gt = {Box{2, 2, 12, 12}, Box{3, 2, 10, 13}};
  const std::vector<Tensor> inputs = {randn(rng, {3, 4}, 0.5)};
  return grad_check(
      [sample, gt](const std::vector<Var>& in) {
        return roi_box_loss(in[0], sample, gt);
      },
      inputs, eps, tol);
}

GradCheckReport check_vl_fuse(std::uint64_t seed, double eps, double tol) {
  Rng rng(seed);
  std::vector<Tensor> inputs = {randn(rng, {4, 4}), randn(rng, {3, 4})};
  for (int i = 0; i < 8; ++i) inputs.push_back(randn(rng, {4, 4}, 0.5));
  return grad_check(
      [](const std::vector<Var>& in) {
        CrossAttentionParams p;
        p.v_query = in[2];
        p.l_key = in[3];
        p.l_value = in[4];
        p.v_out = in[5];
        p.l_query = in[6];
        p.v_key = in[7];
        p.v_value = in[8];
        p.l_out = in[9];
        p.heads = 2;
        const auto [v2, l2] = vl_fuse(in[0], in[1], p);
        return add(mean_all(v2), mean_all(l2));
      },
      inputs, eps, tol);
}

GradCheckReport check_text_refine(std::uint64_t seed, double eps, double tol) {
  Rng rng(seed);
  std::vector<Tensor> inputs = {randn(rng, {3, 4})};
  auto vec = [&rng](std::size_t n) { return randn(rng, {n}, 0.5); };
  auto mat = [&rng](std::size_t r, std::size_t c) {
    return randn(rng, {r, c}, 0.5);
  };
  inputs.push_back(vec(4));
  inputs.push_back(vec(4));
  for (int i = 0; i < 4; ++i) {
    inputs.push_back(mat(4, 4));
    inputs.push_back(vec(4));
  }
  inputs.push_back(vec(4));
  inputs.push_back(vec(4));
  inputs.push_back(mat(4, 16));
  inputs.push_back(vec(16));
  inputs.push_back(mat(16, 4));
  inputs.push_back(vec(4));
  return grad_check(
      [](const std::vector<Var>& in) {
        TransformerBlockParams b;
        b.ln1_w = in[1];
        b.ln1_b = in[2];
        b.q_w = in[3];
        b.q_b = in[4];
        b.k_w = in[5];
        b.k_b = in[6];
        b.v_w = in[7];
        b.v_b = in[8];
        b.o_w = in[9];
        b.o_b = in[10];
        b.ln2_w = in[11];
        b.ln2_b = in[12];
        b.fc_w = in[13];
        b.fc_b = in[14];
        b.proj_w = in[15];
        b.proj_b = in[16];
        TextRefineParams p;
        p.block = b;
        p.heads = 2;
        return mean_all(text_refine(in[0], p));
      },
      inputs, eps, tol);
}

GradCheckReport check_vl_pub(std::uint64_t seed, double eps, double tol) {
  Rng rng(seed);
  const Config cfg = tiny_config();
  Registry reg;
  Rng prng(derive_seed(seed, 1));
  const VlPubParams params = make_vl_pub(reg, cfg, prng);
  redraw_params(reg, prng, 0.5);
  const std::vector<Tensor> inputs = {randn(rng, {16, 4}), randn(rng, {3, 4}),
                                      randn(rng, {1, 4})};
  return grad_check(
      [params, cfg](const std::vector<Var>& in) {
        const VlPubOutput out = vl_pub(in[0], in[1], &in[2], params, cfg);
        Var acc = mean_all(out.levels[0]);
        for (std::size_t i = 1; i < out.levels.size(); ++i) {
          acc = add(acc, mean_all(out.levels[i]));
        }
        return add(acc, mean_all(out.l_cls_pub));
      },
      inputs, eps, tol);
}

GradCheckReport check_sig_rpn(std::uint64_t seed, double eps, double tol) {
  Rng rng(seed);
  const Config cfg = tiny_config();
  Registry reg;
  Rng prng(derive_seed(seed, 1));
  const SigRpnParams params = make_sig_rpn(reg, cfg, prng);
  redraw_params(reg, prng, 0.5);
  const Tensor fine0 = randn(rng, {16, 16, 4});
  const Tensor fine1 = randn(rng, {8, 8, 4});
  const std::vector<Tensor> inputs = {randn(rng, {4, 4, 4}),
                                      randn(rng, {2, 2, 4}),
                                      randn(rng, {1, 1, 4}),
                                      randn(rng, {3, 4})};
  return grad_check(
      [params, fine0, fine1](const std::vector<Var>& in) {
        const std::vector<Var> levels = {make_constant(fine0),
                                         make_constant(fine1), in[0], in[1],
                                         in[2]};
        const RpnOutput out = sig_rpn_forward(levels, in[3], params);
        return add(add(mean_all(out.objectness_embeddings),
                       mean_all(out.deltas)),
                   mean_all(out.l_cls_rpn));
      },
      inputs, eps, tol);
}

GradCheckReport check_roi_head(std::uint64_t seed, double eps, double tol) {
  Rng rng(seed);
  const Config cfg = tiny_config();
  Registry reg;
  Rng prng(derive_seed(seed, 1));
  const RoiHeadParams params = make_roi_head(reg, cfg, prng);
  redraw_params(reg, prng, 0.3);
  RoiSample sample;
  sample.boxes = {Box{1, 1, 13, 13}, Box{2, 3, 11, 12}};
  sample.target_class = {1, 2};
  sample.matched_gt = {0, 1};
  sample.fg_count = 2;
  const std::vector<Box> gt = {Box{2, 2, 12, 12}, Box{3, 2, 10, 13}};
  const std::vector<Tensor> inputs = {randn(rng, {8, 8, 4}),
                                      randn(rng, {3, 4})};
  return grad_check(
      [params, sample, gt, cfg](const std::vector<Var>& in) {
        std::vector<Var> patches;
        for (const Box& b : sample.boxes) {
          patches.push_back(reshape(
              roi_align(in[0], b, 2.0),
              {1, kRoiAlignSize * kRoiAlignSize * cfg.c_pyr}));
        }
        const RoiOutput out = roi_head_forward(concat_rows(patches), params);
        const Var ral =
            loss_ral(out.region_embeddings, in[1], sample.target_class, kTau);
        return add(ral, roi_box_loss(out.box_deltas, sample, gt));
      },
      inputs, eps, tol);
}

}  // namespace

std::vector<BatteryEntry> run_gradient_battery(double tol, double eps,
                                               std::size_t n_seeds) {
  if (n_seeds == 0) {
    throw std::invalid_argument(
        "run_gradient_battery: n_seeds must be positive");
  }
  using CheckFn = GradCheckReport (*)(std::uint64_t, double, double);
  const std::vector<std::pair<const char*, CheckFn>> checks = {
      {"loss_icl", check_loss_icl},
      {"loss_aal", check_loss_aal},
      {"loss_ral", check_loss_ral},
      {"rpn_box_loss", check_rpn_box_loss},
      {"roi_box_loss", check_roi_box_loss},
      {"vl_fuse", check_vl_fuse},
      {"text_refine", check_text_refine},
      {"vl_pub", check_vl_pub},
      {"sig_rpn_forward", check_sig_rpn},
      {"roi_head", check_roi_head},
  };
  std::vector<BatteryEntry> out;
  out.reserve(checks.size());
  for (std::size_t c = 0; c < checks.size(); ++c) {
    BatteryEntry entry;
    entry.name = checks[c].first;
    entry.pass = true;
    for (std::size_t s = 0; s < n_seeds; ++s) {
      const std::uint64_t seed = derive_seed(0x9A77E51ull, c, s);
      const GradCheckReport r = checks[c].second(seed, eps, tol);
      entry.max_relative_error =
          std::max(entry.max_relative_error, r.max_relative_error);
      entry.pass = entry.pass && r.pass;
    }
    out.push_back(std::move(entry));
  }
  return out;
}

}  // namespace vldet
