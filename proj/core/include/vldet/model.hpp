#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vldet/config.hpp"
#include "vldet/encoders.hpp"
#include "vldet/graph.hpp"
#include "vldet/objective.hpp"
#include "vldet/params.hpp"
#include "vldet/pyramid.hpp"
#include "vldet/rng.hpp"
#include "vldet/roi.hpp"
#include "vldet/rpn.hpp"
#include "vldet/synthdata.hpp"
#include "vldet/tensor.hpp"

namespace vldet {

struct VLDetModel {
  Config cfg;
  Registry reg;
  TextEncoderParams text;
  ImageEncoderParams image;
  GlobalProjParams global_proj;
  VlPubParams pub;
  SigRpnParams rpn;
  RoiHeadParams roi;
  AnchorSet anchors;
};

// Parameter creation order is fixed (text encoder, image encoder, global
// projection, pyramid, rpn, roi head) so registries from equal (cfg, seed)
// match parameter for parameter.
VLDetModel build_model(const Config& cfg, std::uint64_t seed);

// Prepends the background name to a foreground prompt list.
std::vector<std::string> with_background(const std::vector<std::string>& fg);

// Embeds one pooled text row per prompt name; row order follows the input.
Var embed_prompts(const VLDetModel& m, const std::vector<std::string>& names);

struct BatchExample {
  const SceneRecord* scene = nullptr;
  // Prompt row index (1..N-1) per gt box; dataset class ids are remapped by
  // the caller since the training prompt list covers base classes only.
  std::vector<std::size_t> gt_rows;
};

// Full training forward pass over a batch: caption branch active, per-image
// detection losses averaged, contrastive loss over the batch pairs.
LossBreakdown forward_train_batch(const VLDetModel& m,
                                  const std::vector<BatchExample>& batch,
                                  const std::vector<std::string>& prompt_names,
                                  Rng& rng);

// Inference: no caption branch, 32 proposals, postprocessed detections with
// class ids indexing prompt_names rows.
std::vector<Detection> forward_infer(const VLDetModel& m, const Tensor& image,
                                     const std::vector<std::string>& prompt_names);

}  // namespace vldet
