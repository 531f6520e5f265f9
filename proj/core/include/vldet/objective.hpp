#pragma once

#include <array>
#include <cstddef>

#include "vldet/config.hpp"
#include "vldet/graph.hpp"

namespace vldet {

// Mini-batch symmetric contrastive loss over paired image/caption rows.
// The B pairs are partitioned by index order into B/M groups of M; within
// each group both softmax directions of cosine(image, caption)/tau
// contribute a log term, and the 2B terms are scaled by -1/(2B). M must
// divide B. M = 1 gives exactly zero.
Var loss_icl(const Var& image_globals, const Var& caption_embeddings,
             std::size_t m, double tau);

struct LossBreakdown {
  double icl = 0.0;
  double aal = 0.0;
  double ral = 0.0;
  double rpn_box = 0.0;
  double roi_box = 0.0;
  double total = 0.0;
  std::array<double, 5> weights{};  // icl, aal, ral, rpn_box, roi_box
  Var total_var;                    // graph root for backward
};

// Weighted sum in fixed component order. Throws naming the first
// non-finite component.
LossBreakdown total_loss(const Var& icl, const Var& aal, const Var& ral,
                         const Var& rpn_box, const Var& roi_box,
                         const Config& cfg);

}  // namespace vldet
