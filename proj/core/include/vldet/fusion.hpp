#pragma once

#include <string>
#include <utility>

#include "vldet/encoders.hpp"
#include "vldet/graph.hpp"
#include "vldet/params.hpp"

namespace vldet {

// Bi-directional cross-attention: each direction projects its query modality
// and the opposite modality's keys/values into a shared attention width
// (C_l), attends, then projects back to the query modality's width. Pure
// projection matrices, no biases, so zeroed parameters make the layer an
// exact identity through the residuals.
struct CrossAttentionParams {
  Var v_query, l_key, l_value, v_out;
  Var l_query, v_key, v_value, l_out;
  std::size_t heads = 1;
};

CrossAttentionParams make_vl_fuse(Registry& reg, const std::string& prefix,
                                  std::size_t c_v, std::size_t c_l,
                                  std::size_t heads, Rng& rng);

// v: [T_v, C_v], l: [T_l, C_l] -> (v_out same shape as v, l_out same as l).
std::pair<Var, Var> vl_fuse(const Var& v, const Var& l,
                            const CrossAttentionParams& p);

struct TextRefineParams {
  TransformerBlockParams block;
  std::size_t heads = 1;
};

TextRefineParams make_text_refine(Registry& reg, const std::string& prefix,
                                  std::size_t c_l, std::size_t heads,
                                  Rng& rng);

Var text_refine(const Var& l, const TextRefineParams& p);

}  // namespace vldet
