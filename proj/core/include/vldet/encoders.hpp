#pragma once

#include <string>
#include <vector>

#include "vldet/config.hpp"
#include "vldet/graph.hpp"
#include "vldet/params.hpp"
#include "vldet/tokenizer.hpp"

namespace vldet {

// Pre-norm transformer block (MLP ratio 4), shared by both encoders and the
// text refinement layer.
struct TransformerBlockParams {
  Var ln1_w, ln1_b;
  Var q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;
  Var ln2_w, ln2_b;
  Var fc_w, fc_b, proj_w, proj_b;
};

TransformerBlockParams make_transformer_block(Registry& reg,
                                              const std::string& prefix,
                                              std::size_t width, Rng& rng);
// x: [T, width]; optional additive attention mask [T, T].
Var transformer_block(const Var& x, const TransformerBlockParams& p,
                      std::size_t heads, const Tensor* mask = nullptr);

struct TextEncoderParams {
  Var token_embedding;  // [vocab_size, C_l]
  Var pos_embedding;    // [max_caption_tokens, C_l]
  std::vector<TransformerBlockParams> blocks;
};

struct ImageEncoderParams {
  Var patch_w;        // [p*p*3, C_v_trunk]
  Var patch_b;        // [C_v_trunk]
  Var pos_embedding;  // [grid_h*grid_w, C_v_trunk]
  std::vector<TransformerBlockParams> blocks;
};

struct GlobalProjParams {
  Var w;  // [C_v_trunk, C_l]
  Var b;  // [C_l]
};

TextEncoderParams make_text_encoder(Registry& reg, const Config& cfg,
                                    Rng& rng);
ImageEncoderParams make_image_encoder(Registry& reg, const Config& cfg,
                                      Rng& rng);
GlobalProjParams make_global_proj(Registry& reg, const Config& cfg, Rng& rng);

// One pooled C_l row per sequence; sequences never attend to each other.
Var encode_text(const std::vector<TokenSequence>& seqs,
                const TextEncoderParams& p, const Config& cfg);

// image: [H, W, 3] with values in [0, 1] -> token matrix
// [grid_h*grid_w, C_v_trunk], row index = gy * grid_w + gx.
Var encode_image(const Tensor& image, const ImageEncoderParams& p,
                 const Config& cfg);

// Mean over tokens, then linear map to C_l. Feeds the image-level
// contrastive loss.
Var project_image_global(const Var& v0_tokens, const GlobalProjParams& p);

}  // namespace vldet
