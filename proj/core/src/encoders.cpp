#include "vldet/encoders.hpp"

#include <stdexcept>

#include "vldet/ops.hpp"

namespace vldet {

namespace {

constexpr double kMaskOff = -1e30;

}  // namespace

TransformerBlockParams make_transformer_block(Registry& reg,
                                              const std::string& prefix,
                                              std::size_t width, Rng& rng) {
  TransformerBlockParams p;
  p.ln1_w = reg.add(prefix + "/ln1/weight", init_ones({width}));
  p.ln1_b = reg.add(prefix + "/ln1/bias", init_zeros({width}));
  p.q_w = reg.add(prefix + "/attn_q/weight", init_normal({width, width}, rng));
  p.q_b = reg.add(prefix + "/attn_q/bias", init_zeros({width}));
  p.k_w = reg.add(prefix + "/attn_k/weight", init_normal({width, width}, rng));
  p.k_b = reg.add(prefix + "/attn_k/bias", init_zeros({width}));
  p.v_w = reg.add(prefix + "/attn_v/weight", init_normal({width, width}, rng));
  p.v_b = reg.add(prefix + "/attn_v/bias", init_zeros({width}));
  p.o_w = reg.add(prefix + "/attn_out/weight",
                  init_normal({width, width}, rng));
  p.o_b = reg.add(prefix + "/attn_out/bias", init_zeros({width}));
  p.ln2_w = reg.add(prefix + "/ln2/weight", init_ones({width}));
  p.ln2_b = reg.add(prefix + "/ln2/bias", init_zeros({width}));
  p.fc_w = reg.add(prefix + "/mlp_fc/weight",
                   init_normal({width, 4 * width}, rng));
  p.fc_b = reg.add(prefix + "/mlp_fc/bias", init_zeros({4 * width}));
  p.proj_w = reg.add(prefix + "/mlp_proj/weight",
                     init_normal({4 * width, width}, rng));
  p.proj_b = reg.add(prefix + "/mlp_proj/bias", init_zeros({width}));
  return p;
}

Var transformer_block(const Var& x, const TransformerBlockParams& p,
                      std::size_t heads, const Tensor* mask) {
  Var h = layer_norm_rows(x, p.ln1_w, p.ln1_b);
  Var q = linear(h, p.q_w, p.q_b);
  Var k = linear(h, p.k_w, p.k_b);
  Var v = linear(h, p.v_w, p.v_b);
  Var att = scaled_dot_product_attention(q, k, v, heads, mask);
  Var y = add(x, linear(att, p.o_w, p.o_b));
  Var h2 = layer_norm_rows(y, p.ln2_w, p.ln2_b);
  Var m = linear(gelu(linear(h2, p.fc_w, p.fc_b)), p.proj_w, p.proj_b);
  return add(y, m);
}

TextEncoderParams make_text_encoder(Registry& reg, const Config& cfg,
                                    Rng& rng) {
  TextEncoderParams p;
  p.token_embedding = reg.add("encoders/text/token_embedding/weight",
                              init_normal({cfg.vocab_size, cfg.c_l}, rng));
  p.pos_embedding =
      reg.add("encoders/text/pos_embedding/weight",
              init_normal({cfg.max_caption_tokens, cfg.c_l}, rng));
  for (std::size_t i = 0; i < cfg.encoder_depth; ++i) {
    p.blocks.push_back(make_transformer_block(
        reg, "encoders/text/block" + std::to_string(i), cfg.c_l, rng));
  }
  return p;
}

ImageEncoderParams make_image_encoder(Registry& reg, const Config& cfg,
                                      Rng& rng) {
  ImageEncoderParams p;
  const std::size_t patch_dim = cfg.patch_size * cfg.patch_size * 3;
  p.patch_w = reg.add("encoders/image/patch_embedding/weight",
                      init_normal({patch_dim, cfg.c_v_trunk}, rng));
  p.patch_b = reg.add("encoders/image/patch_embedding/bias",
                      init_zeros({cfg.c_v_trunk}));
  p.pos_embedding =
      reg.add("encoders/image/pos_embedding/weight",
              init_normal({cfg.grid_h() * cfg.grid_w(), cfg.c_v_trunk}, rng));
  for (std::size_t i = 0; i < cfg.encoder_depth; ++i) {
    p.blocks.push_back(make_transformer_block(
        reg, "encoders/image/block" + std::to_string(i), cfg.c_v_trunk, rng));
  }
  return p;
}

GlobalProjParams make_global_proj(Registry& reg, const Config& cfg, Rng& rng) {
  GlobalProjParams p;
  p.w = reg.add("encoders/global_proj/weight",
                init_normal({cfg.c_v_trunk, cfg.c_l}, rng));
  p.b = reg.add("encoders/global_proj/bias", init_zeros({cfg.c_l}));
  return p;
}

Var encode_text(const std::vector<TokenSequence>& seqs,
                const TextEncoderParams& p, const Config& cfg) {
  if (seqs.empty()) {
    throw std::invalid_argument("encode_text: empty sequence batch");
  }
  std::vector<Var> rows;
  rows.reserve(seqs.size());
  for (const TokenSequence& seq : seqs) {
    const std::size_t t = seq.ids.size();
    if (t == 0) throw std::invalid_argument("encode_text: empty sequence");
    if (t > cfg.max_caption_tokens) {
      throw std::invalid_argument(
          "encode_text: sequence length " + std::to_string(t) +
          " exceeds position table " +
          std::to_string(cfg.max_caption_tokens));
    }
    for (std::size_t id : seq.ids) {
      if (id >= cfg.vocab_size) {
        throw std::invalid_argument("encode_text: token id " +
                                    std::to_string(id) +
                                    " out of range for vocab_size " +
                                    std::to_string(cfg.vocab_size));
      }
    }
    Var x = add(gather_rows(p.token_embedding, seq.ids),
                slice_rows(p.pos_embedding, 0, t));
    Tensor mask({t, t});
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t j = 0; j < t; ++j) {
        mask.at(i, j) = seq.mask[j] ? 0.0 : kMaskOff;
      }
    }
    const bool padded = seq.real_count() != t;
    for (const auto& blk : p.blocks) {
      x = transformer_block(x, blk, cfg.heads, padded ? &mask : nullptr);
    }
    rows.push_back(masked_mean_rows(x, seq.mask));
  }
  return rows.size() == 1 ? rows[0] : concat_rows(rows);
}

Var encode_image(const Tensor& image, const ImageEncoderParams& p,
                 const Config& cfg) {
  if (image.rank() != 3 || image.dim(0) != cfg.image_h ||
      image.dim(1) != cfg.image_w || image.dim(2) != 3) {
    throw std::invalid_argument("encode_image: expected [" +
                                std::to_string(cfg.image_h) + "," +
                                std::to_string(cfg.image_w) +
                                ",3] image, got " + image.shape_str());
  }
  const std::size_t gh = cfg.grid_h();
  const std::size_t gw = cfg.grid_w();
  const std::size_t ps = cfg.patch_size;
  const std::size_t patch_dim = ps * ps * 3;
  Tensor patches({gh * gw, patch_dim});
  for (std::size_t gy = 0; gy < gh; ++gy) {
    for (std::size_t gx = 0; gx < gw; ++gx) {
      double* row = patches.data() + (gy * gw + gx) * patch_dim;
      for (std::size_t dy = 0; dy < ps; ++dy) {
        for (std::size_t dx = 0; dx < ps; ++dx) {
          for (std::size_t c = 0; c < 3; ++c) {
            row[(dy * ps + dx) * 3 + c] =
                image.at(gy * ps + dy, gx * ps + dx, c);
          }
        }
      }
    }
  }
  Var x = linear(make_constant(std::move(patches)), p.patch_w, p.patch_b);
  x = add(x, p.pos_embedding);
  for (const auto& blk : p.blocks) {
    x = transformer_block(x, blk, cfg.heads);
  }
  return x;
}

Var project_image_global(const Var& v0_tokens, const GlobalProjParams& p) {
  return linear(mean_rows(v0_tokens), p.w, p.b);
}

}  // namespace vldet
