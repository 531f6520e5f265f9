#include "vldet/fusion.hpp"

#include <stdexcept>

#include "vldet/ops.hpp"

namespace vldet {

CrossAttentionParams make_vl_fuse(Registry& reg, const std::string& prefix,
                                  std::size_t c_v, std::size_t c_l,
                                  std::size_t heads, Rng& rng) {
  CrossAttentionParams p;
  p.heads = heads;
  p.v_query = reg.add(prefix + "/v_query/weight", init_normal({c_v, c_l}, rng));
  p.l_key = reg.add(prefix + "/l_key/weight", init_normal({c_l, c_l}, rng));
  p.l_value = reg.add(prefix + "/l_value/weight", init_normal({c_l, c_l}, rng));
  p.v_out = reg.add(prefix + "/v_out/weight", init_normal({c_l, c_v}, rng));
  p.l_query = reg.add(prefix + "/l_query/weight", init_normal({c_l, c_l}, rng));
  p.v_key = reg.add(prefix + "/v_key/weight", init_normal({c_v, c_l}, rng));
  p.v_value = reg.add(prefix + "/v_value/weight", init_normal({c_v, c_l}, rng));
  p.l_out = reg.add(prefix + "/l_out/weight", init_normal({c_l, c_l}, rng));
  return p;
}

std::pair<Var, Var> vl_fuse(const Var& v, const Var& l,
                            const CrossAttentionParams& p) {
  if (v->value.rank() != 2 || l->value.rank() != 2) {
    throw std::invalid_argument("vl_fuse: expected rank-2 token matrices, got " +
                                v->value.shape_str() + " and " +
                                l->value.shape_str());
  }
  if (v->value.dim(1) != p.v_query->value.dim(0) ||
      l->value.dim(1) != p.l_key->value.dim(0)) {
    throw std::invalid_argument("vl_fuse: widths " + v->value.shape_str() +
                                "/" + l->value.shape_str() +
                                " do not match the parameters");
  }
  Var att_v = scaled_dot_product_attention(
      matmul(v, p.v_query), matmul(l, p.l_key), matmul(l, p.l_value), p.heads);
  Var v_out = add(v, matmul(att_v, p.v_out));
  Var att_l = scaled_dot_product_attention(
      matmul(l, p.l_query), matmul(v, p.v_key), matmul(v, p.v_value), p.heads);
  Var l_out = add(l, matmul(att_l, p.l_out));
  return {v_out, l_out};
}

TextRefineParams make_text_refine(Registry& reg, const std::string& prefix,
                                  std::size_t c_l, std::size_t heads,
                                  Rng& rng) {
  TextRefineParams p;
  p.heads = heads;
  p.block = make_transformer_block(reg, prefix + "/block0", c_l, rng);
  return p;
}

Var text_refine(const Var& l, const TextRefineParams& p) {
  return transformer_block(l, p.block, p.heads);
}

}  // namespace vldet
