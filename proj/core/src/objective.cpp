#include "vldet/objective.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "vldet/ops.hpp"

namespace vldet {

Var loss_icl(const Var& image_globals, const Var& caption_embeddings,
             std::size_t m, double tau) {
  if (image_globals->value.rank() != 2 ||
      !image_globals->value.same_shape(caption_embeddings->value)) {
    throw std::invalid_argument(
        "loss_icl: paired embeddings must share shape, got " +
        image_globals->value.shape_str() + " vs " +
        caption_embeddings->value.shape_str());
  }
  if (!(tau > 0.0)) {
    throw std::invalid_argument("loss_icl: tau must be positive");
  }
  const std::size_t b = image_globals->value.dim(0);
  if (m == 0 || b % m != 0) {
    throw std::invalid_argument("loss_icl: minibatch size " +
                                std::to_string(m) + " does not divide batch " +
                                std::to_string(b));
  }
  Var acc;
  for (std::size_t g = 0; g < b / m; ++g) {
    Var img = slice_rows(image_globals, g * m, (g + 1) * m);
    Var cap = slice_rows(caption_embeddings, g * m, (g + 1) * m);
    Var s = scale(cosine_matrix(img, cap), 1.0 / tau);
    Var term = sum_all(sub(add(logsumexp_rows(s), logsumexp_rows(transpose(s))),
                           scale(diag(s), 2.0)));
    acc = acc ? add(acc, term) : term;
  }
  return scale(acc, 1.0 / (2.0 * static_cast<double>(b)));
}

LossBreakdown total_loss(const Var& icl, const Var& aal, const Var& ral,
                         const Var& rpn_box, const Var& roi_box,
                         const Config& cfg) {
  const struct {
    const char* name;
    const Var& v;
    double w;
  } parts[] = {{"icl", icl, cfg.w_icl},
               {"aal", aal, cfg.w_aal},
               {"ral", ral, cfg.w_ral},
               {"rpn_box", rpn_box, cfg.w_rpnbox},
               {"roi_box", roi_box, cfg.w_roibox}};
  Var total;
  for (const auto& p : parts) {
    if (p.v->value.size() != 1) {
      throw std::invalid_argument(std::string("total_loss: component '") +
                                  p.name + "' is not scalar");
    }
    if (!std::isfinite(p.v->value[0])) {
      throw std::runtime_error(std::string("total_loss: non-finite component '") +
                               p.name + "'");
    }
    Var weighted = scale(p.v, p.w);
    total = total ? add(total, weighted) : weighted;
  }
  LossBreakdown out;
  out.icl = icl->value[0];
  out.aal = aal->value[0];
  out.ral = ral->value[0];
  out.rpn_box = rpn_box->value[0];
  out.roi_box = roi_box->value[0];
  out.weights = {cfg.w_icl, cfg.w_aal, cfg.w_ral, cfg.w_rpnbox, cfg.w_roibox};
  out.total_var = total;
  out.total = total->value[0];
  if (!std::isfinite(out.total)) {
    throw std::runtime_error("total_loss: non-finite total");
  }
  return out;
}

}  // namespace vldet
