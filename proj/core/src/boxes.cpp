#include "vldet/boxes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace vldet {

namespace {

const double kDeltaClamp = std::log(1000.0 / 16.0);

void require_valid(const Box& b, const char* who) {
  if (!(b.w() > 0.0) || !(b.h() > 0.0)) {
    throw std::invalid_argument(std::string(who) + ": degenerate box (" +
                                std::to_string(b.x1) + "," +
                                std::to_string(b.y1) + "," +
                                std::to_string(b.x2) + "," +
                                std::to_string(b.y2) + ")");
  }
}

}  // namespace

double iou(const Box& a, const Box& b) {
  require_valid(a, "iou");
  require_valid(b, "iou");
  const double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

Box clip_box(const Box& b, double image_w, double image_h) {
  Box out;
  out.x1 = std::clamp(b.x1, 0.0, image_w);
  out.y1 = std::clamp(b.y1, 0.0, image_h);
  out.x2 = std::clamp(b.x2, 0.0, image_w);
  out.y2 = std::clamp(b.y2, 0.0, image_h);
  return out;
}

std::array<double, 4> encode_deltas(const Box& box, const Box& anchor) {
  require_valid(anchor, "encode_deltas");
  require_valid(box, "encode_deltas");
  return {(box.cx() - anchor.cx()) / anchor.w(),
          (box.cy() - anchor.cy()) / anchor.h(),
          std::log(box.w() / anchor.w()), std::log(box.h() / anchor.h())};
}

Box decode_deltas(const Box& anchor, double dx, double dy, double dw,
                  double dh) {
  require_valid(anchor, "decode_deltas");
  const double cx = anchor.cx() + dx * anchor.w();
  const double cy = anchor.cy() + dy * anchor.h();
  const double w = anchor.w() * std::exp(std::min(dw, kDeltaClamp));
  const double h = anchor.h() * std::exp(std::min(dh, kDeltaClamp));
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

std::vector<std::size_t> nms(const std::vector<Box>& boxes,
                             const std::vector<double>& scores,
                             double iou_threshold) {
  if (boxes.size() != scores.size()) {
    throw std::invalid_argument("nms: " + std::to_string(boxes.size()) +
                                " boxes vs " + std::to_string(scores.size()) +
                                " scores");
  }
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return scores[a] > scores[b];
                   });
  std::vector<std::size_t> kept;
  for (std::size_t cand : order) {
    bool suppressed = false;
    for (std::size_t k : kept) {
      if (iou(boxes[cand], boxes[k]) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

}  // namespace vldet
