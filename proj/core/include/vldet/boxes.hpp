#pragma once

#include <array>
#include <cstddef>
#include <vector>

namespace vldet {

struct Box {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;
  double w() const { return x2 - x1; }
  double h() const { return y2 - y1; }
  double area() const { return w() * h(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
};

// Intersection over union; throws on a box with non-positive extent.
double iou(const Box& a, const Box& b);

Box clip_box(const Box& b, double image_w, double image_h);

// Faster R-CNN delta parameterization relative to an anchor:
// dx = (cx - cx_a) / w_a, dy = (cy - cy_a) / h_a, dw = ln(w / w_a),
// dh = ln(h / h_a). Decode clamps dw, dh at ln(1000/16) before
// exponentiation and inverts encode exactly below the clamp.
std::array<double, 4> encode_deltas(const Box& box, const Box& anchor);
Box decode_deltas(const Box& anchor, double dx, double dy, double dw,
                  double dh);

// Greedy non-maximum suppression. Keeps indices in descending score order
// (ties broken by lower input index); a box is suppressed when its IoU with
// an already-kept box exceeds the threshold.
std::vector<std::size_t> nms(const std::vector<Box>& boxes,
                             const std::vector<double>& scores,
                             double iou_threshold);

}  // namespace vldet
