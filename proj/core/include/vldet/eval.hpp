#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "vldet/boxes.hpp"
#include "vldet/model.hpp"
#include "vldet/synthdata.hpp"

namespace vldet {

inline constexpr double kEvalIou = 0.5;

struct ApDetection {
  std::size_t scene = 0;  // index into the gt-per-scene vector
  Box box;
  double score = 0.0;
};

// 101-point interpolated average precision at IoU 0.5. Detections are
// matched greedily in descending score order, each gt at most once, ties
// on the best IoU going to the lowest gt index. Throws when there is no
// gt box (AP undefined for the class).
double average_precision(std::vector<ApDetection> detections,
                         const std::vector<std::vector<Box>>& gt_per_scene);

struct ClassEval {
  std::size_t class_id = 0;  // dataset id, 0 when the prompt is unknown
  std::string name;
  double ap = 0.0;
  bool defined = false;  // false when the eval set has no gt for the class
  std::size_t gt_count = 0;
  std::size_t det_count = 0;
};

struct EvalReport {
  double ap50_base = 0.0;
  double ap50_novel = 0.0;
  double ap50_all = 0.0;
  bool has_base = false;
  bool has_novel = false;
  bool has_all = false;
  std::vector<ClassEval> per_class;
  std::string to_json() const;  // single document, absent splits are null
};

// Runs inference over every eval scene with the given foreground prompt
// names (embedded fresh through the text encoder) and aggregates per-class
// AP into class-mean splits. Scene-parallel; the report is identical for
// any worker count.
EvalReport evaluate(const VLDetModel& model, const Dataset& ds,
                    const std::vector<std::string>& prompt_names);

}  // namespace vldet
