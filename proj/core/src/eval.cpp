#include "vldet/eval.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "vldet/threading.hpp"

namespace vldet {

double average_precision(std::vector<ApDetection> detections,
                         const std::vector<std::vector<Box>>& gt_per_scene) {
  std::size_t total_gt = 0;
  for (const auto& g : gt_per_scene) total_gt += g.size();
  if (total_gt == 0) {
    throw std::invalid_argument(
        "average_precision: no gt boxes, AP undefined");
  }
  for (const ApDetection& d : detections) {
    if (d.scene >= gt_per_scene.size()) {
      throw std::invalid_argument("average_precision: scene index out of range");
    }
  }
  std::stable_sort(detections.begin(), detections.end(),
                   [](const ApDetection& a, const ApDetection& b) {
                     return a.score > b.score;
                   });
  std::vector<std::vector<bool>> used(gt_per_scene.size());
  for (std::size_t s = 0; s < gt_per_scene.size(); ++s) {
    used[s].assign(gt_per_scene[s].size(), false);
  }
  const std::size_t n = detections.size();
  std::vector<double> precision(n), recall(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const ApDetection& d = detections[i];
    const auto& gts = gt_per_scene[d.scene];
    double best = 0.0;
    std::size_t best_g = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[d.scene][g]) continue;
      const double v = iou(d.box, gts[g]);
      if (v >= kEvalIou && v > best) {
        best = v;
        best_g = g;
      }
    }
    if (best_g < gts.size()) {
      used[d.scene][best_g] = true;
      ++tp;
    }
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(total_gt);
  }
  // Right-to-left precision envelope, then 101 evenly spaced recall points.
  std::vector<double> envelope(n);
  double running = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    running = std::max(running, precision[i]);
    envelope[i] = running;
  }
  double ap = 0.0;
  std::size_t k = 0;
  for (int r = 0; r <= 100; ++r) {
    const double thr = static_cast<double>(r) / 100.0;
    while (k < n && recall[k] < thr) ++k;
    if (k == n) break;
    ap += envelope[k];
  }
  return ap / 101.0;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["ap50_base"] = has_base ? nlohmann::json(ap50_base) : nlohmann::json();
  j["ap50_novel"] = has_novel ? nlohmann::json(ap50_novel) : nlohmann::json();
  j["ap50_all"] = has_all ? nlohmann::json(ap50_all) : nlohmann::json();
  nlohmann::json classes = nlohmann::json::array();
  for (const ClassEval& c : per_class) {
    classes.push_back({{"id", c.class_id},
                       {"name", c.name},
                       {"ap", c.defined ? nlohmann::json(c.ap) : nlohmann::json()},
                       {"defined", c.defined},
                       {"gt_count", c.gt_count},
                       {"det_count", c.det_count}});
  }
  j["classes"] = classes;
  return j.dump(2);
}

EvalReport evaluate(const VLDetModel& model, const Dataset& ds,
                    const std::vector<std::string>& prompt_names) {
  if (ds.eval_idx.empty()) {
    throw std::runtime_error("evaluate: dataset has no eval scenes");
  }
  if (prompt_names.empty()) {
    throw std::invalid_argument("evaluate: empty prompt set");
  }
  {
    std::unordered_set<std::string> seen;
    for (const auto& n : prompt_names) {
      if (!seen.insert(n).second) {
        throw std::invalid_argument("evaluate: duplicate prompt '" + n + "'");
      }
    }
  }
  std::unordered_map<std::string, std::size_t> id_of;
  for (std::size_t i = 0; i < ds.vocab.class_names.size(); ++i) {
    id_of[ds.vocab.class_names[i]] = i + 1;
  }
  const std::vector<std::string> full = with_background(prompt_names);

  const std::size_t n_scenes = ds.eval_idx.size();
  std::vector<std::vector<Detection>> results(n_scenes);
  parallel_for(n_scenes, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      results[i] =
          forward_infer(model, ds.scenes[ds.eval_idx[i]].image, full);
    }
  });

  std::unordered_set<std::size_t> base_set(ds.vocab.base_ids.begin(),
                                           ds.vocab.base_ids.end());
  std::unordered_set<std::size_t> novel_set(ds.vocab.novel_ids.begin(),
                                            ds.vocab.novel_ids.end());
  EvalReport rep;
  double base_sum = 0.0, novel_sum = 0.0, all_sum = 0.0;
  std::size_t base_n = 0, novel_n = 0, all_n = 0;
  for (std::size_t p = 0; p < prompt_names.size(); ++p) {
    ClassEval ce;
    ce.name = prompt_names[p];
    auto it = id_of.find(ce.name);
    ce.class_id = it == id_of.end() ? 0 : it->second;

    std::vector<std::vector<Box>> gt(n_scenes);
    for (std::size_t i = 0; i < n_scenes; ++i) {
      const SceneRecord& sc = ds.scenes[ds.eval_idx[i]];
      for (std::size_t g = 0; g < sc.boxes.size(); ++g) {
        if (ce.class_id != 0 && sc.class_ids[g] == ce.class_id) {
          gt[i].push_back(sc.boxes[g]);
          ++ce.gt_count;
        }
      }
    }
    std::vector<ApDetection> dets;
    for (std::size_t i = 0; i < n_scenes; ++i) {
      for (const Detection& d : results[i]) {
        if (d.class_id == p + 1) {
          dets.push_back({i, d.box, d.score});
        }
      }
    }
    ce.det_count = dets.size();
    ce.defined = ce.gt_count > 0;
    if (ce.defined) {
      ce.ap = average_precision(std::move(dets), gt);
      all_sum += ce.ap;
      ++all_n;
      if (base_set.count(ce.class_id) != 0) {
        base_sum += ce.ap;
        ++base_n;
      } else if (novel_set.count(ce.class_id) != 0) {
        novel_sum += ce.ap;
        ++novel_n;
      }
    }
    rep.per_class.push_back(std::move(ce));
  }
  rep.has_base = base_n > 0;
  rep.has_novel = novel_n > 0;
  rep.has_all = all_n > 0;
  if (rep.has_base) rep.ap50_base = base_sum / static_cast<double>(base_n);
  if (rep.has_novel) rep.ap50_novel = novel_sum / static_cast<double>(novel_n);
  if (rep.has_all) rep.ap50_all = all_sum / static_cast<double>(all_n);
  return rep;
}

}  // namespace vldet
