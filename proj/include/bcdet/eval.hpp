#pragma once

#include <map>
#include <string>
#include <vector>

#include "bcdet/detection.hpp"

namespace bcdet {

struct GroundTruth {
  std::vector<Box> boxes;
  std::vector<int> labels;
};

// All values in [0,1]; buckets or classes with no ground truth are excluded
// from means (an entirely empty bucket reports 0).
struct EvalResult {
  double ap = 0;        // mean over IoU 0.50:0.05:0.95 and classes
  double ap50 = 0, ap75 = 0;
  double ap_small = 0, ap_medium = 0, ap_large = 0;
  std::map<int, double> per_class_ap;  // at IoU 0.5
};

// Greedy matcher for one image and one class: dets must be sorted by
// descending score; each det takes the unmatched GT with the highest
// IoU >= thr. Returns one TP flag per det.
std::vector<char> match_dets(const std::vector<Detection>& dets,
                             const std::vector<Box>& gt_boxes, double iou_thr);

// 101-point interpolated AP from rank-ordered TP flags. Returns NaN when
// n_gt == 0 (undefined; callers exclude it from means).
double average_precision(const std::vector<char>& tp_flags, int n_gt);

EvalResult coco_eval(const std::vector<std::vector<Detection>>& dets,
                     const std::vector<GroundTruth>& gts, int num_classes);

// Single-threshold class-wise AP and its mean over classes with ground truth.
std::pair<std::map<int, double>, double> map_at_iou(
    const std::vector<std::vector<Detection>>& dets,
    const std::vector<GroundTruth>& gts, int num_classes, double thr = 0.4);

std::string format_eval_report(const EvalResult& r,
                               const std::vector<std::string>& class_names);
void write_eval_json(const std::string& path, const EvalResult& r,
                     const std::vector<std::string>& class_names);

}  // namespace bcdet
