#include "bcdet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "json.hpp"

namespace bcdet {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct AreaRange {
  double lo, hi;
};

constexpr AreaRange kAllAreas{0.0, kInf};
constexpr AreaRange kSmall{0.0, 32.0 * 32.0};
constexpr AreaRange kMedium{32.0 * 32.0, 96.0 * 96.0};
constexpr AreaRange kLarge{96.0 * 96.0, kInf};

bool in_range(double area, const AreaRange& r) {
  return area >= r.lo && area < r.hi;
}

struct RankedDet {
  double score;
  int image;
  int index;  // per-image order after sorting, for deterministic ties
  char tp;
  char ignored;
};

// Greedy matching for one image/class with COCO-style area filtering:
// ground truth outside the range is "ignore"; a det matching only ignored
// GT does not count, and an unmatched det whose own area is out of range is
// dropped rather than counted as FP.
void match_one_image(const std::vector<Detection>& dets,
                     const std::vector<Box>& gt_boxes, double thr,
                     const AreaRange& range, int image_idx,
                     std::vector<RankedDet>& out, int& n_gt_counted) {
  std::vector<char> gt_ignore(gt_boxes.size());
  for (size_t j = 0; j < gt_boxes.size(); ++j) {
    gt_ignore[j] = !in_range(gt_boxes[j].area(), range);
    if (!gt_ignore[j]) ++n_gt_counted;
  }
  std::vector<char> matched(gt_boxes.size(), 0);
  for (size_t i = 0; i < dets.size(); ++i) {
    int best = -1;
    double best_iou = 0.0;
    for (size_t j = 0; j < gt_boxes.size(); ++j) {
      if (matched[j] || gt_ignore[j]) continue;
      const double v = iou(dets[i].box, gt_boxes[j]);
      if (v >= thr && (best < 0 || v > best_iou)) {
        best = static_cast<int>(j);
        best_iou = v;
      }
    }
    RankedDet rd{dets[i].score, image_idx, static_cast<int>(i), 0, 0};
    if (best >= 0) {
      matched[static_cast<size_t>(best)] = 1;
      rd.tp = 1;
    } else {
      // Matched only by an ignored GT, or out-of-range itself: ignore.
      bool ign = !in_range(dets[i].box.area(), range);
      if (!ign) {
        for (size_t j = 0; j < gt_boxes.size() && !ign; ++j)
          if (gt_ignore[j] && !matched[j] &&
              iou(dets[i].box, gt_boxes[j]) >= thr)
            ign = true;
      }
      rd.ignored = ign ? 1 : 0;
    }
    out.push_back(rd);
  }
}

std::vector<Detection> class_dets_sorted(const std::vector<Detection>& dets,
                                         int cls) {
  std::vector<Detection> out;
  for (const auto& d : dets)
    if (d.class_id == cls) out.push_back(d);
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.score > b.score;
  });
  return out;
}

std::vector<Box> class_gts(const GroundTruth& gt, int cls) {
  std::vector<Box> out;
  for (size_t i = 0; i < gt.labels.size(); ++i)
    if (gt.labels[i] == cls) out.push_back(gt.boxes[i]);
  return out;
}

// AP for one class at one threshold/area range over all images.
// NaN when the class has no counted ground truth.
double class_ap(const std::vector<std::vector<Detection>>& dets,
                const std::vector<GroundTruth>& gts, int cls, double thr,
                const AreaRange& range) {
  std::vector<RankedDet> ranked;
  int n_gt = 0;
  for (size_t img = 0; img < gts.size(); ++img) {
    const auto cd = class_dets_sorted(dets[img], cls);
    match_one_image(cd, class_gts(gts[img], cls), thr, range,
                    static_cast<int>(img), ranked, n_gt);
  }
  if (n_gt == 0) return std::numeric_limits<double>::quiet_NaN();
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const RankedDet& a, const RankedDet& b) {
                     if (a.score != b.score) return a.score > b.score;
                     if (a.image != b.image) return a.image < b.image;
                     return a.index < b.index;
                   });
  std::vector<char> flags;
  flags.reserve(ranked.size());
  for (const auto& r : ranked)
    if (!r.ignored) flags.push_back(r.tp);
  return average_precision(flags, n_gt);
}

// Mean over classes that have ground truth; 0 when none do.
double mean_ap(const std::vector<std::vector<Detection>>& dets,
               const std::vector<GroundTruth>& gts, int num_classes,
               double thr, const AreaRange& range) {
  double total = 0;
  int n = 0;
  for (int c = 0; c < num_classes; ++c) {
    const double ap = class_ap(dets, gts, c, thr, range);
    if (!std::isnan(ap)) {
      total += ap;
      ++n;
    }
  }
  return n > 0 ? total / n : 0.0;
}

}  // namespace

std::vector<char> match_dets(const std::vector<Detection>& dets,
                             const std::vector<Box>& gt_boxes,
                             double iou_thr) {
  std::vector<RankedDet> ranked;
  int n_gt = 0;
  match_one_image(dets, gt_boxes, iou_thr, kAllAreas, 0, ranked, n_gt);
  std::vector<char> flags(ranked.size());
  for (size_t i = 0; i < ranked.size(); ++i) flags[i] = ranked[i].tp;
  return flags;
}

double average_precision(const std::vector<char>& tp_flags, int n_gt) {
  if (n_gt < 0) throw std::invalid_argument("average_precision: n_gt < 0");
  if (n_gt == 0) return std::numeric_limits<double>::quiet_NaN();
  const size_t n = tp_flags.size();
  std::vector<double> recall(n), precision(n);
  int tp = 0;
  for (size_t i = 0; i < n; ++i) {
    tp += tp_flags[i] ? 1 : 0;
    recall[i] = static_cast<double>(tp) / n_gt;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  // Envelope: running max of precision from the right.
  for (size_t i = n; i-- > 1;)
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  // Sample at recalls {0, 0.01, ..., 1.00}.
  double total = 0;
  size_t ptr = 0;
  for (int j = 0; j <= 100; ++j) {
    const double r = j / 100.0;
    while (ptr < n && recall[ptr] + 1e-12 < r) ++ptr;
    if (ptr < n) total += precision[ptr];
  }
  return total / 101.0;
}

EvalResult coco_eval(const std::vector<std::vector<Detection>>& dets,
                     const std::vector<GroundTruth>& gts, int num_classes) {
  if (dets.size() != gts.size())
    throw std::invalid_argument("coco_eval: dets/gts image counts differ");

  // COCO convention: at most 100 detections per image.
  std::vector<std::vector<Detection>> capped = dets;
  for (auto& d : capped) {
    std::stable_sort(d.begin(), d.end(), [](const auto& a, const auto& b) {
      return a.score > b.score;
    });
    if (d.size() > 100) d.resize(100);
  }

  EvalResult r;
  double ap_sum = 0;
  for (int t = 0; t < 10; ++t) {
    const double thr = 0.5 + 0.05 * t;
    const double m = mean_ap(capped, gts, num_classes, thr, kAllAreas);
    ap_sum += m;
    if (t == 0) r.ap50 = m;
    if (t == 5) r.ap75 = m;
  }
  r.ap = ap_sum / 10.0;

  auto bucket_mean = [&](const AreaRange& range) {
    double total = 0;
    for (int t = 0; t < 10; ++t)
      total += mean_ap(capped, gts, num_classes, 0.5 + 0.05 * t, range);
    return total / 10.0;
  };
  r.ap_small = bucket_mean(kSmall);
  r.ap_medium = bucket_mean(kMedium);
  r.ap_large = bucket_mean(kLarge);

  for (int c = 0; c < num_classes; ++c) {
    const double ap = class_ap(capped, gts, c, 0.5, kAllAreas);
    if (!std::isnan(ap)) r.per_class_ap[c] = ap;
  }
  return r;
}

std::pair<std::map<int, double>, double> map_at_iou(
    const std::vector<std::vector<Detection>>& dets,
    const std::vector<GroundTruth>& gts, int num_classes, double thr) {
  if (thr <= 0.0 || thr >= 1.0)
    throw std::invalid_argument("map_at_iou: threshold must be in (0,1)");
  std::map<int, double> per_class;
  double total = 0;
  int n = 0;
  for (int c = 0; c < num_classes; ++c) {
    const double ap = class_ap(dets, gts, c, thr, kAllAreas);
    if (!std::isnan(ap)) {
      per_class[c] = ap;
      total += ap;
      ++n;
    }
  }
  return {per_class, n > 0 ? total / n : 0.0};
}

std::string format_eval_report(const EvalResult& r,
                               const std::vector<std::string>& class_names) {
  char buf[256];
  std::string out;
  out += "   AP     AP50   AP75   APS    APM    APL\n";
  std::snprintf(buf, sizeof(buf),
                "   %-6.1f %-6.1f %-6.1f %-6.1f %-6.1f %-6.1f\n", 100 * r.ap,
                100 * r.ap50, 100 * r.ap75, 100 * r.ap_small,
                100 * r.ap_medium, 100 * r.ap_large);
  out += buf;
  out += "per-class AP at IoU=0.5:\n";
  for (const auto& [cls, ap] : r.per_class_ap) {
    const std::string name = cls < static_cast<int>(class_names.size())
                                 ? class_names[static_cast<size_t>(cls)]
                                 : std::to_string(cls);
    std::snprintf(buf, sizeof(buf), "   %-12s %.1f\n", name.c_str(), 100 * ap);
    out += buf;
  }
  return out;
}

void write_eval_json(const std::string& path, const EvalResult& r,
                     const std::vector<std::string>& class_names) {
  nlohmann::ordered_json j;
  j["ap"] = r.ap;
  j["ap50"] = r.ap50;
  j["ap75"] = r.ap75;
  j["ap_small"] = r.ap_small;
  j["ap_medium"] = r.ap_medium;
  j["ap_large"] = r.ap_large;
  nlohmann::ordered_json pc = nlohmann::ordered_json::object();
  for (const auto& [cls, ap] : r.per_class_ap) {
    const std::string name = cls < static_cast<int>(class_names.size())
                                 ? class_names[static_cast<size_t>(cls)]
                                 : std::to_string(cls);
    pc[name] = ap;
  }
  j["per_class_ap50"] = pc;
  std::ofstream os(path);
  if (!os) throw std::runtime_error("eval: cannot write " + path);
  os << j.dump(2) << "\n";
}

}  // namespace bcdet
