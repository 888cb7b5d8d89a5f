#include "bcdet/detection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace bcdet {

int MatchResult::positive_count() const {
  int n = 0;
  for (int a : assignment)
    if (a >= 0) ++n;
  return n;
}

double iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double giou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  const double i = uni > 0.0 ? inter / uni : 0.0;
  const double ex = std::max(a.x2, b.x2) - std::min(a.x1, b.x1);
  const double ey = std::max(a.y2, b.y2) - std::min(a.y1, b.y1);
  const double enclosing = ex * ey;
  if (enclosing <= 0.0) return i;
  return i - (enclosing - uni) / enclosing;
}

std::vector<Box> generate_anchors(int hf, int wf, int stride,
                                  const std::vector<double>& sizes) {
  if (stride <= 0) throw std::invalid_argument("anchors: stride must be > 0");
  std::vector<Box> anchors;
  anchors.reserve(static_cast<size_t>(hf) * wf * sizes.size());
  for (int i = 0; i < hf; ++i) {
    const double cy = (i + 0.5) * stride;
    for (int j = 0; j < wf; ++j) {
      const double cx = (j + 0.5) * stride;
      for (double s : sizes)
        anchors.push_back({cx - s / 2, cy - s / 2, cx + s / 2, cy + s / 2});
    }
  }
  return anchors;
}

std::array<double, 4> encode_deltas(const Box& anchor, const Box& gt) {
  if (anchor.width() <= 0 || anchor.height() <= 0)
    throw std::invalid_argument("encode_deltas: anchor must have positive area");
  if (gt.width() <= 0 || gt.height() <= 0)
    throw std::invalid_argument("encode_deltas: gt must have positive area");
  return {(gt.cx() - anchor.cx()) / anchor.width(),
          (gt.cy() - anchor.cy()) / anchor.height(),
          std::log(gt.width() / anchor.width()),
          std::log(gt.height() / anchor.height())};
}

Box decode_deltas(const Box& anchor, const std::array<double, 4>& deltas) {
  const double dw = std::min(deltas[2], kDeltaClamp);
  const double dh = std::min(deltas[3], kDeltaClamp);
  const double cx = anchor.cx() + deltas[0] * anchor.width();
  const double cy = anchor.cy() + deltas[1] * anchor.height();
  const double w = anchor.width() * std::exp(dw);
  const double h = anchor.height() * std::exp(dh);
  return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

MatchResult uniform_match(const std::vector<Box>& anchors,
                          const std::vector<Box>& gts, int k) {
  if (k < 1) throw std::invalid_argument("uniform_match: k must be >= 1");
  MatchResult res;
  res.assignment.assign(anchors.size(), MatchResult::kNegative);
  if (gts.empty()) return res;

  // Distance of each selected anchor to its GT, for multi-claim resolution.
  std::vector<double> sel_dist(anchors.size(),
                               std::numeric_limits<double>::infinity());
  std::vector<int> order(anchors.size());
  for (size_t g = 0; g < gts.size(); ++g) {
    const double gx = gts[g].cx(), gy = gts[g].cy();
    std::iota(order.begin(), order.end(), 0);
    const size_t take = std::min<size_t>(static_cast<size_t>(k), order.size());
    auto closer = [&](int a, int b) {
      const double da =
          std::fabs(anchors[a].cx() - gx) + std::fabs(anchors[a].cy() - gy);
      const double db =
          std::fabs(anchors[b].cx() - gx) + std::fabs(anchors[b].cy() - gy);
      if (da != db) return da < db;
      return a < b;  // deterministic tie-break
    };
    std::partial_sort(order.begin(), order.begin() + take, order.end(),
                      closer);
    for (size_t i = 0; i < take; ++i) {
      const int a = order[i];
      const double d = std::fabs(anchors[a].cx() - gx) +
                       std::fabs(anchors[a].cy() - gy);
      // Closer GT wins a contested anchor; equal distance keeps the earlier GT.
      if (d < sel_dist[a]) {
        sel_dist[a] = d;
        res.assignment[a] = static_cast<int>(g);
      }
    }
  }

  for (size_t a = 0; a < anchors.size(); ++a) {
    if (res.assignment[a] >= 0) {
      // Selected but barely overlapping: demote.
      if (iou(anchors[a], gts[static_cast<size_t>(res.assignment[a])]) < 0.15)
        res.assignment[a] = MatchResult::kNegative;
    } else {
      double best = 0.0;
      for (const auto& g : gts) best = std::max(best, iou(anchors[a], g));
      if (best > 0.7) res.assignment[a] = MatchResult::kIgnore;
    }
  }
  return res;
}

double focal_term(double prob, int target, double alpha, double gamma) {
  const double p = std::clamp(prob, 1e-7, 1.0 - 1e-7);
  const double p_t = target == 1 ? p : 1.0 - p;
  const double a_t = target == 1 ? alpha : 1.0 - alpha;
  return -a_t * std::pow(1.0 - p_t, gamma) * std::log(p_t);
}

double giou_loss_term(const Box& pred, const Box& gt) {
  return 1.0 - giou(pred, gt);
}

std::vector<Detection> nms(const std::vector<Detection>& dets,
                           double iou_threshold) {
  std::vector<int> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    return a < b;
  });
  std::vector<Detection> kept;
  std::vector<char> suppressed(dets.size(), 0);
  for (size_t i = 0; i < order.size(); ++i) {
    const int a = order[i];
    if (suppressed[a]) continue;
    kept.push_back(dets[a]);
    for (size_t j = i + 1; j < order.size(); ++j) {
      const int b = order[j];
      if (suppressed[b] || dets[b].class_id != dets[a].class_id) continue;
      if (iou(dets[a].box, dets[b].box) > iou_threshold) suppressed[b] = 1;
    }
  }
  return kept;
}

std::vector<Detection> decode_detections(const std::vector<double>& scores,
                                         const std::vector<double>& deltas,
                                         const std::vector<Box>& anchors,
                                         int num_classes, int resolution,
                                         const PostprocessConfig& pp) {
  const size_t n_anchors = anchors.size();
  if (scores.size() != n_anchors * static_cast<size_t>(num_classes))
    throw std::invalid_argument("decode_detections: score buffer size mismatch");
  if (deltas.size() != n_anchors * 4)
    throw std::invalid_argument("decode_detections: delta buffer size mismatch");

  // Keep the pre_nms_top best candidates above the score threshold.
  std::vector<int64_t> cand;
  for (int64_t i = 0; i < static_cast<int64_t>(scores.size()); ++i)
    if (scores[static_cast<size_t>(i)] > pp.score_threshold) cand.push_back(i);
  std::stable_sort(cand.begin(), cand.end(), [&](int64_t a, int64_t b) {
    if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)])
      return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
    return a < b;
  });
  if (cand.size() > static_cast<size_t>(pp.pre_nms_top))
    cand.resize(static_cast<size_t>(pp.pre_nms_top));

  std::vector<Detection> dets;
  dets.reserve(cand.size());
  for (int64_t idx : cand) {
    const int64_t a = idx / num_classes;
    const int cls = static_cast<int>(idx % num_classes);
    const std::array<double, 4> d = {
        deltas[static_cast<size_t>(a * 4 + 0)],
        deltas[static_cast<size_t>(a * 4 + 1)],
        deltas[static_cast<size_t>(a * 4 + 2)],
        deltas[static_cast<size_t>(a * 4 + 3)]};
    Box box = decode_deltas(anchors[static_cast<size_t>(a)], d);
    box.x1 = std::clamp(box.x1, 0.0, static_cast<double>(resolution));
    box.y1 = std::clamp(box.y1, 0.0, static_cast<double>(resolution));
    box.x2 = std::clamp(box.x2, 0.0, static_cast<double>(resolution));
    box.y2 = std::clamp(box.y2, 0.0, static_cast<double>(resolution));
    dets.push_back({box, cls, scores[static_cast<size_t>(idx)]});
  }
  std::vector<Detection> kept = nms(dets, pp.nms_threshold);
  if (kept.size() > static_cast<size_t>(pp.max_detections))
    kept.resize(static_cast<size_t>(pp.max_detections));
  return kept;
}

std::string format_detection_line(int image_id, const Detection& det) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%d %d %.6f %.2f %.2f %.2f %.2f", image_id,
                det.class_id, det.score, det.box.x1, det.box.y1, det.box.x2,
                det.box.y2);
  return buf;
}

}  // namespace bcdet
