#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace bcdet {

// Axis-aligned rectangle in pixel coordinates, corners [x1,y1] to [x2,y2].
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
};

struct Detection {
  Box box;
  int class_id = 0;
  double score = 0.0;
};

// Per-anchor assignment: gt index >= 0 for positives.
struct MatchResult {
  static constexpr int kNegative = -1;
  static constexpr int kIgnore = -2;
  std::vector<int> assignment;  // one entry per anchor

  int positive_count() const;
};

double iou(const Box& a, const Box& b);
// IoU minus the enclosing-box penalty; in (-1, 1]. A degenerate enclosing
// box falls back to plain IoU.
double giou(const Box& a, const Box& b);

// Square anchors of every size centered at ((j+0.5)*stride, (i+0.5)*stride),
// row-major over cells, size-minor: index = (i*wf + j)*len(sizes) + s.
std::vector<Box> generate_anchors(int hf, int wf, int stride,
                                  const std::vector<double>& sizes);

inline constexpr double kDeltaClamp = 4.135166556742356;  // ln(1000/16)

// Center/size delta coding: dx=(gx-ax)/aw, dy=(gy-ay)/ah, dw=ln(gw/aw),
// dh=ln(gh/ah). decode inverts, clamping dw/dh at kDeltaClamp.
std::array<double, 4> encode_deltas(const Box& anchor, const Box& gt);
Box decode_deltas(const Box& anchor, const std::array<double, 4>& deltas);

// For each GT the k anchors with smallest center L1 distance become positive
// (ties to the lower anchor index; an anchor claimed by several GTs goes to
// the closer one). Selected anchors with IoU < 0.15 against their GT are
// demoted to negative; unselected anchors with max-IoU > 0.7 are ignored.
MatchResult uniform_match(const std::vector<Box>& anchors,
                          const std::vector<Box>& gts, int k = 4);

// One focal-loss term: -alpha_t * (1-p_t)^gamma * ln(p_t), with p clamped
// to [1e-7, 1-1e-7].
double focal_term(double prob, int target, double alpha = 0.25,
                  double gamma = 2.0);

double giou_loss_term(const Box& pred, const Box& gt);  // 1 - giou

// Greedy class-wise suppression: sort by descending score (ties to the
// lower input index), drop boxes overlapping a kept same-class box above
// the threshold. Output sorted by descending score.
std::vector<Detection> nms(const std::vector<Detection>& dets,
                           double iou_threshold = 0.6);

struct PostprocessConfig {
  double score_threshold = 0.01;
  int pre_nms_top = 300;
  double nms_threshold = 0.6;
  int max_detections = 100;
};

// From per-anchor fused scores and deltas to final detections for one image.
// scores: [A_total * K] row-major (anchor-major, class-minor); deltas:
// [A_total * 4]. Boxes are clipped to [0, resolution].
std::vector<Detection> decode_detections(const std::vector<double>& scores,
                                         const std::vector<double>& deltas,
                                         const std::vector<Box>& anchors,
                                         int num_classes, int resolution,
                                         const PostprocessConfig& pp);

// One text line per detection: image_id class_id score(6dp) x1 y1 x2 y2(2dp).
std::string format_detection_line(int image_id, const Detection& det);

}  // namespace bcdet
