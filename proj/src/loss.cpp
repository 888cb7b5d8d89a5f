#include <cmath>
#include <limits>
#include <stdexcept>

#include "bcdet/train.hpp"

namespace bcdet {

// Builds the training loss on the active tape from the raw head outputs.
//
// Index layout reminder: anchors are cell-major, size-minor
// (alpha = (h*Wf + w)*A + a) while tensor channels are anchor-major, so the
// flat offsets below translate between the two.
LossParts detection_loss(const ModelOutput& out,
                         const std::vector<GroundTruth>& batch_gt,
                         const std::vector<Box>& anchors, int num_classes,
                         const TrainConfig& cfg) {
  const int64_t B = out.cls_logits.dim(0);
  const int64_t Hf = out.cls_logits.dim(2);
  const int64_t Wf = out.cls_logits.dim(3);
  const int64_t A = out.obj_logits.dim(1);
  const int64_t K = num_classes;
  const int64_t hw = Hf * Wf;
  const int64_t n_anchors = hw * A;
  if (static_cast<int64_t>(anchors.size()) != n_anchors)
    throw std::invalid_argument("detection_loss: anchor count mismatch");
  if (static_cast<int64_t>(batch_gt.size()) != B)
    throw std::invalid_argument("detection_loss: batch size mismatch");

  // Per-(n,anchor,class) focal weights and p_t mixing constants, plus the
  // positive list for the regression term.
  Tensor weight_c({B, A, K, Hf, Wf});
  Tensor sign_c({B, A, K, Hf, Wf});
  Tensor offset_c({B, A, K, Hf, Wf});
  auto wv = weight_c.data();
  auto sv = sign_c.data();
  auto ov = offset_c.data();

  struct Positive {
    int64_t image, anchor;
    int gt;
  };
  std::vector<Positive> positives;

  for (int64_t n = 0; n < B; ++n) {
    const MatchResult match =
        uniform_match(anchors, batch_gt[static_cast<size_t>(n)].boxes,
                      cfg.match_k);
    for (int64_t alpha = 0; alpha < n_anchors; ++alpha) {
      const int assign = match.assignment[static_cast<size_t>(alpha)];
      const int64_t cell = alpha / A;
      const int64_t a = alpha % A;
      for (int64_t k = 0; k < K; ++k) {
        const size_t fi =
            static_cast<size_t>(((n * A + a) * K + k) * hw + cell);
        if (assign == MatchResult::kIgnore) {
          wv[fi] = 0.0;
          sv[fi] = -1.0;
          ov[fi] = 1.0;
          continue;
        }
        const bool is_target =
            assign >= 0 &&
            batch_gt[static_cast<size_t>(n)].labels[static_cast<size_t>(
                assign)] == static_cast<int>(k);
        if (is_target) {
          wv[fi] = cfg.focal_alpha;  // alpha_t for target 1
          sv[fi] = 1.0;              // p_t = p
          ov[fi] = 0.0;
        } else {
          wv[fi] = 1.0 - cfg.focal_alpha;
          sv[fi] = -1.0;  // p_t = 1 - p
          ov[fi] = 1.0;
        }
      }
      if (assign >= 0)
        positives.push_back({n, alpha, assign});
    }
  }

  // Classification: focal loss on fused, clamped scores.
  Tensor p = clamp(fuse_scores(out.cls_logits, out.obj_logits,
                               static_cast<int>(K)),
                   1e-7, 1.0 - 1e-7);
  Tensor p_t = add(mul(p, sign_c), offset_c);
  Tensor modulator = pow_scalar(scalar_add(scalar_mul(p_t, -1.0), 1.0),
                                cfg.focal_gamma);
  Tensor focal_sum =
      scalar_mul(sum(mul(weight_c, mul(modulator, log(p_t)))), -1.0);

  const int n_pos = static_cast<int>(positives.size());
  const double norm = 1.0 / std::max(1, n_pos);

  LossParts parts;
  parts.positives = n_pos;

  if (n_pos == 0) {
    parts.total = scalar_mul(focal_sum, norm);
    parts.focal = parts.total.item();
    parts.giou = 0.0;
    return parts;
  }

  // Regression: GIoU loss on decoded boxes of the positive anchors.
  const size_t P = positives.size();
  std::vector<int64_t> idx_dx(P), idx_dy(P), idx_dw(P), idx_dh(P);
  Tensor c_aw({static_cast<int64_t>(P)}), c_ah({static_cast<int64_t>(P)});
  Tensor c_ax({static_cast<int64_t>(P)}), c_ay({static_cast<int64_t>(P)});
  Tensor c_gx1({static_cast<int64_t>(P)}), c_gy1({static_cast<int64_t>(P)});
  Tensor c_gx2({static_cast<int64_t>(P)}), c_gy2({static_cast<int64_t>(P)});
  Tensor c_garea({static_cast<int64_t>(P)});
  for (size_t i = 0; i < P; ++i) {
    const auto& pos = positives[i];
    const int64_t cell = pos.anchor / A;
    const int64_t a = pos.anchor % A;
    const int64_t base = ((pos.image * A + a) * 4) * hw + cell;
    idx_dx[i] = base;
    idx_dy[i] = base + hw;
    idx_dw[i] = base + 2 * hw;
    idx_dh[i] = base + 3 * hw;
    const Box& an = anchors[static_cast<size_t>(pos.anchor)];
    const Box& gt = batch_gt[static_cast<size_t>(pos.image)]
                        .boxes[static_cast<size_t>(pos.gt)];
    c_aw.data()[i] = an.width();
    c_ah.data()[i] = an.height();
    c_ax.data()[i] = an.cx();
    c_ay.data()[i] = an.cy();
    c_gx1.data()[i] = gt.x1;
    c_gy1.data()[i] = gt.y1;
    c_gx2.data()[i] = gt.x2;
    c_gy2.data()[i] = gt.y2;
    c_garea.data()[i] = gt.area();
  }

  const double neg_inf = -std::numeric_limits<double>::infinity();
  Tensor dx = gather(out.reg_deltas, idx_dx);
  Tensor dy = gather(out.reg_deltas, idx_dy);
  Tensor dw = clamp(gather(out.reg_deltas, idx_dw), neg_inf, kDeltaClamp);
  Tensor dh = clamp(gather(out.reg_deltas, idx_dh), neg_inf, kDeltaClamp);

  Tensor pcx = add(c_ax, mul(dx, c_aw));
  Tensor pcy = add(c_ay, mul(dy, c_ah));
  Tensor pw = mul(c_aw, exp(dw));
  Tensor ph = mul(c_ah, exp(dh));
  Tensor px1 = sub(pcx, scalar_mul(pw, 0.5));
  Tensor px2 = add(pcx, scalar_mul(pw, 0.5));
  Tensor py1 = sub(pcy, scalar_mul(ph, 0.5));
  Tensor py2 = add(pcy, scalar_mul(ph, 0.5));

  Tensor ix = relu(sub(minimum(px2, c_gx2), maximum(px1, c_gx1)));
  Tensor iy = relu(sub(minimum(py2, c_gy2), maximum(py1, c_gy1)));
  Tensor inter = mul(ix, iy);
  Tensor uni = sub(add(mul(pw, ph), c_garea), inter);
  Tensor iou_t = divide(inter, uni);
  Tensor ex = sub(maximum(px2, c_gx2), minimum(px1, c_gx1));
  Tensor ey = sub(maximum(py2, c_gy2), minimum(py1, c_gy1));
  Tensor encl = mul(ex, ey);
  Tensor giou_t = sub(iou_t, divide(sub(encl, uni), encl));
  // sum of (1 - giou) over positives
  Tensor giou_sum =
      scalar_add(scalar_mul(sum(giou_t), -1.0), static_cast<double>(n_pos));

  parts.total = scalar_mul(add(focal_sum, giou_sum), norm);
  parts.focal = focal_sum.item() * norm;
  parts.giou = giou_sum.item() * norm;
  return parts;
}

}  // namespace bcdet
