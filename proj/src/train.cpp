#include "bcdet/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace bcdet {

double lr_at(int64_t iter, const TrainConfig& cfg) {
  if (iter < 0) throw std::invalid_argument("lr_at: iter must be >= 0");
  double lr = cfg.base_lr;
  if (cfg.warmup_iters > 0 && iter < cfg.warmup_iters) {
    lr *= cfg.warmup_start_factor +
          (1.0 - cfg.warmup_start_factor) *
              (static_cast<double>(iter) / cfg.warmup_iters);
  }
  if (cfg.iters_per_epoch > 0) {
    const int64_t epoch = iter / cfg.iters_per_epoch;
    for (int drop : cfg.lr_drop_epochs)
      if (epoch >= drop) lr *= cfg.lr_drop_factor;
  }
  return lr;
}

void sgd_step(ParamList& params, SGDState& state, double lr, double momentum,
              double weight_decay) {
  if (state.velocity.size() != params.size())
    state.velocity.assign(params.size(), {});
  for (size_t i = 0; i < params.size(); ++i) {
    ParamEntry& p = params[i];
    if (!p.trainable) continue;
    auto w = p.tensor.data();
    auto& v = state.velocity[i];
    if (v.size() != w.size()) v.assign(w.size(), 0.0);
    const bool has_grad = p.tensor.has_grad();
    auto g = p.tensor.grad();
    const double wd = p.decay ? weight_decay : 0.0;
    for (size_t j = 0; j < w.size(); ++j) {
      const double grad = (has_grad ? g[j] : 0.0) + wd * w[j];
      v[j] = momentum * v[j] + grad;
      w[j] -= lr * v[j];
    }
  }
}

std::vector<GroundTruth> dataset_ground_truth(const Dataset& data,
                                              int resolution) {
  std::vector<GroundTruth> out;
  out.reserve(data.samples.size());
  for (const auto& s : data.samples) {
    Sample r = resize_to(s, resolution);
    out.push_back({std::move(r.boxes), std::move(r.labels)});
  }
  return out;
}

namespace {

// Per-anchor fused scores (anchor-major, class-minor) and deltas for one
// image, rearranged from the channel-major network layout.
void flatten_outputs(const ModelOutput& out, int image, int num_classes,
                     std::vector<double>& scores, std::vector<double>& deltas) {
  NoTape no_tape;
  Tensor fused = fuse_scores(out.cls_logits, out.obj_logits, num_classes);
  const int64_t A = out.obj_logits.dim(1);
  const int64_t K = num_classes;
  const int64_t Hf = out.obj_logits.dim(2);
  const int64_t Wf = out.obj_logits.dim(3);
  const int64_t hw = Hf * Wf;
  scores.assign(static_cast<size_t>(hw * A * K), 0.0);
  deltas.assign(static_cast<size_t>(hw * A * 4), 0.0);
  auto fd = fused.data();
  auto rd = out.reg_deltas.data();
  const int64_t n = image;
  for (int64_t a = 0; a < A; ++a)
    for (int64_t cell = 0; cell < hw; ++cell) {
      for (int64_t k = 0; k < K; ++k)
        scores[static_cast<size_t>((cell * A + a) * K + k)] =
            fd[static_cast<size_t>(((n * A + a) * K + k) * hw + cell)];
      for (int64_t c = 0; c < 4; ++c)
        deltas[static_cast<size_t>((cell * A + a) * 4 + c)] =
            rd[static_cast<size_t>(((n * A + a) * 4 + c) * hw + cell)];
    }
}

std::string now_dir_join(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

}  // namespace

std::vector<std::vector<Detection>> run_inference(Detector& model,
                                                  const Dataset& data,
                                                  int resolution,
                                                  const PostprocessConfig& pp) {
  const ModelConfig& mc = model.config();
  const int hf = resolution / 32;
  const auto anchors = generate_anchors(
      hf, hf, 32, effective_anchor_sizes(mc, resolution));
  std::vector<std::vector<Detection>> all;
  all.reserve(data.samples.size());
  for (const auto& s : data.samples) {
    const Sample r = resize_to(s, resolution);
    Tensor img = normalize_image(r.image);
    Tensor batch = reshape(img, {1, 3, resolution, resolution});
    ModelOutput out = model.forward(batch, false);
    std::vector<double> scores, deltas;
    flatten_outputs(out, 0, mc.num_classes, scores, deltas);
    all.push_back(decode_detections(scores, deltas, anchors, mc.num_classes,
                                    resolution, pp));
  }
  return all;
}

EvalResult evaluate_dataset(Detector& model, const Dataset& data,
                            int resolution, const PostprocessConfig& pp) {
  const auto dets = run_inference(model, data, resolution, pp);
  const auto gts = dataset_ground_truth(data, resolution);
  return coco_eval(dets, gts, model.config().num_classes);
}

TrainResult train(Detector& model, const Dataset& train_set,
                  const Dataset& val_set, const TrainConfig& cfg_in,
                  const std::string& out_dir) {
  if (train_set.samples.empty())
    throw std::invalid_argument("train: empty training set");
  std::filesystem::create_directories(out_dir);

  TrainConfig cfg = cfg_in;
  const int n_train = static_cast<int>(train_set.samples.size());
  cfg.iters_per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;

  const ModelConfig& mc = model.config();
  const int resolution = effective_resolution(mc);
  const int hf = resolution / 32;
  const auto anchors = generate_anchors(
      hf, hf, 32, effective_anchor_sizes(mc, resolution));

  ParamList params = model.parameters();
  SGDState opt_state;

  std::ofstream runlog(now_dir_join(out_dir, "runlog.txt"));
  if (!runlog) throw std::runtime_error("train: cannot write run log");
  const auto t0 = std::chrono::steady_clock::now();

  save_model_config(now_dir_join(out_dir, "model.cfg"), mc);

  TrainResult result;
  result.runlog_path = now_dir_join(out_dir, "runlog.txt");
  result.best_checkpoint = now_dir_join(out_dir, "best.ckpt");
  result.last_checkpoint = now_dir_join(out_dir, "last.ckpt");
  double best_ap50 = -1.0;

  std::vector<int> order(train_set.samples.size());
  int64_t iter = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    SplitMix64 shuffle_rng = substream(cfg.seed, 1000 + epoch);
    shuffle_rng.shuffle(order);

    for (int start = 0; start < n_train; start += cfg.batch_size, ++iter) {
      const int bsz = std::min(cfg.batch_size, n_train - start);
      Tensor images({bsz, 3, resolution, resolution});
      std::vector<GroundTruth> batch_gt(static_cast<size_t>(bsz));
      std::vector<int> batch_ids(static_cast<size_t>(bsz));
      for (int b = 0; b < bsz; ++b) {
        const int si = order[static_cast<size_t>(start + b)];
        const Sample& raw = train_set.samples[static_cast<size_t>(si)];
        batch_ids[static_cast<size_t>(b)] = raw.image_id;
        Sample s = raw;
        if (cfg.augment) {
          SplitMix64 aug_rng = substream(
              cfg.seed, 0x100000 + static_cast<uint64_t>(epoch) * 100000 +
                            static_cast<uint64_t>(si));
          s = augment(s, cfg.augmentation, aug_rng);
        }
        s = resize_to(s, resolution);
        Tensor img = normalize_image(s.image);
        auto src = img.data();
        auto dst = images.data();
        const size_t plane = static_cast<size_t>(3) * resolution * resolution;
        for (size_t i = 0; i < plane; ++i)
          dst[static_cast<size_t>(b) * plane + i] = src[i];
        batch_gt[static_cast<size_t>(b)] = {std::move(s.boxes),
                                            std::move(s.labels)};
      }

      const double lr = lr_at(iter, cfg);
      double loss_value;
      LossParts parts;
      {
        Tape tape;
        ModelOutput out = model.forward(images, true);
        parts = detection_loss(out, batch_gt, anchors, mc.num_classes, cfg);
        loss_value = parts.total.item();
        if (!std::isfinite(loss_value)) {
          std::string ids;
          for (int id : batch_ids) ids += std::to_string(id) + " ";
          throw std::runtime_error(
              "train: non-finite loss at iter " + std::to_string(iter) +
              " epoch " + std::to_string(epoch) + ", batch image ids: " + ids);
        }
        tape.backward(parts.total);
      }
      sgd_step(params, opt_state, lr, cfg.momentum, cfg.weight_decay);
      for (auto& p : params) p.tensor.zero_grad();

      const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
      char line[256];
      std::snprintf(line, sizeof(line),
                    "iter=%lld epoch=%d loss=%.6f focal=%.6f giou=%.6f "
                    "lr=%.8f positives=%d time_ms=%lld\n",
                    static_cast<long long>(iter), epoch, loss_value,
                    parts.focal, parts.giou, lr, parts.positives,
                    static_cast<long long>(ms));
      runlog << line;
      result.final_loss = loss_value;
    }

    if (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0 &&
        !val_set.samples.empty()) {
      const EvalResult er = evaluate_dataset(model, val_set, resolution);
      char line[256];
      std::snprintf(line, sizeof(line),
                    "eval epoch=%d ap=%.6f ap50=%.6f ap75=%.6f\n", epoch,
                    er.ap, er.ap50, er.ap75);
      runlog << line;
      if (er.ap50 > best_ap50) {
        best_ap50 = er.ap50;
        model.save(result.best_checkpoint);
      }
    }
    runlog.flush();
  }

  model.save(result.last_checkpoint);
  if (best_ap50 < 0) {
    // No evaluation ran; best is the final state.
    model.save(result.best_checkpoint);
    best_ap50 = 0;
  }
  result.best_ap50 = best_ap50;
  result.iterations = iter;
  return result;
}

}  // namespace bcdet
