#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bcdet/data.hpp"
#include "bcdet/detection.hpp"
#include "bcdet/eval.hpp"
#include "bcdet/model.hpp"

namespace bcdet {

struct TrainConfig {
  int batch_size = 4;
  double base_lr = 0.015;
  int warmup_iters = 1500;
  double warmup_start_factor = 1e-3;
  int epochs = 12;
  double momentum = 0.9;
  double weight_decay = 1e-4;  // BN affine params exempt
  std::vector<int> lr_drop_epochs{8, 11};
  double lr_drop_factor = 0.1;
  uint64_t seed = 0;
  int match_k = 4;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  bool augment = true;
  AugmentationConfig augmentation;
  int eval_every = 1;  // epochs; 0 disables per-epoch evaluation
  int iters_per_epoch = 0;  // set by train(); needed by lr_at for drops
};

// Linear warmup from base_lr*warmup_start_factor to base_lr over
// warmup_iters, then base_lr with lr_drop_factor steps at the drop epochs.
double lr_at(int64_t iter, const TrainConfig& cfg);

struct SGDState {
  std::vector<std::vector<double>> velocity;  // aligned with the param list
};

// v <- momentum*v + g + wd*w; w <- w - lr*v. Entries with decay=false skip
// the weight-decay term; non-trainable entries are untouched.
void sgd_step(ParamList& params, SGDState& state, double lr, double momentum,
              double weight_decay);

struct LossParts {
  Tensor total;       // scalar, on the tape
  double focal = 0;   // normalized components, for logging
  double giou = 0;
  int positives = 0;
};

// Focal loss on fused scores with one-hot targets from uniform matching,
// plus GIoU loss on decoded positive boxes; both normalized by
// max(1, #positives) over the batch.
LossParts detection_loss(const ModelOutput& out,
                         const std::vector<GroundTruth>& batch_gt,
                         const std::vector<Box>& anchors, int num_classes,
                         const TrainConfig& cfg);

// Inference over a dataset (samples resized to `resolution` internally);
// one detection list per sample.
std::vector<std::vector<Detection>> run_inference(
    Detector& model, const Dataset& data, int resolution,
    const PostprocessConfig& pp = {});

// Ground truth of each sample after resizing to the evaluation resolution.
std::vector<GroundTruth> dataset_ground_truth(const Dataset& data,
                                              int resolution);

EvalResult evaluate_dataset(Detector& model, const Dataset& data,
                            int resolution, const PostprocessConfig& pp = {});

struct TrainResult {
  double final_loss = 0;
  double best_ap50 = 0;
  std::string last_checkpoint, best_checkpoint, runlog_path;
  int64_t iterations = 0;
};

// Full schedule over the train set with per-epoch evaluation on the val
// set. Saves best-AP50 and final checkpoints plus the model config and a
// line-per-iteration run log under out_dir. Deterministic given cfg.seed.
TrainResult train(Detector& model, const Dataset& train_set,
                  const Dataset& val_set, const TrainConfig& cfg,
                  const std::string& out_dir);

}  // namespace bcdet
