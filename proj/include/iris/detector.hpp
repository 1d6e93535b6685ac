#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "iris/autograd.hpp"
#include "iris/datagen.hpp"
#include "iris/geometry.hpp"
#include "iris/optim.hpp"
#include "iris/params.hpp"
#include "iris/rng.hpp"

namespace iris {

struct DetectorConfig {
  int input_size = 64;
  int in_channels = 3;
  // One block per entry: a stride-2 3x3 conv, then (convs_per_block - 1) stride-1 3x3 convs.
  std::vector<int> backbone_widths{16, 32};
  int convs_per_block = 2;
  int rpn_width = 32;
  int mask_width = 16;
  int mask_pool = 7;
  int mask_size = 14;
  AnchorGridConfig anchors{4, {4.0, 6.0, 8.0}, {0.5, 1.0, 2.0}, 4.0};

  double pos_iou = 0.7;
  double neg_iou = 0.3;
  int anchors_per_image = 32;
  double positive_fraction = 0.5;
  // Regression targets are divided by these before the box loss; predictions are scaled back on decode.
  std::array<double, 4> delta_std{0.1, 0.1, 0.2, 0.2};

  double nms_iou = 0.5;
  double score_floor = 0.05;
  int pre_nms_top_n = 200;

  int stride() const { return 1 << backbone_widths.size(); }
  int grid_size() const { return (input_size + stride() - 1) / stride(); }
  int feature_channels() const { return backbone_widths.back(); }
  void validate() const;
};

// He-uniform weights, zero biases.
ParamSet build_detector(const DetectorConfig& cfg, std::uint64_t seed);

// images [N,C,S,S] -> features [N,F,S/stride,S/stride].
Var backbone_forward(Tape& tape, ParamSet& params, const DetectorConfig& cfg, Var images);

struct RpnOutput {
  Var scores;  // [N,2A,H,W]; channel 2a is background, 2a+1 foreground
  Var deltas;  // [N,4A,H,W]; channels 4a..4a+3 are dx,dy,dw,dh
};
RpnOutput rpn_forward(Tape& tape, ParamSet& params, const DetectorConfig& cfg, Var features);

// Foreground probability per anchor (generation order) for sample n.
std::vector<double> foreground_probs(const Tensor& scores, int n);

// Feature-cell rectangle covering an image-space box, clamped to the grid and at least one cell.
struct CellRect {
  int y0, y1, x0, x1;
};
CellRect feature_cells(const Box& box, int stride, int grid_h, int grid_w);

// feature_crop [1,F,h,w] -> mask logits [1,1,M,M].
Var mask_head_forward(Tape& tape, ParamSet& params, const DetectorConfig& cfg, Var feature_crop);

// Per-image anchor selection and regression/mask targets.
struct AnchorTargets {
  std::vector<int> cls_anchors;  // sampled anchor indices
  std::vector<int> cls_labels;   // 1 foreground, 0 background
  std::vector<int> box_anchors;  // positive anchors among the sampled ones
  Tensor box_targets;            // [P,4] encoded deltas
};
AnchorTargets sample_anchor_targets(const std::vector<Box>& anchors, const Box& gt, const DetectorConfig& cfg, Rng& rng);

struct LossBreakdown {
  float l_cls = 0.0f;
  float l_box = 0.0f;
  float l_mask = 0.0f;
  float total = 0.0f;
};

struct LossTerms {
  Var cls, box, mask, total;
  LossBreakdown values(const Tape& tape) const;
};

// Per-image targets aligned with the batch dimension of scores/deltas. mask_logits and
// mask_targets hold one entry per image that contributes a mask term.
LossTerms multi_task_loss(Tape& tape, Var scores, Var deltas, const std::vector<AnchorTargets>& targets,
                          const std::vector<Var>& mask_logits, const std::vector<Tensor>& mask_targets);

// Image [C,H,W] with values in [0,255]; grey input is stacked to the configured channels.
Tensor detector_input(const Tensor& image, const DetectorConfig& cfg);

// Highest-objectness surviving detection, or nullopt when nothing clears cfg.score_floor.
std::optional<Detection> detect_best_region(const Tensor& image, ParamSet& params, const DetectorConfig& cfg);

struct DetectorTrainConfig {
  int epochs = 16;
  int batch_size = 4;
  OptimizerKind optimizer = OptimizerKind::AmsGrad;
  OptimHyper optim{1e-3, 0.9, 0.999, 1e-8, 10.0};
  std::uint64_t seed = 0;

  void validate() const;
};

struct DetectorTrainResult {
  ParamSet params;  // weights from best_epoch
  std::vector<LossBreakdown> trace;
  int best_epoch = 0;
};

// Trains on manifest.samples[i] for i in train_indices; each needs a box and mask.
DetectorTrainResult train_detector(const DatasetManifest& manifest, const std::vector<std::size_t>& train_indices,
                                   const DetectorConfig& cfg, const DetectorTrainConfig& train);

struct DetectionEval {
  double mean_iou = 0.0;
  double success_rate = 0.0;  // fraction with IoU >= 0.5
  std::size_t evaluated = 0;
  std::size_t missed = 0;     // no detection returned
};
DetectionEval evaluate_detector(const DatasetManifest& manifest, const std::vector<std::size_t>& indices,
                                ParamSet& params, const DetectorConfig& cfg);

}  // namespace iris
