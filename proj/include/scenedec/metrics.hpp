#pragma once

#include <string>
#include <vector>

#include "scenedec/spriteworld.hpp"
#include "scenedec/tensor.hpp"
#include "scenedec/trainer.hpp"
#include "scenedec/warp.hpp"

namespace scenedec::eval {

// Pose errors operate on (J,3) root-relative keypoint sets and return plain
// numbers; nothing here is differentiated.

// Mean over joints of the Euclidean distance between paired keypoints.
double mpjpe(const ad::Tensor& pred, const ad::Tensor& gt);

// mpjpe after the least-squares similarity alignment (rotation, uniform
// scale, translation) of pred onto gt. Needs at least 3 non-collinear
// ground-truth joints.
double n_mpjpe(const ad::Tensor& pred, const ad::Tensor& gt);

// Fits one J x J joint-mixing map W (shared across samples and coordinates)
// minimizing the total squared error of W*pred against gt over the whole
// set, then reports the mean mpjpe of the mapped predictions. Needs at
// least J samples and a well-conditioned system.
double nmpjpe_star(const std::vector<ad::Tensor>& preds,
                   const std::vector<ad::Tensor>& gts);

// Intersection over union of two masks after thresholding both at `thr`.
// An empty union counts as 0.
double mask_iou(const ad::Tensor& a, const ad::Tensor& b, double thr = 0.5);

// One frame's detections for matching: boxes with optional per-slot masks
// (same length as boxes when present, empty to skip mask scoring).
struct FrameDetections {
  std::vector<geo::BoundingBox> boxes;
  std::vector<ad::Tensor> masks;
};

struct DetectionMetrics {
  double detection_rate = 0.0;  // matched fraction of ground-truth entries
  double mask_iou = 0.0;        // mean over matched pairs with masks
  int matched = 0;
  int gt_total = 0;
};

// Greedy best-first IoU matching per frame at the threshold; rates aggregate
// over all frames. Invariant under permutation of the prediction order.
DetectionMetrics detection_metrics(const std::vector<FrameDetections>& pred,
                                   const std::vector<FrameDetections>& gt,
                                   double iou_threshold = 0.5);

// One matched detection on a held-out frame.
struct EvalRow {
  int frame = 0, view = 0, slot = 0, sprite = 0;
  double box_iou = 0.0;
  double mask_iou = 0.0;
  double pose_err = 0.0;  // NaN when pose was not evaluated
};

struct EvalReport {
  double mpjpe = 0.0;        // NaN when pose was not evaluated
  double n_mpjpe = 0.0;      // NaN likewise; skips degenerate samples
  double nmpjpe_star = 0.0;  // NaN when matches < J or pose off
  double detection_rate = 0.0;
  double mask_iou = 0.0;
  int matched = 0;
  int gt_total = 0;
  std::vector<EvalRow> rows;
};

struct EvalOptions {
  int stage = 2;               // compositor the masks come from
  double iou_threshold = 0.5;
  int max_frames = 0;          // 0 = every held-out frame
  bool with_pose = false;
};

// Runs the pipeline over the held-out frames: each view is decomposed
// against its ring neighbor, detections are matched to the visible labels,
// and matched slots are scored for box, mask, and (optionally) pose error.
EvalReport evaluate_pipeline(const train::PipelineState& state,
                             const train::TrainConfig& cfg,
                             const world::Dataset& data, const train::RunData& run,
                             const world::GroundTruth& gt,
                             const EvalOptions& opts = {});

}  // namespace scenedec::eval
