#pragma once

#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "scenedec/losses.hpp"
#include "scenedec/nets.hpp"
#include "scenedec/optim.hpp"
#include "scenedec/rng.hpp"
#include "scenedec/spriteworld.hpp"
#include "scenedec/tensor.hpp"

namespace scenedec::train {

// Staged curriculum over a multi-view dataset:
//   stage 1  detector + encoder + decoder, occlusion-free compositing
//   stage 2  encoder + decoder re-drawn fresh, detector warm, soft occlusion
//   stage 3  pose regressor on sparse keypoint labels, everything else frozen
// Each stage consumes the previous stage's state. All randomness (batch
// sampling, init draws, dropout) comes from one stream seeded by the config,
// so a run is a pure function of (dataset, config).

struct TrainConfig {
  int stage = 1;
  int slots = 2;       // detection slots per frame
  int batch_size = 6;  // view pairs per step
  // 0 means the per-stage default (2000/2000/1500). Full-scale runs in the
  // hundreds of thousands of steps; these defaults fit a desktop CPU budget.
  int iterations = 0;
  double lr_detector_encoder = 1e-3;
  double lr_decoder_regressor = 1e-4;
  unsigned long long seed = 1;
  int crop = 32;      // rectified patch side
  int points = 16;    // geometry latent point count
  int app_dim = 128;  // appearance latent width
  int assoc_dims = 16;     // leading appearance channels used for matching
  double assoc_beta = 10.0;
  double occlusion_alpha = 2.0;
  double label_fraction = 0.1;    // stage 3: fraction of train frames labeled
  double holdout_fraction = 0.1;  // trailing frames reserved for evaluation
  int log_every = 25;
  std::vector<int> detector_widths = {8, 16, 32, 32};
  std::vector<int> encoder_widths = {8, 16, 32, 32};
  std::vector<int> decoder_widths = {24, 12, 8};
  int decoder_base = 4;
  int decoder_base_channels = 32;
  int pose_hidden = 1024;
  double pose_dropout = 0.5;
  bool pose_use_appearance = false;
  void validate() const;
  int resolved_iterations() const;  // iterations, or the stage default
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(
    TrainConfig, stage, slots, batch_size, iterations, lr_detector_encoder,
    lr_decoder_regressor, seed, crop, points, app_dim, assoc_dims, assoc_beta,
    occlusion_alpha, label_fraction, holdout_fraction, log_every,
    detector_widths, encoder_widths, decoder_widths, decoder_base,
    decoder_base_channels, pose_hidden, pose_dropout, pose_use_appearance)

// Parses a JSON object; absent keys keep their defaults.
TrainConfig load_train_config(const std::string& path);

// Everything that persists across steps and stages. Movable, not copyable.
struct PipelineState {
  int stage_completed = 0;
  long iteration = 0;  // cumulative over stages
  nets::Whitening whitening;
  std::unique_ptr<nets::Detector> detector;
  std::unique_ptr<nets::Encoder> encoder;
  std::unique_ptr<nets::Decoder> decoder;
  std::unique_ptr<nets::PoseRegressor> pose;
  std::map<std::string, ad::AdamState> adam;
  Rng rng{1};

  std::vector<nets::ParamEntry> all_params() const;
};

// Split bookkeeping plus per-view static backgrounds estimated from the
// train split (pixelwise median over frames).
struct RunData {
  int train_frames = 0;
  int heldout_frames = 0;
  std::vector<ad::Tensor> backgrounds;  // one (3,H,W) per view
};

RunData prepare_run_data(const world::Dataset& data, double holdout_fraction);

// Fresh nets drawn from the config seed; whitening fitted on train frames.
PipelineState init_state(const TrainConfig& cfg, const world::Dataset& data,
                         const RunData& run);

void save_checkpoint(const PipelineState& state, const std::string& path);
PipelineState load_checkpoint(const std::string& path);

struct PairSample {
  int frame = 0;
  int view_a = 0;
  int view_b = 0;  // always != view_a; order matters
};

// batch_size draws, each uniform over frames x ordered distinct view pairs.
std::vector<PairSample> sample_view_pairs(int frame_count, int views,
                                          int batch_size, Rng& rng);

// One view of a training pair.
struct PairView {
  ad::Tensor image;       // (3,H,W) raw [0,1]
  ad::Tensor background;  // (3,H,W)
  geo::CameraView camera;
};

// Everything the pipeline inferred about one view while rebuilding it from
// the other: per-slot detections from its own frame, cross-view layers
// pasted into it, and the composited result.
struct ViewDecomposition {
  std::vector<nets::Detection> detections;
  std::vector<ad::Tensor> layers;      // per slot (3,H,W)
  std::vector<ad::Tensor> masks;       // per slot (H,W)
  std::vector<ad::Tensor> visibility;  // per slot (H,W); empty in stage 1
  ad::Tensor reconstruction;           // (3,H,W)
  ad::Tensor depth_map;                // (H,W); unset in stage 1
};

struct PairOutput {
  losses::LossReport report;  // batch-of-one loss for this pair
  ViewDecomposition a, b;
};

// Symmetric cross-view reconstruction of one pair: each view is rebuilt
// from the other view's appearance and rotated geometry, pasted at the
// target view's own detected boxes. Differentiable end to end.
PairOutput bi_nvs_step(const PipelineState& state, const TrainConfig& cfg,
                       const PairView& va, const PairView& vb, int stage);

// Same pass with externally supplied detector outputs (N,5), which makes the
// whole pipeline differentiable with respect to a small leaf for testing.
PairOutput bi_nvs_from_raw(const PipelineState& state, const TrainConfig& cfg,
                           const PairView& va, const PairView& vb,
                           const ad::Tensor& raw_a, const ad::Tensor& raw_b,
                           int stage);

// Detections plus latent codes for one frame, in slot order.
struct SlotCodes {
  std::vector<nets::Detection> detections;
  std::vector<nets::LatentCode> codes;
};
SlotCodes detect_and_encode(const PipelineState& state, const TrainConfig& cfg,
                            const ad::Tensor& image);

// One optimizer step on a fresh batch of view pairs (stages 1 and 2).
// Aborts with an error naming the step if any loss component is not finite.
losses::LossReport train_step(PipelineState& state, const TrainConfig& cfg,
                              const world::Dataset& data, const RunData& run,
                              int stage);

// One supervised step for stage 3. Samples labeled frames until the batch
// has enough box matches against the labels, then regresses keypoints for
// the matched slots.
losses::LossReport pose_step(PipelineState& state, const TrainConfig& cfg,
                             const world::Dataset& data, const RunData& run,
                             const world::GroundTruth& gt,
                             const std::vector<int>& labeled);

// Stage 3 labels every stride-th train frame, stride = round(1/fraction).
std::vector<int> labeled_frames(int train_frames, double label_fraction);

// Mean bi-directional reconstruction loss over pairs drawn from the
// held-out tail. Deterministic given the rng.
double heldout_selfsup_loss(const PipelineState& state, const TrainConfig& cfg,
                            const world::Dataset& data, const RunData& run,
                            int stage, int pairs, Rng& rng);

// Runs cfg.stage on top of prev (absent for stage 1). Writes one CSV row
// per log_every steps to log when given. Returns the advanced state.
PipelineState run_stage(const TrainConfig& cfg, const world::Dataset& data,
                        std::optional<PipelineState> prev, std::ostream* log);

}  // namespace scenedec::train
