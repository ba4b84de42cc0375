#pragma once

#include <string>
#include <utility>
#include <vector>

#include "scenedec/nets.hpp"
#include "scenedec/tensor.hpp"

namespace scenedec::losses {

// batch[sample][slot]
using BatchDetections = std::vector<std::vector<nets::Detection>>;

inline constexpr double kPerceptualWeight = 2.0;
inline constexpr double kPriorWeight = 0.1;

// Gaussian 5x5 blur (sigma 1) + stride-2 downsample with border
// renormalization, so constant images stay exactly constant at the edges.
ad::Tensor blur_down(const ad::Tensor& x);

struct NvsParts {
  ad::Tensor pixel;       // mean squared pixel difference
  ad::Tensor perceptual;  // mean over 3 pyramid levels of mean squared difference
};

NvsParts nvs_parts(const ad::Tensor& pred, const ad::Tensor& target);
// pixel + kPerceptualWeight * perceptual
ad::Tensor nvs_loss(const ad::Tensor& pred, const ad::Tensor& target);

// Sum over slots of the squared distance between the batch-mean box center
// and the frame center; individual boxes may deviate freely.
ad::Tensor position_prior(const BatchDetections& batch);

// Sum over slots of (batch-mean height - 0.8)^2 + (batch-mean h/w - 1.5)^2
// in normalized coordinates where the frame spans [-1,1].
ad::Tensor scale_prior(const BatchDetections& batch);

// Mean squared error over all J*3 entries; both sides root-relative.
ad::Tensor pose_loss(const ad::Tensor& pred, const ad::Tensor& gt);

struct LossReport {
  ad::Tensor total;
  std::vector<std::pair<std::string, ad::Tensor>> components;
  const ad::Tensor& component(const std::string& name) const;
  bool has(const std::string& name) const;
  // Fixed weight each component enters the total with.
  static double weight_of(const std::string& name);
};

// Both reconstruction directions of a view pair plus the weak priors on both
// views' detections. Image lists are per-sample; component values are averaged
// over the batch and summed over the two directions.
LossReport total_selfsup_loss(const std::vector<ad::Tensor>& pred_v,
                              const std::vector<ad::Tensor>& target_v,
                              const std::vector<ad::Tensor>& pred_w,
                              const std::vector<ad::Tensor>& target_w,
                              const BatchDetections& dets_v,
                              const BatchDetections& dets_w);

}  // namespace scenedec::losses
