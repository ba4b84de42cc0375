#pragma once

#include <utility>
#include <vector>

#include "scenedec/tensor.hpp"

namespace scenedec::geo {

// Axis-aligned box in normalized frame coordinates, where both image axes
// span [-1,1]. w/h are full extents in the same units and must be positive.
// All four entries are scalar tensors so detection gradients can flow.
struct BoundingBox {
  ad::Tensor cx, cy, w, h;
};

BoundingBox make_box(double cx, double cy, double w, double h,
                     bool requires_grad = false);

// Bilinear crop of frame (C,H,W) to (C,out_h,out_w). Sample points outside
// the frame use border clamping. Differentiable in the frame and the box.
ad::Tensor spatial_transform(const ad::Tensor& frame, const BoundingBox& b,
                             std::size_t out_h, std::size_t out_w);

// Radial bump on the crop's [-1,1]^2 grid: exp(1 - 1/(1 - (x^4+y^4)^(1/2))),
// zero from the unit level set outward. Grid corners land exactly on +-1.
double focal_bump(double x, double y);
ad::Tensor focal_mask(std::size_t ch, std::size_t h, std::size_t w);

// spatial_transform followed by multiplication with the bump grid.
ad::Tensor focal_spatial_transform(const ad::Tensor& frame, const BoundingBox& b,
                                   std::size_t out_h, std::size_t out_w);

// Plain-number intersection over union of two boxes; no gradients.
double box_iou(const BoundingBox& a, const BoundingBox& b);

// Best-first matching: repeatedly pair the highest-IoU (pred, gt) combination
// among still-unmatched entries; pairs with IoU below min_iou are
// never taken (exactly min_iou qualifies). Ties prefer lower
// pred index, then lower gt index. Returns (pred_index, gt_index) pairs.
std::vector<std::pair<int, int>> greedy_iou_match(const std::vector<BoundingBox>& pred,
                                                  const std::vector<BoundingBox>& gt,
                                                  double min_iou);

enum class PadMode { Zero, Border };

// Paste a crop back into an (C,H,W) frame: every frame pixel samples the crop
// at the inverse box mapping. Pixels whose centers fall outside the box are
// exactly 0 in Zero mode and take the crop's border extension in Border mode.
ad::Tensor inverse_spatial_transform(const ad::Tensor& crop, const BoundingBox& b,
                                     std::size_t H, std::size_t W, PadMode mode);

// Pre-multiplies the crop by the bump grid (which vanishes on the crop
// boundary) and pastes; the result is continuous across the box edge.
ad::Tensor inverse_focal_spatial_transform(const ad::Tensor& crop,
                                           const BoundingBox& b, std::size_t H,
                                           std::size_t W, PadMode mode);

}  // namespace scenedec::geo
