#pragma once

#include <vector>

#include "scenedec/tensor.hpp"

namespace scenedec::comp {

// Soft occlusion over a stack of translucent layers. Subject i contributes a
// nonnegative per-pixel density map S_i (H,W) and a scalar depth z_i. A probe
// at depth z sees transmittance
//   T(z) = exp(-sum_j S_j * (erf(alpha*(z - z_j)) + 1)):
// layers in front of the probe attenuate with weight 2, a layer at the probe
// depth with weight 1, layers behind with weight 0. Larger alpha sharpens the
// step; alpha -> inf recovers hard painter-style occlusion.
//
// All subject reductions here accumulate in depth-ascending order (index as
// tiebreak), so reordering subjects with distinct depths is bit-identical.

ad::Tensor transmittance(const ad::Tensor& z, const std::vector<ad::Tensor>& scales,
                         const std::vector<ad::Tensor>& depths, double alpha);

// T as z -> +inf: exp(-2 * sum_j S_j), the light reaching the background.
ad::Tensor background_transmittance(const std::vector<ad::Tensor>& scales);

struct VisibilityStack {
  std::vector<ad::Tensor> visibility;  // per subject (H,W)
  ad::Tensor background;               // (H,W)
};

// Normalized per-pixel visibility weights. With v_i = S_i * T(z_i) and
// T_inf the background transmittance, V_i = v_i * (1 - T_inf) / sum_j v_j
// (exactly 0 where the stack is empty) and V_bg = T_inf. The N+1 weights sum
// to 1 at every pixel.
VisibilityStack visibility_stack(const std::vector<ad::Tensor>& scales,
                                 const std::vector<ad::Tensor>& depths, double alpha);

struct Composite {
  VisibilityStack vis;
  ad::Tensor image;  // (C,H,W)
  ad::Tensor depth;  // (H,W) expected depth; background sits at z_far
};

// Visibility-weighted blend of subject sprites (C,H,W) over a background
// frame. z_far is 2*max(z_i), or max+1 when that is not positive; it is a
// display convention and treated as a constant, so no gradient flows from
// the depth map into the far plane.
Composite composite_scene(const std::vector<ad::Tensor>& images,
                          const std::vector<ad::Tensor>& scales,
                          const std::vector<ad::Tensor>& depths,
                          const ad::Tensor& background, double alpha);

// Occlusion-free blend used for pre-training: sum_i S_i*I_i plus the leftover
// weight (1 - sum_i S_i) on the background. Sums run in subject index order.
ad::Tensor composite_naive(const std::vector<ad::Tensor>& images,
                           const std::vector<ad::Tensor>& scales,
                           const ad::Tensor& background);

}  // namespace scenedec::comp
