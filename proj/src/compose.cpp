#include "scenedec/compose.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace scenedec::comp {

using ad::Tensor;

namespace {

void validate_stack(const std::vector<Tensor>& scales, const std::vector<Tensor>& depths,
                    double alpha) {
  check(scales.size() == depths.size(),
        "compositor got " + std::to_string(scales.size()) + " scale maps but " +
            std::to_string(depths.size()) + " depths");
  check(alpha > 0.0, "compositor sharpness must be positive");
  for (std::size_t i = 0; i < scales.size(); ++i) {
    check(scales[i].rank() == 2, "scale map " + std::to_string(i) + " must be (H,W), got " +
                                     ad::shape_str(scales[i].shape()));
    check(scales[i].shape() == scales[0].shape(),
          "scale map " + std::to_string(i) + " shape differs from map 0");
    check(depths[i].size() == 1, "depth " + std::to_string(i) + " must be a scalar");
    for (double v : scales[i].values())
      check(v >= 0.0, "scale map " + std::to_string(i) + " has a negative density");
  }
}

// Subject indices sorted by depth value, index as tiebreak.
std::vector<std::size_t> depth_order(const std::vector<Tensor>& depths) {
  std::vector<std::size_t> ord(depths.size());
  std::iota(ord.begin(), ord.end(), 0);
  std::sort(ord.begin(), ord.end(), [&](std::size_t a, std::size_t b) {
    const double za = depths[a].item(), zb = depths[b].item();
    if (za != zb) return za < zb;
    return a < b;
  });
  return ord;
}

// sum_j S_j * (erf(alpha*(z - z_j)) + 1) accumulated in depth order; z is a
// scalar tensor so the step weights stay differentiable in the depths.
Tensor density_at(const Tensor& z, const std::vector<Tensor>& scales,
                  const std::vector<Tensor>& depths, double alpha,
                  const std::vector<std::size_t>& ord) {
  Tensor acc = Tensor::zeros(scales[0].shape());
  for (std::size_t j : ord) {
    const Tensor w =
        ad::add_constant(ad::erf(ad::scale(ad::sub(z, depths[j]), alpha)), 1.0);
    acc = ad::add(acc, ad::scale_by(scales[j], w));
  }
  return acc;
}

}  // namespace

Tensor transmittance(const Tensor& z, const std::vector<Tensor>& scales,
                     const std::vector<Tensor>& depths, double alpha) {
  validate_stack(scales, depths, alpha);
  check(!scales.empty(), "transmittance needs at least one subject");
  check(z.size() == 1, "transmittance probe depth must be a scalar");
  const auto ord = depth_order(depths);
  return ad::exp(ad::scale(density_at(z, scales, depths, alpha, ord), -1.0));
}

Tensor background_transmittance(const std::vector<Tensor>& scales) {
  check(!scales.empty(), "background_transmittance needs at least one scale map");
  Tensor acc = Tensor::zeros(scales[0].shape());
  for (const auto& s : scales) acc = ad::add(acc, s);
  return ad::exp(ad::scale(acc, -2.0));
}

VisibilityStack visibility_stack(const std::vector<Tensor>& scales,
                                 const std::vector<Tensor>& depths, double alpha) {
  validate_stack(scales, depths, alpha);
  check(!scales.empty(), "visibility_stack needs at least one subject");
  const auto ord = depth_order(depths);
  const std::size_t n = scales.size();

  // T_inf accumulated in the same depth order as everything else.
  Tensor total = Tensor::zeros(scales[0].shape());
  for (std::size_t j : ord) total = ad::add(total, scales[j]);
  const Tensor t_inf = ad::exp(ad::scale(total, -2.0));

  std::vector<Tensor> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor t_i =
        ad::exp(ad::scale(density_at(depths[i], scales, depths, alpha, ord), -1.0));
    v[i] = ad::mul(scales[i], t_i);
  }
  Tensor vsum = Tensor::zeros(scales[0].shape());
  for (std::size_t j : ord) vsum = ad::add(vsum, v[j]);
  const Tensor captured = ad::add_constant(ad::scale(t_inf, -1.0), 1.0);
  const Tensor z = ad::safe_divide(captured, vsum);

  VisibilityStack out;
  out.visibility.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.visibility[i] = ad::mul(z, v[i]);
  out.background = t_inf;
  return out;
}

Composite composite_scene(const std::vector<Tensor>& images,
                          const std::vector<Tensor>& scales,
                          const std::vector<Tensor>& depths, const Tensor& background,
                          double alpha) {
  check(images.size() == scales.size(),
        "composite_scene got " + std::to_string(images.size()) + " sprites but " +
            std::to_string(scales.size()) + " scale maps");
  check(background.rank() == 3, "composite_scene background must be (C,H,W), got " +
                                    ad::shape_str(background.shape()));
  for (const auto& im : images)
    check(im.shape() == background.shape(),
          "sprite shape " + ad::shape_str(im.shape()) + " does not match background " +
              ad::shape_str(background.shape()));

  Composite out;
  if (images.empty()) {
    out.image = background;
    out.vis.background = Tensor::constant({background.dim(1), background.dim(2)}, 1.0);
    // z_far with no subjects: max depth treated as 0, so the far plane is 1.
    out.depth = Tensor::constant({background.dim(1), background.dim(2)}, 1.0);
    return out;
  }

  out.vis = visibility_stack(scales, depths, alpha);
  const auto ord = depth_order(depths);

  Tensor img = ad::scale_channels(background, out.vis.background);
  for (std::size_t j : ord)
    img = ad::add(img, ad::scale_channels(images[j], out.vis.visibility[j]));
  out.image = img;

  double zmax = depths[0].item();
  for (const auto& d : depths) zmax = std::max(zmax, d.item());
  const double z_far = zmax > 0.0 ? 2.0 * zmax : zmax + 1.0;
  Tensor dep = ad::scale(out.vis.background, z_far);
  for (std::size_t j : ord)
    dep = ad::add(dep, ad::scale_by(out.vis.visibility[j], depths[j]));
  out.depth = dep;
  return out;
}

Tensor composite_naive(const std::vector<Tensor>& images,
                       const std::vector<Tensor>& scales, const Tensor& background) {
  check(images.size() == scales.size(),
        "composite_naive got " + std::to_string(images.size()) + " sprites but " +
            std::to_string(scales.size()) + " scale maps");
  check(background.rank() == 3, "composite_naive background must be (C,H,W), got " +
                                    ad::shape_str(background.shape()));
  if (images.empty()) return background;
  Tensor mass = Tensor::zeros(scales[0].shape());
  Tensor img = Tensor::zeros(background.shape());
  for (std::size_t i = 0; i < images.size(); ++i) {
    check(images[i].shape() == background.shape(),
          "sprite " + std::to_string(i) + " shape does not match background");
    check(scales[i].rank() == 2 && scales[i].dim(0) == background.dim(1) &&
              scales[i].dim(1) == background.dim(2),
          "scale map " + std::to_string(i) + " does not match background");
    img = ad::add(img, ad::scale_channels(images[i], scales[i]));
    mass = ad::add(mass, scales[i]);
  }
  const Tensor leftover = ad::add_constant(ad::scale(mass, -1.0), 1.0);
  return ad::add(img, ad::scale_channels(background, leftover));
}

}  // namespace scenedec::comp
