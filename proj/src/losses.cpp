#include "scenedec/losses.hpp"

#include <cmath>

#include "scenedec/common.hpp"

namespace scenedec::losses {

using ad::Tensor;

namespace {

std::vector<double> gaussian5() {
  double g[5];
  double s = 0.0;
  for (int i = 0; i < 5; ++i) {
    g[i] = std::exp(-0.5 * (i - 2) * (i - 2));
    s += g[i];
  }
  for (double& v : g) v /= s;
  std::vector<double> k(25);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) k[i * 5 + j] = g[i] * g[j];
  return k;
}

Tensor mse(const Tensor& a, const Tensor& b) {
  return ad::reduce_mean(ad::square(ad::sub(a, b)));
}

Tensor mean_over_batch(std::vector<Tensor> parts) {
  return ad::reduce_mean(ad::concat_flat(std::move(parts)));
}

void check_batch(const BatchDetections& batch, const char* who) {
  check(!batch.empty(), std::string(who) + " needs a non-empty batch");
  for (const auto& sample : batch)
    check(sample.size() == batch.front().size(),
          std::string(who) + " needs the same slot count in every sample");
  check(!batch.front().empty(), std::string(who) + " needs at least one slot");
}

}  // namespace

Tensor blur_down(const Tensor& x) {
  check(x.defined() && x.rank() == 3, "blur_down input must be (C,H,W)");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const std::vector<double> g = gaussian5();
  std::vector<double> kv(C * C * 25, 0.0);
  for (std::size_t c = 0; c < C; ++c)
    for (int i = 0; i < 25; ++i) kv[(c * C + c) * 25 + i] = g[i];
  Tensor kernel = Tensor::from({C, C, 5, 5}, std::move(kv));
  Tensor blurred = ad::conv2d(x, kernel, 2);

  // Renormalize by the blur of an all-ones image so borders keep unit mass.
  Tensor ones = Tensor::constant({1, H, W}, 1.0);
  Tensor k1 = Tensor::from({1, 1, 5, 5}, g);
  Tensor norm = ad::conv2d(ones, k1, 2);
  std::vector<double> recip(norm.size());
  for (std::size_t i = 0; i < recip.size(); ++i) recip[i] = 1.0 / norm.at(i);
  Tensor recip_map = Tensor::from({blurred.dim(1), blurred.dim(2)}, std::move(recip));
  return ad::scale_channels(blurred, recip_map);
}

NvsParts nvs_parts(const Tensor& pred, const Tensor& target) {
  check(pred.defined() && target.defined() && pred.rank() == 3 && target.rank() == 3,
        "reconstruction loss inputs must be (C,H,W)");
  check(pred.shape() == target.shape(),
        "reconstruction loss shape mismatch: " + ad::shape_str(pred.shape()) + " vs " +
            ad::shape_str(target.shape()));
  NvsParts parts;
  parts.pixel = mse(pred, target);
  Tensor p = pred, t = target;
  std::vector<Tensor> levels;
  for (int l = 0; l < 3; ++l) {
    p = blur_down(p);
    t = blur_down(t);
    levels.push_back(mse(p, t));
  }
  parts.perceptual = mean_over_batch(std::move(levels));
  return parts;
}

Tensor nvs_loss(const Tensor& pred, const Tensor& target) {
  NvsParts parts = nvs_parts(pred, target);
  return ad::add(parts.pixel, ad::scale(parts.perceptual, kPerceptualWeight));
}

Tensor position_prior(const BatchDetections& batch) {
  check_batch(batch, "position prior");
  const std::size_t slots = batch.front().size();
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t s = 0; s < slots; ++s) {
    std::vector<Tensor> cxs, cys;
    cxs.reserve(batch.size());
    cys.reserve(batch.size());
    for (const auto& sample : batch) {
      cxs.push_back(sample[s].box.cx);
      cys.push_back(sample[s].box.cy);
    }
    Tensor mx = mean_over_batch(std::move(cxs));
    Tensor my = mean_over_batch(std::move(cys));
    total = ad::add(total, ad::add(ad::square(mx), ad::square(my)));
  }
  return ad::reshape(total, {1});
}

Tensor scale_prior(const BatchDetections& batch) {
  check_batch(batch, "scale prior");
  const std::size_t slots = batch.front().size();
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t s = 0; s < slots; ++s) {
    std::vector<Tensor> hs, ratios;
    hs.reserve(batch.size());
    ratios.reserve(batch.size());
    for (const auto& sample : batch) {
      hs.push_back(sample[s].box.h);
      ratios.push_back(ad::divide(sample[s].box.h, sample[s].box.w));
    }
    Tensor mh = ad::add_constant(mean_over_batch(std::move(hs)), -nets::kPriorHeight);
    Tensor mr = ad::add_constant(mean_over_batch(std::move(ratios)), -nets::kPriorAspect);
    total = ad::add(total, ad::add(ad::square(mh), ad::square(mr)));
  }
  return ad::reshape(total, {1});
}

Tensor pose_loss(const Tensor& pred, const Tensor& gt) {
  check(pred.defined() && gt.defined() && pred.rank() == 2 && pred.dim(1) == 3,
        "pose loss inputs must be (J,3)");
  check(pred.shape() == gt.shape(),
        "pose loss shape mismatch: " + ad::shape_str(pred.shape()) + " vs " +
            ad::shape_str(gt.shape()));
  return mse(pred, gt);
}

const Tensor& LossReport::component(const std::string& name) const {
  for (const auto& [n, t] : components)
    if (n == name) return t;
  throw Error("loss report has no component " + name);
}

bool LossReport::has(const std::string& name) const {
  for (const auto& [n, t] : components)
    if (n == name) return true;
  return false;
}

double LossReport::weight_of(const std::string& name) {
  if (name == "pixel" || name == "pose") return 1.0;
  if (name == "perceptual") return kPerceptualWeight;
  if (name == "prior_pos" || name == "prior_scale") return kPriorWeight;
  throw Error("unknown loss component " + name);
}

LossReport total_selfsup_loss(const std::vector<Tensor>& pred_v,
                              const std::vector<Tensor>& target_v,
                              const std::vector<Tensor>& pred_w,
                              const std::vector<Tensor>& target_w,
                              const BatchDetections& dets_v,
                              const BatchDetections& dets_w) {
  const std::size_t B = pred_v.size();
  check(B > 0 && target_v.size() == B && pred_w.size() == B && target_w.size() == B,
        "selfsup loss needs equally sized, non-empty image batches");
  check(dets_v.size() == B && dets_w.size() == B,
        "selfsup loss needs one detection list per sample");

  std::vector<Tensor> pix, perc;
  pix.reserve(B);
  perc.reserve(B);
  for (std::size_t b = 0; b < B; ++b) {
    NvsParts a = nvs_parts(pred_v[b], target_v[b]);
    NvsParts c = nvs_parts(pred_w[b], target_w[b]);
    pix.push_back(ad::add(a.pixel, c.pixel));
    perc.push_back(ad::add(a.perceptual, c.perceptual));
  }
  LossReport report;
  Tensor pixel = mean_over_batch(std::move(pix));
  Tensor perceptual = mean_over_batch(std::move(perc));
  Tensor prior_pos = ad::add(position_prior(dets_v), position_prior(dets_w));
  Tensor prior_scale = ad::add(scale_prior(dets_v), scale_prior(dets_w));
  report.components = {{"pixel", pixel},
                       {"perceptual", perceptual},
                       {"prior_pos", prior_pos},
                       {"prior_scale", prior_scale}};
  report.total = ad::add(
      ad::add(pixel, ad::scale(perceptual, kPerceptualWeight)),
      ad::scale(ad::add(prior_pos, prior_scale), kPriorWeight));
  return report;
}

}  // namespace scenedec::losses
