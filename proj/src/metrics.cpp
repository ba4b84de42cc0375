#include "scenedec/metrics.hpp"

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <limits>

namespace scenedec::eval {

namespace {

using ad::Tensor;

Eigen::MatrixXd as_points(const Tensor& t, const char* who) {
  check(t.rank() == 2 && t.dim(1) == 3,
        std::string(who) + " keypoints must have shape (J,3)");
  const std::size_t J = t.dim(0);
  Eigen::MatrixXd m(3, static_cast<Eigen::Index>(J));
  for (std::size_t j = 0; j < J; ++j)
    for (std::size_t c = 0; c < 3; ++c)
      m(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(j)) =
          t.at(j * 3 + c);
  return m;
}

double mean_joint_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  double sum = 0.0;
  for (Eigen::Index j = 0; j < a.cols(); ++j) sum += (a.col(j) - b.col(j)).norm();
  return sum / static_cast<double>(a.cols());
}

}  // namespace

double mpjpe(const Tensor& pred, const Tensor& gt) {
  Eigen::MatrixXd p = as_points(pred, "pred");
  Eigen::MatrixXd g = as_points(gt, "gt");
  check(p.cols() == g.cols(), "mpjpe: joint counts differ");
  check(p.cols() >= 1, "mpjpe: need at least one joint");
  return mean_joint_distance(p, g);
}

double n_mpjpe(const Tensor& pred, const Tensor& gt) {
  Eigen::MatrixXd p = as_points(pred, "pred");
  Eigen::MatrixXd g = as_points(gt, "gt");
  check(p.cols() == g.cols(), "n_mpjpe: joint counts differ");
  const Eigen::Index J = g.cols();
  check(J >= 3, "n_mpjpe: need at least three joints");

  Eigen::MatrixXd gc = g.colwise() - g.rowwise().mean();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(gc);
  const auto& s = svd.singularValues();
  check(s(1) > 1e-9 * std::max(s(0), 1e-300),
        "n_mpjpe: ground-truth joints are collinear");

  Eigen::Matrix4d T = Eigen::umeyama(p, g, true);
  Eigen::MatrixXd aligned =
      (T.topLeftCorner<3, 3>() * p).colwise() + T.topRightCorner<3, 1>();
  const double d = mean_joint_distance(aligned, g);
  check(std::isfinite(d), "n_mpjpe: alignment produced a non-finite result");
  return d;
}

double nmpjpe_star(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts) {
  check(preds.size() == gts.size(), "nmpjpe_star: sample counts differ");
  check(!preds.empty(), "nmpjpe_star: empty evaluation set");
  std::vector<Eigen::MatrixXd> ps, gs;
  for (std::size_t m = 0; m < preds.size(); ++m) {
    ps.push_back(as_points(preds[m], "pred").transpose());  // (J,3)
    gs.push_back(as_points(gts[m], "gt").transpose());
    check(ps.back().rows() == ps.front().rows() && gs.back().rows() == ps.front().rows(),
          "nmpjpe_star: joint counts differ across samples");
  }
  const Eigen::Index J = ps.front().rows();
  check(static_cast<Eigen::Index>(ps.size()) >= J,
        "nmpjpe_star: need at least as many samples as joints");

  // minimize sum_m |W P_m - G_m|_F^2: W = B A^-1 with A = sum P P^T, B = sum G P^T
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(J, J);
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(J, J);
  for (std::size_t m = 0; m < ps.size(); ++m) {
    A += ps[m] * ps[m].transpose();
    B += gs[m] * ps[m].transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
  const auto& s = svd.singularValues();
  const double cond = s(J - 1) > 0.0 ? s(0) / s(J - 1)
                                     : std::numeric_limits<double>::infinity();
  check(cond < 1e12, "nmpjpe_star: joint system is rank deficient, condition number " +
                         std::to_string(cond));
  Eigen::MatrixXd W = A.ldlt().solve(B.transpose()).transpose();

  double sum = 0.0;
  for (std::size_t m = 0; m < ps.size(); ++m)
    sum += mean_joint_distance((W * ps[m]).transpose(), gs[m].transpose());
  return sum / static_cast<double>(ps.size());
}

double mask_iou(const Tensor& a, const Tensor& b, double thr) {
  check(a.shape() == b.shape(), "mask_iou: shape mismatch");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const bool x = av[i] >= thr;
    const bool y = bv[i] >= thr;
    inter += static_cast<std::size_t>(x && y);
    uni += static_cast<std::size_t>(x || y);
  }
  if (uni == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

DetectionMetrics detection_metrics(const std::vector<FrameDetections>& pred,
                                   const std::vector<FrameDetections>& gt,
                                   double iou_threshold) {
  check(pred.size() == gt.size(), "detection_metrics: frame counts differ");
  DetectionMetrics out;
  double iou_sum = 0.0;
  int iou_count = 0;
  for (std::size_t f = 0; f < pred.size(); ++f) {
    const auto& pf = pred[f];
    const auto& gf = gt[f];
    check(pf.masks.empty() || pf.masks.size() == pf.boxes.size(),
          "detection_metrics: prediction masks must pair with boxes");
    check(gf.masks.empty() || gf.masks.size() == gf.boxes.size(),
          "detection_metrics: ground-truth masks must pair with boxes");
    out.gt_total += static_cast<int>(gf.boxes.size());
    for (const auto& [pi, gi] : geo::greedy_iou_match(pf.boxes, gf.boxes, iou_threshold)) {
      ++out.matched;
      if (!pf.masks.empty() && !gf.masks.empty()) {
        iou_sum += mask_iou(pf.masks[static_cast<std::size_t>(pi)],
                            gf.masks[static_cast<std::size_t>(gi)]);
        ++iou_count;
      }
    }
  }
  out.detection_rate =
      out.gt_total > 0 ? static_cast<double>(out.matched) / out.gt_total : 0.0;
  out.mask_iou = iou_count > 0 ? iou_sum / iou_count : 0.0;
  return out;
}

EvalReport evaluate_pipeline(const train::PipelineState& state,
                             const train::TrainConfig& cfg, const world::Dataset& data,
                             const train::RunData& run, const world::GroundTruth& gt,
                             const EvalOptions& opts) {
  check(opts.stage == 1 || opts.stage == 2, "evaluation stage must be 1 or 2");
  check(gt.frames() == data.frames() && gt.views() == data.views(),
        "ground truth does not match the dataset");
  check(run.heldout_frames >= 1, "run data has no held-out frames");

  int frames = run.heldout_frames;
  if (opts.max_frames > 0) frames = std::min(frames, opts.max_frames);

  EvalReport report;
  double iou_sum = 0.0;
  std::vector<Tensor> pose_preds, pose_gts;
  int degenerate = 0;
  double n_mpjpe_sum = 0.0;

  for (int k = 0; k < frames; ++k) {
    const int f = run.train_frames + k;
    for (int v = 0; v < data.views(); ++v) {
      const int w = (v + 1) % data.views();
      train::PairView va{data.image(f, v), run.backgrounds[static_cast<std::size_t>(v)],
                         data.cameras()[static_cast<std::size_t>(v)]};
      train::PairView vb{data.image(f, w), run.backgrounds[static_cast<std::size_t>(w)],
                         data.cameras()[static_cast<std::size_t>(w)]};
      train::PairOutput out = train::bi_nvs_step(state, cfg, va, vb, opts.stage);
      const auto& slot_masks =
          opts.stage >= 2 ? out.a.visibility : out.a.masks;

      std::vector<geo::BoundingBox> pred_boxes;
      for (const auto& d : out.a.detections) pred_boxes.push_back(d.box);
      std::vector<geo::BoundingBox> gt_boxes;
      std::vector<int> gt_sprite;
      for (int s = 0; s < gt.sprites(); ++s) {
        const auto& e = gt.at(f, v, s);
        if (e.visible_pixels <= 0) continue;
        gt_boxes.push_back(geo::make_box(e.cx, e.cy, e.w, e.h));
        gt_sprite.push_back(s);
      }
      report.gt_total += static_cast<int>(gt_boxes.size());

      train::SlotCodes codes;
      if (opts.with_pose) codes = train::detect_and_encode(state, cfg, va.image);

      for (const auto& [pi, gi] :
           geo::greedy_iou_match(pred_boxes, gt_boxes, opts.iou_threshold)) {
        const int sprite = gt_sprite[static_cast<std::size_t>(gi)];
        EvalRow row;
        row.frame = f;
        row.view = v;
        row.slot = pi;
        row.sprite = sprite;
        row.box_iou = geo::box_iou(pred_boxes[static_cast<std::size_t>(pi)],
                                   gt_boxes[static_cast<std::size_t>(gi)]);
        row.mask_iou = mask_iou(slot_masks[static_cast<std::size_t>(pi)],
                                gt.mask(f, v, sprite));
        row.pose_err = std::numeric_limits<double>::quiet_NaN();
        ++report.matched;
        iou_sum += row.mask_iou;

        if (opts.with_pose) {
          Tensor pred_pose = state.pose->forward(
              codes.codes[static_cast<std::size_t>(pi)], nets::Mode::Eval);
          const auto& kp = gt.at(f, v, sprite).keypoints;
          std::vector<double> vals;
          vals.reserve(15);
          for (int r = 0; r < 5; ++r)
            for (int c = 0; c < 3; ++c) vals.push_back(kp(r, c));
          Tensor gt_pose = Tensor::from({5, 3}, vals);
          row.pose_err = mpjpe(pred_pose, gt_pose);
          pose_preds.push_back(pred_pose);
          pose_gts.push_back(gt_pose);
          try {
            n_mpjpe_sum += n_mpjpe(pred_pose, gt_pose);
          } catch (const Error&) {
            ++degenerate;
          }
        }
        report.rows.push_back(row);
      }
    }
  }

  report.detection_rate =
      report.gt_total > 0 ? static_cast<double>(report.matched) / report.gt_total : 0.0;
  report.mask_iou = report.matched > 0 ? iou_sum / report.matched : 0.0;

  const double nan = std::numeric_limits<double>::quiet_NaN();
  report.mpjpe = nan;
  report.n_mpjpe = nan;
  report.nmpjpe_star = nan;
  if (opts.with_pose && !pose_preds.empty()) {
    double sum = 0.0;
    for (const auto& row : report.rows)
      if (!std::isnan(row.pose_err)) sum += row.pose_err;
    report.mpjpe = sum / static_cast<double>(pose_preds.size());
    const int aligned = static_cast<int>(pose_preds.size()) - degenerate;
    if (aligned > 0) report.n_mpjpe = n_mpjpe_sum / aligned;
    if (pose_preds.size() >= 5) {
      try {
        report.nmpjpe_star = nmpjpe_star(pose_preds, pose_gts);
      } catch (const Error&) {
      }
    }
  }
  return report;
}

}  // namespace scenedec::eval
