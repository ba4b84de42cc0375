#include "scenedec/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

#include "scenedec/assoc.hpp"
#include "scenedec/camera.hpp"
#include "scenedec/compose.hpp"
#include "scenedec/warp.hpp"

namespace scenedec::train {

namespace {

using ad::Tensor;

constexpr int kStageDefaultIters[3] = {2000, 2000, 1500};
constexpr double kPoseMatchIou = 0.25;

std::string fmt6(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

void check_finite(const losses::LossReport& rep, long step) {
  for (const auto& [name, t] : rep.components)
    check(std::isfinite(t.item()), "training aborted at step " + std::to_string(step) +
                                       ": loss component " + name + " is not finite");
  check(std::isfinite(rep.total.item()),
        "training aborted at step " + std::to_string(step) + ": total loss is not finite");
}

void log_row(std::ostream& os, long step, int stage, const losses::LossReport& rep) {
  auto val = [&rep](const char* name) {
    return rep.has(name) ? rep.component(name).item() : 0.0;
  };
  os << step << ',' << stage << ',' << fmt6(rep.total.item()) << ',' << fmt6(val("pixel"))
     << ',' << fmt6(val("perceptual")) << ',' << fmt6(val("prior_pos")) << ','
     << fmt6(val("prior_scale")) << ',' << fmt6(val("pose")) << '\n'
     << std::flush;
}

void adam_over(PipelineState& state, nets::ParamStore& params, double lr) {
  for (const auto& e : params.entries()) {
    Tensor t = e.tensor;
    if (!t.requires_grad() || !t.has_grad()) continue;
    ad::adam_step(t, state.adam[e.name], lr, e.name);
    t.zero_grad();
  }
}

void apply_adam(PipelineState& state, const TrainConfig& cfg) {
  adam_over(state, state.detector->params(), cfg.lr_detector_encoder);
  adam_over(state, state.encoder->params(), cfg.lr_detector_encoder);
  adam_over(state, state.decoder->params(), cfg.lr_decoder_regressor);
  adam_over(state, state.pose->params(), cfg.lr_decoder_regressor);
}

nets::Whitening fit_whitening(const world::Dataset& data, const RunData& run) {
  std::vector<Tensor> sample;
  const int stride = std::max(1, run.train_frames / 25);
  for (int f = 0; f < run.train_frames; f += stride)
    for (int v = 0; v < data.views(); ++v) sample.push_back(data.image(f, v));
  return nets::compute_whitening(sample);
}

PairView make_pair_view(const world::Dataset& data, const RunData& run, int frame,
                        int view) {
  return {data.image(frame, view), run.backgrounds[static_cast<std::size_t>(view)],
          data.cameras()[static_cast<std::size_t>(view)]};
}

std::vector<nets::LatentCode> encode_slots(const PipelineState& state,
                                           const TrainConfig& cfg, const Tensor& white,
                                           const std::vector<nets::Detection>& dets) {
  const auto S = static_cast<std::size_t>(cfg.crop);
  std::vector<nets::LatentCode> codes;
  codes.reserve(dets.size());
  for (const auto& d : dets)
    codes.push_back(state.encoder->forward(geo::focal_spatial_transform(white, d.box, S, S)));
  return codes;
}

Tensor stack_appearance(const std::vector<nets::LatentCode>& codes) {
  std::vector<Tensor> rows;
  rows.reserve(codes.size());
  for (const auto& c : codes) rows.push_back(c.appearance);
  return ad::stack_rows(rows);
}

Tensor stack_geometry(const std::vector<nets::LatentCode>& codes) {
  std::vector<Tensor> rows;
  rows.reserve(codes.size());
  for (const auto& c : codes)
    rows.push_back(ad::reshape(c.geometry, {c.geometry.size()}));
  return ad::stack_rows(rows);
}

// Rebuilds `target` from `source`: source codes are reordered into the target
// view's slot order by appearance similarity, their geometry rotated into the
// target camera frame, decoded, and pasted at the target's detected boxes.
ViewDecomposition rebuild(const PipelineState& state, const TrainConfig& cfg,
                          const PairView& target, std::vector<nets::Detection> target_dets,
                          const std::vector<nets::LatentCode>& target_codes,
                          const PairView& source,
                          const std::vector<nets::LatentCode>& source_codes, int stage) {
  const std::size_t H = target.image.dim(1);
  const std::size_t W = target.image.dim(2);
  const std::size_t N = target_dets.size();
  const auto app_dim = static_cast<std::size_t>(cfg.app_dim);
  const auto points = static_cast<std::size_t>(cfg.points);

  Tensor sim = assoc::similarity(stack_appearance(target_codes),
                                 stack_appearance(source_codes),
                                 static_cast<std::size_t>(cfg.assoc_dims));
  Tensor assignment = assoc::soft_assignment(sim, cfg.assoc_beta);
  Tensor app = assoc::reorder(assignment, stack_appearance(source_codes));
  Tensor geom = assoc::reorder(assignment, stack_geometry(source_codes));
  const Eigen::Matrix3d R = geo::relative_rotation(source.camera, target.camera);

  ViewDecomposition out;
  out.detections = std::move(target_dets);
  for (std::size_t i = 0; i < N; ++i) {
    Tensor app_i = ad::reshape(ad::narrow(app, 0, i, 1), {app_dim});
    Tensor geo_i = ad::reshape(ad::narrow(geom, 0, i, 1), {3, points});
    nets::DecodedCrop crop = state.decoder->forward(app_i, geo::rotate_latent(geo_i, R));
    const std::size_t S = crop.mask.dim(0);
    out.layers.push_back(geo::inverse_spatial_transform(crop.rgb, out.detections[i].box, H,
                                                        W, geo::PadMode::Border));
    Tensor mask = geo::inverse_focal_spatial_transform(
        ad::reshape(crop.mask, {1, S, S}), out.detections[i].box, H, W, geo::PadMode::Zero);
    out.masks.push_back(ad::reshape(mask, {H, W}));
  }
  if (stage <= 1) {
    out.reconstruction = comp::composite_naive(out.layers, out.masks, target.background);
  } else {
    std::vector<Tensor> depths;
    depths.reserve(N);
    for (const auto& d : out.detections) depths.push_back(d.z);
    comp::Composite c = comp::composite_scene(out.layers, out.masks, depths,
                                              target.background, cfg.occlusion_alpha);
    out.reconstruction = c.image;
    out.depth_map = c.depth;
    out.visibility = c.vis.visibility;
  }
  return out;
}

struct PairParts {
  std::vector<nets::Detection> dets_a, dets_b;
  ViewDecomposition a, b;
};

PairParts pair_parts(const PipelineState& state, const TrainConfig& cfg,
                     const PairView& va, const PairView& vb, const Tensor& raw_a,
                     const Tensor& raw_b, int stage) {
  check(stage == 1 || stage == 2, "cross-view reconstruction runs in stages 1 and 2");
  PairParts parts;
  parts.dets_a = nets::decode_detections(raw_a);
  parts.dets_b = nets::decode_detections(raw_b);
  Tensor white_a = state.whitening.apply(va.image);
  Tensor white_b = state.whitening.apply(vb.image);
  auto codes_a = encode_slots(state, cfg, white_a, parts.dets_a);
  auto codes_b = encode_slots(state, cfg, white_b, parts.dets_b);
  parts.a = rebuild(state, cfg, va, parts.dets_a, codes_a, vb, codes_b, stage);
  parts.b = rebuild(state, cfg, vb, parts.dets_b, codes_b, va, codes_a, stage);
  return parts;
}

void check_nets(const PipelineState& state) {
  check(state.detector && state.encoder && state.decoder && state.pose,
        "pipeline state is missing networks");
}

}  // namespace

void TrainConfig::validate() const {
  check(stage >= 1 && stage <= 3, "stage must be 1, 2, or 3");
  check(slots >= 1, "slots must be positive");
  check(batch_size >= 1, "batch_size must be positive");
  check(iterations >= 0, "iterations must be nonnegative");
  check(lr_detector_encoder > 0.0 && lr_decoder_regressor > 0.0,
        "learning rates must be positive");
  check(crop >= 4, "crop must be at least 4");
  check(points >= 1 && app_dim >= 1, "latent sizes must be positive");
  check(assoc_dims >= 1 && assoc_dims <= app_dim,
        "assoc_dims must be in [1, app_dim]");
  check(assoc_beta > 0.0, "assoc_beta must be positive");
  check(occlusion_alpha > 0.0, "occlusion_alpha must be positive");
  check(label_fraction > 0.0 && label_fraction <= 1.0,
        "label_fraction must be in (0,1]");
  check(holdout_fraction > 0.0 && holdout_fraction < 1.0,
        "holdout_fraction must be in (0,1)");
  check(log_every >= 1, "log_every must be positive");
  check(pose_hidden >= 1, "pose_hidden must be positive");
  check(pose_dropout >= 0.0 && pose_dropout < 1.0, "pose_dropout must be in [0,1)");
}

int TrainConfig::resolved_iterations() const {
  if (iterations > 0) return iterations;
  return kStageDefaultIters[stage - 1];
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open train config " + path);
  TrainConfig cfg;
  try {
    nlohmann::json j;
    in >> j;
    cfg = j.get<TrainConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw Error("train config " + path + ": " + e.what());
  }
  cfg.validate();
  return cfg;
}

std::vector<nets::ParamEntry> PipelineState::all_params() const {
  std::vector<nets::ParamEntry> out;
  auto add = [&out](const nets::ParamStore& store) {
    for (const auto& e : store.entries()) out.push_back(e);
  };
  if (detector) add(detector->params());
  if (encoder) add(encoder->params());
  if (decoder) add(decoder->params());
  if (pose) add(pose->params());
  return out;
}

RunData prepare_run_data(const world::Dataset& data, double holdout_fraction) {
  check(holdout_fraction > 0.0 && holdout_fraction < 1.0,
        "holdout_fraction must be in (0,1)");
  const int F = data.frames();
  check(F >= 4, "dataset needs at least four frames");
  int held = static_cast<int>(std::lround(F * holdout_fraction));
  held = std::max(1, std::min(held, F - 3));
  RunData run;
  run.train_frames = F - held;
  run.heldout_frames = held;
  for (int v = 0; v < data.views(); ++v) {
    std::vector<Tensor> frames;
    frames.reserve(static_cast<std::size_t>(run.train_frames));
    for (int f = 0; f < run.train_frames; ++f) frames.push_back(data.image(f, v));
    run.backgrounds.push_back(world::compute_background(frames));
  }
  return run;
}

PipelineState init_state(const TrainConfig& cfg, const world::Dataset& data,
                         const RunData& run) {
  cfg.validate();
  check(data.height() == data.width(), "frames must be square");
  check(data.views() >= 2, "dataset needs at least two views");

  PipelineState state;
  state.rng = Rng(cfg.seed);

  nets::DetectorConfig dc;
  dc.resolution = data.height();
  dc.widths = cfg.detector_widths;
  dc.max_detections = cfg.slots;
  nets::EncoderConfig ec;
  ec.crop = cfg.crop;
  ec.widths = cfg.encoder_widths;
  ec.app_dim = cfg.app_dim;
  ec.points = cfg.points;
  nets::DecoderConfig xc;
  xc.crop = cfg.crop;
  xc.app_dim = cfg.app_dim;
  xc.points = cfg.points;
  xc.base = cfg.decoder_base;
  xc.base_channels = cfg.decoder_base_channels;
  xc.widths = cfg.decoder_widths;
  nets::PoseRegressorConfig pc;
  pc.points = cfg.points;
  pc.app_dim = cfg.app_dim;
  pc.use_appearance = cfg.pose_use_appearance;
  pc.hidden = cfg.pose_hidden;
  pc.dropout = cfg.pose_dropout;

  state.detector = std::make_unique<nets::Detector>(dc, state.rng);
  state.encoder = std::make_unique<nets::Encoder>(ec, state.rng);
  state.decoder = std::make_unique<nets::Decoder>(xc, state.rng);
  state.pose = std::make_unique<nets::PoseRegressor>(pc, state.rng);
  state.whitening = fit_whitening(data, run);
  return state;
}

void save_checkpoint(const PipelineState& state, const std::string& path) {
  check_nets(state);
  nlohmann::json j;
  j["format"] = "checkpoint v1";
  j["stage_completed"] = state.stage_completed;
  j["iteration"] = state.iteration;
  j["rng"] = state.rng.save_state();
  j["whitening"] = state.whitening;
  j["detector"] = {{"config", state.detector->config()},
                   {"params", state.detector->params().values_to_json()}};
  j["encoder"] = {{"config", state.encoder->config()},
                  {"params", state.encoder->params().values_to_json()}};
  j["decoder"] = {{"config", state.decoder->config()},
                  {"params", state.decoder->params().values_to_json()}};
  j["pose"] = {{"config", state.pose->config()},
               {"params", state.pose->params().values_to_json()}};
  nlohmann::json adam = nlohmann::json::object();
  for (const auto& [name, st] : state.adam)
    adam[name] = {{"m", st.m}, {"v", st.v}, {"t", st.t}};
  j["adam"] = std::move(adam);

  std::ofstream out(path);
  check(out.good(), "cannot write checkpoint " + path);
  out << j.dump() << '\n';
  out.flush();
  check(out.good(), "failed while writing checkpoint " + path);
}

PipelineState load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot open checkpoint " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("checkpoint " + path + " is not valid JSON: " + e.what());
  }
  check(j.is_object() && j.value("format", std::string()) == "checkpoint v1",
        "unsupported checkpoint format in " + path);

  PipelineState state;
  try {
    state.stage_completed = j.at("stage_completed").get<int>();
    state.iteration = j.at("iteration").get<long>();
    state.rng.load_state(j.at("rng").get<std::string>());
    state.whitening = j.at("whitening").get<nets::Whitening>();

    Rng scratch(0);
    state.detector = std::make_unique<nets::Detector>(
        j.at("detector").at("config").get<nets::DetectorConfig>(), scratch);
    state.detector->params().values_from_json(j.at("detector").at("params"));
    state.encoder = std::make_unique<nets::Encoder>(
        j.at("encoder").at("config").get<nets::EncoderConfig>(), scratch);
    state.encoder->params().values_from_json(j.at("encoder").at("params"));
    state.decoder = std::make_unique<nets::Decoder>(
        j.at("decoder").at("config").get<nets::DecoderConfig>(), scratch);
    state.decoder->params().values_from_json(j.at("decoder").at("params"));
    state.pose = std::make_unique<nets::PoseRegressor>(
        j.at("pose").at("config").get<nets::PoseRegressorConfig>(), scratch);
    state.pose->params().values_from_json(j.at("pose").at("params"));

    for (const auto& [name, sj] : j.at("adam").items()) {
      ad::AdamState st;
      st.m = sj.at("m").get<std::vector<double>>();
      st.v = sj.at("v").get<std::vector<double>>();
      st.t = sj.at("t").get<long>();
      state.adam.emplace(name, std::move(st));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("checkpoint " + path + " is malformed: " + e.what());
  }
  return state;
}

std::vector<PairSample> sample_view_pairs(int frame_count, int views, int batch_size,
                                          Rng& rng) {
  check(frame_count >= 1, "need at least one frame to sample");
  check(views >= 2, "need at least two views to sample pairs");
  check(batch_size >= 1, "batch_size must be positive");
  std::vector<PairSample> out;
  out.reserve(static_cast<std::size_t>(batch_size));
  for (int b = 0; b < batch_size; ++b) {
    PairSample p;
    p.frame = rng.uniform_int(0, frame_count - 1);
    p.view_a = rng.uniform_int(0, views - 1);
    const int other = rng.uniform_int(0, views - 2);
    p.view_b = other >= p.view_a ? other + 1 : other;
    out.push_back(p);
  }
  return out;
}

PairOutput bi_nvs_from_raw(const PipelineState& state, const TrainConfig& cfg,
                           const PairView& va, const PairView& vb, const Tensor& raw_a,
                           const Tensor& raw_b, int stage) {
  check_nets(state);
  PairParts parts = pair_parts(state, cfg, va, vb, raw_a, raw_b, stage);
  PairOutput out;
  out.report = losses::total_selfsup_loss({parts.a.reconstruction}, {va.image},
                                          {parts.b.reconstruction}, {vb.image},
                                          {parts.dets_a}, {parts.dets_b});
  out.a = std::move(parts.a);
  out.b = std::move(parts.b);
  return out;
}

PairOutput bi_nvs_step(const PipelineState& state, const TrainConfig& cfg,
                       const PairView& va, const PairView& vb, int stage) {
  check_nets(state);
  Tensor raw_a = state.detector->raw_forward(state.whitening.apply(va.image));
  Tensor raw_b = state.detector->raw_forward(state.whitening.apply(vb.image));
  return bi_nvs_from_raw(state, cfg, va, vb, raw_a, raw_b, stage);
}

SlotCodes detect_and_encode(const PipelineState& state, const TrainConfig& cfg,
                            const ad::Tensor& image) {
  check_nets(state);
  Tensor white = state.whitening.apply(image);
  SlotCodes sc;
  sc.detections = nets::decode_detections(state.detector->raw_forward(white));
  sc.codes = encode_slots(state, cfg, white, sc.detections);
  return sc;
}

losses::LossReport train_step(PipelineState& state, const TrainConfig& cfg,
                              const world::Dataset& data, const RunData& run,
                              int stage) {
  check_nets(state);
  check(stage == 1 || stage == 2, "train_step handles stages 1 and 2");
  check(run.backgrounds.size() == static_cast<std::size_t>(data.views()),
        "run data does not match the dataset");
  const auto pairs = sample_view_pairs(run.train_frames, data.views(), cfg.batch_size,
                                       state.rng);
  std::vector<Tensor> pred_a, tgt_a, pred_b, tgt_b;
  losses::BatchDetections dets_a, dets_b;
  for (const auto& p : pairs) {
    PairView va = make_pair_view(data, run, p.frame, p.view_a);
    PairView vb = make_pair_view(data, run, p.frame, p.view_b);
    Tensor raw_a = state.detector->raw_forward(state.whitening.apply(va.image));
    Tensor raw_b = state.detector->raw_forward(state.whitening.apply(vb.image));
    PairParts parts = pair_parts(state, cfg, va, vb, raw_a, raw_b, stage);
    pred_a.push_back(parts.a.reconstruction);
    tgt_a.push_back(va.image);
    pred_b.push_back(parts.b.reconstruction);
    tgt_b.push_back(vb.image);
    dets_a.push_back(std::move(parts.dets_a));
    dets_b.push_back(std::move(parts.dets_b));
  }
  losses::LossReport rep =
      losses::total_selfsup_loss(pred_a, tgt_a, pred_b, tgt_b, dets_a, dets_b);
  check_finite(rep, state.iteration);
  ad::backward(rep.total);
  apply_adam(state, cfg);
  return rep;
}

losses::LossReport pose_step(PipelineState& state, const TrainConfig& cfg,
                             const world::Dataset& data, const RunData& run,
                             const world::GroundTruth& gt,
                             const std::vector<int>& labeled) {
  check_nets(state);
  check(!labeled.empty(), "stage 3 needs at least one labeled frame");
  check(gt.frames() == data.frames() && gt.views() == data.views(),
        "ground truth does not match the dataset");
  for (int f : labeled)
    check(f >= 0 && f < run.train_frames, "labeled frame outside the train split");

  std::vector<Tensor> preds, targets;
  const int max_attempts = 16 * cfg.batch_size;
  for (int attempt = 0;
       static_cast<int>(preds.size()) < cfg.batch_size && attempt < max_attempts;
       ++attempt) {
    const int f = labeled[static_cast<std::size_t>(
        state.rng.uniform_int(0, static_cast<int>(labeled.size()) - 1))];
    const int v = state.rng.uniform_int(0, data.views() - 1);
    SlotCodes sc = detect_and_encode(state, cfg, data.image(f, v));

    std::vector<geo::BoundingBox> pred_boxes;
    for (const auto& d : sc.detections) pred_boxes.push_back(d.box);
    std::vector<geo::BoundingBox> gt_boxes;
    std::vector<const world::GtEntry*> gt_entries;
    for (int s = 0; s < gt.sprites(); ++s) {
      const auto& e = gt.at(f, v, s);
      if (e.visible_pixels <= 0) continue;
      gt_boxes.push_back(geo::make_box(e.cx, e.cy, e.w, e.h));
      gt_entries.push_back(&e);
    }
    for (const auto& [pi, gi] : geo::greedy_iou_match(pred_boxes, gt_boxes, kPoseMatchIou)) {
      if (static_cast<int>(preds.size()) >= cfg.batch_size) break;
      preds.push_back(state.pose->forward(sc.codes[static_cast<std::size_t>(pi)],
                                          nets::Mode::Train, &state.rng));
      const auto& kp = gt_entries[static_cast<std::size_t>(gi)]->keypoints;
      std::vector<double> vals;
      vals.reserve(15);
      for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 3; ++c) vals.push_back(kp(r, c));
      targets.push_back(Tensor::from({5, 3}, vals));
    }
  }
  check(!preds.empty(), "stage 3 found no detections overlapping the labeled boxes");

  std::vector<Tensor> per;
  per.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i)
    per.push_back(losses::pose_loss(preds[i], targets[i]));
  Tensor total = per.size() == 1 ? per[0] : ad::reduce_mean(ad::concat_flat(per));

  losses::LossReport rep;
  rep.total = total;
  rep.components = {{"pose", total}};
  check_finite(rep, state.iteration);
  ad::backward(total);
  apply_adam(state, cfg);
  return rep;
}

std::vector<int> labeled_frames(int train_frames, double label_fraction) {
  check(train_frames >= 1, "need at least one train frame");
  check(label_fraction > 0.0 && label_fraction <= 1.0,
        "label_fraction must be in (0,1]");
  const int stride = std::max(1, static_cast<int>(std::lround(1.0 / label_fraction)));
  std::vector<int> out;
  for (int f = 0; f < train_frames; f += stride) out.push_back(f);
  return out;
}

double heldout_selfsup_loss(const PipelineState& state, const TrainConfig& cfg,
                            const world::Dataset& data, const RunData& run, int stage,
                            int pairs, Rng& rng) {
  check(run.heldout_frames >= 1, "run data has no held-out frames");
  check(pairs >= 1, "need at least one evaluation pair");
  const auto samples = sample_view_pairs(run.heldout_frames, data.views(), pairs, rng);
  double sum = 0.0;
  for (const auto& p : samples) {
    const int f = run.train_frames + p.frame;
    PairView va = make_pair_view(data, run, f, p.view_a);
    PairView vb = make_pair_view(data, run, f, p.view_b);
    sum += bi_nvs_step(state, cfg, va, vb, stage).report.total.item();
  }
  return sum / pairs;
}

PipelineState run_stage(const TrainConfig& cfg, const world::Dataset& data,
                        std::optional<PipelineState> prev, std::ostream* log) {
  cfg.validate();
  RunData run = prepare_run_data(data, cfg.holdout_fraction);

  PipelineState state;
  if (cfg.stage == 1) {
    check(!prev.has_value(), "stage 1 starts from a fresh state");
    state = init_state(cfg, data, run);
  } else {
    check(prev.has_value(), "stage " + std::to_string(cfg.stage) +
                                " needs the previous stage's state");
    state = std::move(*prev);
    check_nets(state);
    check(state.stage_completed >= cfg.stage - 1,
          "stage " + std::to_string(cfg.stage) + " needs a state that completed stage " +
              std::to_string(cfg.stage - 1));
  }

  if (cfg.stage == 2) {
    // Fresh encoder and decoder on top of the warm detector. Their optimizer
    // state goes with them; the detector keeps its moments.
    state.encoder = std::make_unique<nets::Encoder>(state.encoder->config(), state.rng);
    state.decoder = std::make_unique<nets::Decoder>(state.decoder->config(), state.rng);
    for (auto it = state.adam.begin(); it != state.adam.end();) {
      if (it->first.rfind("encoder.", 0) == 0 || it->first.rfind("decoder.", 0) == 0)
        it = state.adam.erase(it);
      else
        ++it;
    }
  }

  std::unique_ptr<world::GroundTruth> gt;
  std::vector<int> labeled;
  if (cfg.stage == 3) {
    state.detector->params().set_trainable(false);
    state.encoder->params().set_trainable(false);
    gt = std::make_unique<world::GroundTruth>(world::load_ground_truth(data.path()));
    labeled = labeled_frames(run.train_frames, cfg.label_fraction);
  }

  const int iters = cfg.resolved_iterations();
  if (log) *log << "step,stage,total,pixel,perceptual,prior_pos,prior_scale,pose\n";
  for (int it = 1; it <= iters; ++it) {
    ++state.iteration;
    losses::LossReport rep = cfg.stage == 3
                                 ? pose_step(state, cfg, data, run, *gt, labeled)
                                 : train_step(state, cfg, data, run, cfg.stage);
    if (log && (it == 1 || it % cfg.log_every == 0 || it == iters))
      log_row(*log, state.iteration, cfg.stage, rep);
  }
  state.stage_completed = std::max(state.stage_completed, cfg.stage);
  return state;
}

}  // namespace scenedec::train
