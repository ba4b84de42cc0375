#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "scenedec/image_io.hpp"
#include "scenedec/metrics.hpp"
#include "scenedec/spriteworld.hpp"
#include "scenedec/trainer.hpp"

namespace fs = std::filesystem;
using namespace scenedec;
using ad::Tensor;

namespace scenedec::world {
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SpriteWorldConfig, sprites, views,
                                                frames, resolution, ring_radius,
                                                depth_scale, min_visible_fraction,
                                                min_visible_pixels, max_retries,
                                                palette_distance)
}

namespace {

std::string fmt6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

train::TrainConfig config_from(const std::string& path) {
  if (path.empty()) {
    train::TrainConfig cfg;
    cfg.validate();
    return cfg;
  }
  return train::load_train_config(path);
}

world::SpriteWorldConfig sprite_config_from(const std::string& path) {
  world::SpriteWorldConfig cfg;
  if (!path.empty()) {
    std::ifstream in(path);
    check(in.good(), "cannot open dataset config " + path);
    try {
      nlohmann::json j = nlohmann::json::parse(in);
      cfg = j.get<world::SpriteWorldConfig>();
    } catch (const nlohmann::json::exception& e) {
      throw Error("dataset config " + path + " is not valid JSON: " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

// Appends this run's CSV to the cumulative log, keeping a single header.
void merge_log(const std::string& dir, const std::string& rows) {
  fs::create_directories(dir);
  const fs::path path = fs::path(dir) / "train_log.csv";
  const bool fresh = !fs::exists(path);
  std::ofstream out(path, std::ios::app);
  check(out.good(), "cannot write " + path.string());
  if (fresh) {
    out << rows;
  } else {
    const auto cut = rows.find('\n');
    out << (cut == std::string::npos ? rows : rows.substr(cut + 1));
  }
  check(out.good(), "failed writing " + path.string());
}

std::string stage_path(const std::string& dir, int stage) {
  return (fs::path(dir) / ("stage" + std::to_string(stage) + ".json")).string();
}

void draw_box(std::vector<double>& img, std::size_t h, std::size_t w,
              const geo::BoundingBox& b) {
  auto to_px = [](double x, std::size_t n) {
    return static_cast<int>(std::lround((x + 1.0) * 0.5 * static_cast<double>(n) - 0.5));
  };
  const double cx = b.cx.item(), cy = b.cy.item();
  const double bw = b.w.item(), bh = b.h.item();
  int x0 = to_px(cx - bw / 2.0, w), x1 = to_px(cx + bw / 2.0, w);
  int y0 = to_px(cy - bh / 2.0, h), y1 = to_px(cy + bh / 2.0, h);
  x0 = std::clamp(x0, 0, static_cast<int>(w) - 1);
  x1 = std::clamp(x1, 0, static_cast<int>(w) - 1);
  y0 = std::clamp(y0, 0, static_cast<int>(h) - 1);
  y1 = std::clamp(y1, 0, static_cast<int>(h) - 1);
  auto mark = [&](int y, int x) {
    const std::size_t px = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
    img[px] = 1.0;
    img[h * w + px] = 0.1;
    img[2 * h * w + px] = 0.1;
  };
  for (int x = x0; x <= x1; ++x) {
    mark(y0, x);
    mark(y1, x);
  }
  for (int y = y0; y <= y1; ++y) {
    mark(y, x0);
    mark(y, x1);
  }
}

Tensor hstack_images(const std::vector<Tensor>& images) {
  const std::size_t h = images.front().dim(1);
  std::size_t total_w = 0;
  for (const auto& im : images) total_w += im.dim(2) + 1;
  total_w -= 1;
  std::vector<double> out(3 * h * total_w, 1.0);
  std::size_t x_off = 0;
  for (const auto& im : images) {
    const std::size_t w = im.dim(2);
    const auto& v = im.values();
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          out[(c * h + y) * total_w + x_off + x] = v[(c * h + y) * w + x];
    x_off += w + 1;
  }
  return Tensor::from({3, h, total_w}, out);
}

train::PairView view_of(const world::Dataset& data, const train::RunData& run,
                        int frame, int view) {
  return {data.image(frame, view), run.backgrounds[static_cast<std::size_t>(view)],
          data.cameras()[static_cast<std::size_t>(view)]};
}

int run_generate(const std::string& out, const std::string& cfg_path,
                 unsigned long long seed) {
  world::SpriteWorldConfig cfg = sprite_config_from(cfg_path);
  const auto report = world::generate(cfg, seed, out);
  std::cout << "dataset: " << out << "\n"
            << "frames: " << cfg.frames << "  views: " << cfg.views
            << "  sprites: " << cfg.sprites << "  resolution: " << cfg.resolution
            << "\nretries: " << report.retries
            << "  worst visible fraction: " << fmt6(report.worst_visible_fraction)
            << "\n";
  return 0;
}

int run_train(const std::string& data_dir, const std::string& cfg_path, int stage,
              const std::string& out, const std::string& checkpoint,
              std::optional<long> seed, std::optional<double> labels) {
  train::TrainConfig cfg = config_from(cfg_path);
  cfg.stage = stage;
  if (seed) cfg.seed = *seed;
  if (labels) cfg.label_fraction = *labels;
  cfg.validate();

  world::Dataset data(data_dir);
  std::optional<train::PipelineState> prev;
  if (stage > 1) {
    const std::string source =
        checkpoint.empty() ? stage_path(out, stage - 1) : checkpoint;
    if (!fs::exists(source))
      throw Error("stage " + std::to_string(stage) + " needs the stage " +
                  std::to_string(stage - 1) + " checkpoint: cannot open " + source);
    prev = train::load_checkpoint(source);
  } else if (!checkpoint.empty()) {
    throw Error("stage 1 starts fresh; drop --checkpoint " + checkpoint);
  }

  fs::create_directories(out);
  const fs::path live_path =
      fs::path(out) / ("stage" + std::to_string(stage) + "_log.csv");
  train::PipelineState state;
  {
    std::ofstream live(live_path);
    check(live.good(), "cannot write " + live_path.string());
    state = train::run_stage(cfg, data, std::move(prev), &live);
  }
  {
    std::ifstream in(live_path, std::ios::binary);
    std::ostringstream rows;
    rows << in.rdbuf();
    merge_log(out, rows.str());
  }
  fs::remove(live_path);
  const std::string ckpt = stage_path(out, stage);
  train::save_checkpoint(state, ckpt);
  std::cout << "stage " << stage << " finished at step " << state.iteration
            << "\ncheckpoint: " << ckpt << "\nlog: "
            << (fs::path(out) / "train_log.csv").string() << "\n";
  return 0;
}

int run_eval(const std::string& data_dir, const std::string& cfg_path,
             const std::string& checkpoint, int stage, const std::string& out) {
  train::TrainConfig cfg = config_from(cfg_path);
  train::PipelineState state = train::load_checkpoint(checkpoint);
  world::Dataset data(data_dir);
  world::GroundTruth gt = world::load_ground_truth(data_dir);
  train::RunData run = train::prepare_run_data(data, cfg.holdout_fraction);

  eval::EvalOptions opts;
  opts.stage = stage;
  opts.with_pose = state.stage_completed >= 3;
  const eval::EvalReport rep = eval::evaluate_pipeline(state, cfg, data, run, gt, opts);

  const std::vector<std::pair<std::string, double>> summary = {
      {"detection_rate", rep.detection_rate},
      {"mask_iou", rep.mask_iou},
      {"matched", static_cast<double>(rep.matched)},
      {"gt_total", static_cast<double>(rep.gt_total)},
      {"mpjpe", rep.mpjpe},
      {"n_mpjpe", rep.n_mpjpe},
      {"nmpjpe_star", rep.nmpjpe_star},
  };
  std::printf("%-16s %s\n", "metric", "value");
  for (const auto& [name, value] : summary)
    std::printf("%-16s %s\n", name.c_str(), fmt6(value).c_str());

  fs::create_directories(out);
  const fs::path metrics_path = fs::path(out) / "metrics.csv";
  std::ofstream mcsv(metrics_path);
  check(mcsv.good(), "cannot write " + metrics_path.string());
  mcsv << "metric,value\n";
  for (const auto& [name, value] : summary) mcsv << name << "," << fmt6(value) << "\n";

  const fs::path rows_path = fs::path(out) / "eval_rows.csv";
  std::ofstream rcsv(rows_path);
  check(rcsv.good(), "cannot write " + rows_path.string());
  rcsv << "frame,view,slot,sprite,box_iou,mask_iou,pose_err\n";
  for (const auto& r : rep.rows)
    rcsv << r.frame << "," << r.view << "," << r.slot << "," << r.sprite << ","
         << fmt6(r.box_iou) << "," << fmt6(r.mask_iou) << "," << fmt6(r.pose_err)
         << "\n";
  std::cout << "wrote " << metrics_path.string() << " and " << rows_path.string()
            << "\n";
  return 0;
}

int run_render(const std::string& data_dir, const std::string& cfg_path,
               const std::string& checkpoint, int stage, const std::string& out,
               int max_frames) {
  train::TrainConfig cfg = config_from(cfg_path);
  train::PipelineState state = train::load_checkpoint(checkpoint);
  world::Dataset data(data_dir);
  train::RunData run = train::prepare_run_data(data, cfg.holdout_fraction);
  fs::create_directories(out);

  int frames = run.heldout_frames;
  if (max_frames > 0) frames = std::min(frames, max_frames);
  int written = 0;
  for (int k = 0; k < frames; ++k) {
    const int f = run.train_frames + k;
    for (int v = 0; v < data.views(); ++v) {
      const int w = (v + 1) % data.views();
      const auto pair = train::bi_nvs_step(state, cfg, view_of(data, run, f, v),
                                           view_of(data, run, f, w), stage);
      char name[64];
      std::snprintf(name, sizeof name, "render_f%03d_v%dto%d.png", f, v, w);
      img::write_png((fs::path(out) / name).string(),
                     hstack_images({data.image(f, v), pair.b.reconstruction,
                                    data.image(f, w)}));
      ++written;
    }
  }
  std::cout << "wrote " << written << " novel-view triplets (source, synthesis, "
            << "target) to " << out << "\n";
  return 0;
}

int run_decompose(const std::string& data_dir, const std::string& cfg_path,
                  const std::string& checkpoint, const std::string& out,
                  int max_frames, int view) {
  train::TrainConfig cfg = config_from(cfg_path);
  train::PipelineState state = train::load_checkpoint(checkpoint);
  world::Dataset data(data_dir);
  check(view >= 0 && view < data.views(), "view out of range");
  train::RunData run = train::prepare_run_data(data, cfg.holdout_fraction);
  fs::create_directories(out);

  int frames = run.heldout_frames;
  if (max_frames > 0) frames = std::min(frames, max_frames);
  for (int k = 0; k < frames; ++k) {
    const int f = run.train_frames + k;
    const int partner = (view + 1) % data.views();
    const auto pair = train::bi_nvs_step(state, cfg, view_of(data, run, f, view),
                                         view_of(data, run, f, partner), 2);
    char prefix[32];
    std::snprintf(prefix, sizeof prefix, "f%03d_v%d", f, view);
    const fs::path base = fs::path(out) / prefix;

    Tensor overlay = data.image(f, view).detached_copy();
    {
      std::vector<double>& px = overlay.mutable_values();
      for (const auto& det : pair.a.detections)
        draw_box(px, overlay.dim(1), overlay.dim(2), det.box);
    }
    img::write_png(base.string() + "_boxes.png", overlay);
    for (std::size_t i = 0; i < pair.a.visibility.size(); ++i) {
      const Tensor& m = pair.a.visibility[i];
      img::write_png(base.string() + "_mask" + std::to_string(i) + ".png",
                     ad::reshape(m, {1, m.dim(0), m.dim(1)}));
    }
    img::write_png_scaled(base.string() + "_depth.png", pair.a.depth_map);
    img::write_png(base.string() + "_composite.png", pair.a.reconstruction);
  }
  std::cout << "decomposed " << frames << " held-out frames of view " << view
            << " into " << out << " (" << frames << " x "
            << (3 + cfg.slots) << " images)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised multi-view scene decomposition pipeline"};
  app.require_subcommand(1);

  std::string data_dir, cfg_path, out = ".", checkpoint;
  int stage = 1, max_frames = 0, view = 0;
  unsigned long long gen_seed = 1;
  std::optional<long> seed;
  std::optional<double> labels;

  auto* gen = app.add_subcommand("generate", "Render a synthetic sprite dataset");
  gen->add_option("--out", out, "dataset directory")->required();
  gen->add_option("--config", cfg_path, "dataset config JSON");
  gen->add_option("--seed", gen_seed, "generation seed");

  auto add_common = [&](CLI::App* cmd, bool needs_ckpt) {
    cmd->add_option("data", data_dir, "dataset directory")->required();
    cmd->add_option("--config", cfg_path, "training config JSON");
    cmd->add_option("--out", out, "output directory");
    auto* ck = cmd->add_option("--checkpoint", checkpoint, "checkpoint file");
    if (needs_ckpt) ck->required();
  };

  auto* tr = app.add_subcommand("train", "Run one curriculum stage");
  add_common(tr, false);
  tr->add_option("--stage", stage, "curriculum stage")
      ->required()
      ->check(CLI::Range(1, 3));
  long seed_val = 0;
  tr->add_option("--seed", seed_val, "override the config seed");
  double labels_val = 0.0;
  tr->add_option("--labels", labels_val, "override the labeled fraction");

  auto* ev = app.add_subcommand("eval", "Score a checkpoint on held-out frames");
  add_common(ev, true);
  ev->add_option("--stage", stage, "compositor stage for masks")
      ->check(CLI::Range(1, 2));

  auto* rd = app.add_subcommand("render", "Export novel-view synthesis triplets");
  add_common(rd, true);
  rd->add_option("--stage", stage, "compositor stage")->check(CLI::Range(1, 2));
  rd->add_option("--frames", max_frames, "cap on held-out frames");

  auto* dc = app.add_subcommand("decompose", "Export boxes, masks, depth, composite");
  add_common(dc, true);
  dc->add_option("--frames", max_frames, "cap on held-out frames");
  dc->add_option("--view", view, "view to decompose");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (tr->parsed()) {
    if (tr->count("--seed") > 0) seed = seed_val;
    if (tr->count("--labels") > 0) labels = labels_val;
  }
  if (ev->parsed() && ev->count("--stage") == 0) stage = 2;
  if (rd->parsed() && rd->count("--stage") == 0) stage = 2;

  try {
    if (gen->parsed()) return run_generate(out, cfg_path, gen_seed);
    if (tr->parsed())
      return run_train(data_dir, cfg_path, stage, out, checkpoint, seed, labels);
    if (ev->parsed()) return run_eval(data_dir, cfg_path, checkpoint, stage, out);
    if (rd->parsed())
      return run_render(data_dir, cfg_path, checkpoint, stage, out, max_frames);
    if (dc->parsed())
      return run_decompose(data_dir, cfg_path, checkpoint, out, max_frames, view);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
