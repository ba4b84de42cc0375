#pragma once

#include <Eigen/Dense>
#include <array>
#include <memory>
#include <string>
#include <vector>

#include "scenedec/camera.hpp"
#include "scenedec/tensor.hpp"

namespace scenedec::world {

// Synthetic multi-view toy world: articulated stick figures roam near the
// origin, watched by fixed cameras on a ring. Projection is orthographic with
// a mild depth-dependent scale, so apparent size alone cannot pin down
// absolute depth. Rendering a frame is a pure function of (scene, frame,
// view); generation needs no per-frame randomness and could be parallelized
// over frames freely (it runs serially here).

struct SpriteWorldConfig {
  int sprites = 2;
  int views = 4;
  int frames = 500;
  int resolution = 64;
  double ring_radius = 5.0;   // camera distance from the origin
  double depth_scale = 0.15;  // px per unit shrink by 1/(1+depth_scale*(d-ring))
  double min_visible_fraction = 0.9;  // of frames, per sprite and view
  int min_visible_pixels = 40;        // visibility threshold on owned pixels
  int max_retries = 20;               // trajectory resampling budget
  double palette_distance = 0.5;      // min pairwise color histogram L1
  void validate() const;
};

struct Harmonic {
  double amp = 0.0;
  double freq = 0.0;  // cycles per 100 frames
  double phase = 0.0;
  double at(double frame) const;
};

struct Sprite {
  double size = 1.0;  // global body scale factor
  double slot_angle = 0.0;
  double base_x = 0.0, base_y = 0.0;  // fixed offset from the orbit
  // Slow orbit around the sprite's ring slot. Guarantees every sprite keeps
  // moving, which the background-median recovery depends on.
  double orbit_radius = 0.3;
  double orbit_freq = 0.15;  // turns per 100 frames, signed
  Harmonic x1, x2, y1, y2;   // root trajectory residual, world xy plane
  double heading0 = 0.0;
  double heading_drift = 0.0;  // turns per 100 frames
  Harmonic heading_wobble;
  double gait_freq = 1.5;  // limb swing, cycles per 100 frames
  double gait_phase = 0.0;
  std::array<double, 3> base_color{}, stripe_color{}, head_color{};
  double stripe_freq = 3.0;  // stripes per body unit
  double stripe_angle = 0.0, stripe_phase = 0.0;
};

struct BackgroundBlob {
  double u = 0.0, v = 0.0, a = 1.0, b = 1.0;  // pixel-space ellipse
  std::array<double, 3> color{};
};

struct SpriteScene {
  SpriteWorldConfig config;
  unsigned long long seed = 0;
  std::vector<Sprite> sprites;
  std::vector<geo::CameraView> cameras;
  std::vector<std::array<double, 3>> bg_top, bg_bottom;  // gradient endpoints
  std::vector<std::array<BackgroundBlob, 2>> bg_blobs;
};

// Draws sprites, cameras, and backgrounds from the seed. Does not enforce the
// visibility constraint; generate() adds trajectory resampling on top.
SpriteScene sample_scene(const SpriteWorldConfig& config,
                         unsigned long long seed);

// L1 distance between coarse color histograms of two sprite palettes, in
// [0, 2]. Scene sampling keeps every pair above config.palette_distance.
double palette_separation(const Sprite& a, const Sprite& b);

// World frame: z up. Keypoint order: head top, left hand, right hand, left
// foot, right foot.
struct SkeletonState {
  Eigen::Vector3d root;
  Eigen::Vector3d head_center;
  std::array<Eigen::Vector3d, 5> keypoints;
  std::array<Eigen::Vector3d, 2> shoulders, hips;  // [left, right]
  double heading = 0.0;
};
SkeletonState skeleton_at(const Sprite& sprite, double frame);

// One sprite projected into one view: flat 2D primitives in pixel space,
// all at the root's depth (the body is a billboard as far as occlusion and
// depth scaling are concerned).
struct Silhouette {
  struct Disc {
    double u, v, r;
  };
  struct Ellipse {
    double u, v, a, b;
  };
  struct Capsule {
    double u0, v0, u1, v1, r;
  };
  Ellipse torso{};
  Disc head{};
  std::array<Capsule, 4> limbs{};
  double depth = 0.0;  // root depth in this camera
  double scale = 1.0;  // pixels per body unit after depth scaling
  double root_u = 0.0, root_v = 0.0;
  bool covers(double u, double v) const;
};
Silhouette project_sprite(const SpriteScene& scene, const SkeletonState& pose,
                          const Sprite& sprite, int view);

// Static per-view background: vertical gradient plus two dim blobs, all in
// [0.05, 0.3].
ad::Tensor background_image(const SpriteScene& scene, int view);

struct RenderedView {
  ad::Tensor image;        // (3,H,W)
  std::vector<int> owner;  // H*W; -1 background, else nearest covering sprite
  int width = 0, height = 0;
  ad::Tensor mask(int sprite) const;  // (H,W) 0/1 visible-surface ownership
  int visible_pixels(int sprite) const;
};

// Painter's algorithm: sprites sorted far to near by root depth (ties by
// index, lower in front), later coats overwrite earlier ones.
RenderedView render_view(const SpriteScene& scene, int frame, int view);

// Dataset layout under a directory:
//   cameras.txt
//   views/<v>/frame_<000000>.png
//   ground_truth.txt
//   gt_masks/<v>/frame_<000000>_sprite_<k>.png
struct GtEntry {
  int frame = 0, view = 0, sprite = 0;
  double cx = 0, cy = 0, w = 0, h = 0;  // normalized box; zeros when invisible
  double depth = 0.0;                   // root depth, scene units
  int rank = 0;                         // depth order in this view, 0 nearest
  int visible_pixels = 0;
  Eigen::Matrix<double, 5, 3> keypoints =
      Eigen::Matrix<double, 5, 3>::Zero();  // camera frame, root-relative
};

class GroundTruth {
 public:
  GroundTruth(std::string dir, int frames, int views, int sprites,
              std::vector<GtEntry> entries);
  int frames() const { return frames_; }
  int views() const { return views_; }
  int sprites() const { return sprites_; }
  int joints() const { return 5; }
  const GtEntry& at(int frame, int view, int sprite) const;
  ad::Tensor mask(int frame, int view, int sprite) const;  // (H,W) 0/1

 private:
  std::string dir_;
  int frames_ = 0, views_ = 0, sprites_ = 0;
  std::vector<GtEntry> entries_;
};
GroundTruth load_ground_truth(const std::string& dataset_dir);

// Training-side handle: frames and cameras only. Ground truth never passes
// through this type; evaluation loads it separately.
class Dataset {
 public:
  explicit Dataset(const std::string& dataset_dir);
  int frames() const { return frames_; }
  int views() const { return views_; }
  int height() const { return height_; }
  int width() const { return width_; }
  const std::vector<geo::CameraView>& cameras() const { return cameras_; }
  const std::string& path() const { return dir_; }
  ad::Tensor image(int frame, int view) const;  // (3,H,W) in [0,1]

 private:
  std::string dir_;
  int frames_ = 0, views_ = 0, height_ = 0, width_ = 0;
  std::vector<geo::CameraView> cameras_;
  mutable std::vector<std::unique_ptr<std::vector<unsigned char>>> cache_;
};
Dataset load_dataset(const std::string& dataset_dir);

struct GenerationReport {
  int retries = 0;
  double worst_visible_fraction = 1.0;
};
GenerationReport generate(const SpriteWorldConfig& config,
                          unsigned long long seed, const std::string& out_dir);

// Per-pixel, per-channel median of at least 3 equally shaped images. Even
// counts average the two central order statistics.
ad::Tensor compute_background(const std::vector<ad::Tensor>& frames);

}  // namespace scenedec::world
