#include "scenedec/spriteworld.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "scenedec/image_io.hpp"
#include "scenedec/rng.hpp"

namespace scenedec::world {
namespace {

namespace fs = std::filesystem;
constexpr double kTau = 2.0 * std::numbers::pi;

// Body plan, root-relative units before the per-sprite size factor.
constexpr double kShoulderUp = 0.155, kShoulderOut = 0.095;
constexpr double kHipUp = -0.17, kHipOut = 0.06;
constexpr double kHeadCenterUp = 0.285, kHeadTopUp = 0.37, kHeadR = 0.085;
constexpr double kArmLen = 0.22, kLegLen = 0.26;
constexpr double kTorsoHalfWidth = 0.13, kTorsoPad = 0.055;
constexpr double kArmR = 0.032, kLegR = 0.036;
constexpr double kArmBase = 0.7, kArmAmp = 0.45;
constexpr double kLegBase = 0.18, kLegAmp = 0.35;

std::array<double, 3> hsv(double h, double s, double v) {
  h -= std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1)
    r = c, g = x;
  else if (hp < 2)
    r = x, g = c;
  else if (hp < 3)
    g = c, b = x;
  else if (hp < 4)
    g = x, b = c;
  else if (hp < 5)
    r = x, b = c;
  else
    r = c, b = x;
  const double m = v - c;
  return {r + m, g + m, b + m};
}

void sample_palette(Sprite& sp, Rng& rng) {
  const double h = rng.uniform(0.0, 1.0);
  sp.base_color = hsv(h, rng.uniform(0.65, 0.95), rng.uniform(0.78, 1.0));
  sp.stripe_color = hsv(h + rng.uniform(0.12, 0.24), rng.uniform(0.6, 0.9),
                        rng.uniform(0.6, 0.8));
  sp.head_color = hsv(h + 0.5 + rng.uniform(-0.08, 0.08),
                      rng.uniform(0.55, 0.85), rng.uniform(0.8, 1.0));
  sp.stripe_freq = rng.uniform(2.2, 4.5);
  sp.stripe_angle = rng.uniform(0.0, std::numbers::pi);
  sp.stripe_phase = rng.uniform(0.0, kTau);
}

void sample_trajectory(Sprite& sp, Rng& rng) {
  sp.orbit_radius = rng.uniform(0.22, 0.38);
  sp.orbit_freq =
      rng.uniform(0.12, 0.22) * (rng.uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0);
  sp.base_x = rng.uniform(-0.08, 0.08);
  sp.base_y = rng.uniform(-0.08, 0.08);
  auto slow = [&rng] {
    return Harmonic{rng.uniform(0.15, 0.3), rng.uniform(0.14, 0.32),
                    rng.uniform(0.0, kTau)};
  };
  auto fast = [&rng] {
    return Harmonic{rng.uniform(0.03, 0.1), rng.uniform(0.5, 0.9),
                    rng.uniform(0.0, kTau)};
  };
  sp.x1 = slow();
  sp.x2 = fast();
  sp.y1 = slow();
  sp.y2 = fast();
  sp.heading0 = rng.uniform(0.0, kTau);
  sp.heading_drift = rng.uniform(-0.2, 0.2);
  sp.heading_wobble = Harmonic{rng.uniform(0.2, 0.6), rng.uniform(0.3, 0.8),
                               rng.uniform(0.0, kTau)};
  sp.gait_freq = rng.uniform(1.0, 2.2);
  sp.gait_phase = rng.uniform(0.0, kTau);
}

std::array<double, 64> palette_histogram(const Sprite& sp) {
  std::array<double, 64> h{};
  const std::array<const std::array<double, 3>*, 3> colors = {
      &sp.base_color, &sp.stripe_color, &sp.head_color};
  const std::array<double, 3> weights = {0.55, 0.35, 0.10};
  for (int i = 0; i < 3; ++i) {
    int bin = 0;
    for (int c = 0; c < 3; ++c) {
      int b = static_cast<int>((*colors[i])[c] * 4.0);
      b = std::clamp(b, 0, 3);
      bin = bin * 4 + b;
    }
    h[bin] += weights[i];
  }
  return h;
}

std::string frame_file(int f) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "frame_%06d.png", f);
  return buf;
}

std::string mask_file(int f, int sprite) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "frame_%06d_sprite_%d.png", f, sprite);
  return buf;
}

double sq(double x) { return x * x; }

bool in_ellipse(const Silhouette::Ellipse& e, double u, double v) {
  return sq((u - e.u) / e.a) + sq((v - e.v) / e.b) <= 1.0;
}

bool in_disc(const Silhouette::Disc& d, double u, double v) {
  return sq(u - d.u) + sq(v - d.v) <= sq(d.r);
}

bool in_capsule(const Silhouette::Capsule& c, double u, double v) {
  const double wu = c.u1 - c.u0, wv = c.v1 - c.v0;
  const double len2 = sq(wu) + sq(wv);
  double t = len2 > 0.0 ? ((u - c.u0) * wu + (v - c.v0) * wv) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return sq(u - (c.u0 + t * wu)) + sq(v - (c.v0 + t * wv)) <= sq(c.r);
}

std::array<double, 3> sprite_color(const Sprite& sp, const Silhouette& sil,
                                   double u, double v) {
  if (in_disc(sil.head, u, v)) return sp.head_color;
  const double du = (u - sil.root_u) / sil.scale;
  const double dv = (sil.root_v - v) / sil.scale;  // body up is positive
  const double wave =
      std::sin(kTau * sp.stripe_freq *
                   (du * std::cos(sp.stripe_angle) +
                    dv * std::sin(sp.stripe_angle)) +
               sp.stripe_phase);
  return wave >= 0.0 ? sp.base_color : sp.stripe_color;
}

struct PixelBox {
  int u0, u1, v0, v1;  // inclusive, clipped to the frame
  bool empty;
};

PixelBox clip_box(double ulo, double uhi, double vlo, double vhi, int w,
                  int h) {
  PixelBox b{};
  b.u0 = std::max(0, static_cast<int>(std::floor(ulo)));
  b.u1 = std::min(w - 1, static_cast<int>(std::ceil(uhi)));
  b.v0 = std::max(0, static_cast<int>(std::floor(vlo)));
  b.v1 = std::min(h - 1, static_cast<int>(std::ceil(vhi)));
  b.empty = b.u0 > b.u1 || b.v0 > b.v1;
  return b;
}

PixelBox silhouette_box(const Silhouette& s, int w, int h) {
  double ulo = s.torso.u - s.torso.a, uhi = s.torso.u + s.torso.a;
  double vlo = s.torso.v - s.torso.b, vhi = s.torso.v + s.torso.b;
  auto grow = [&](double u0, double u1, double v0, double v1) {
    ulo = std::min(ulo, u0);
    uhi = std::max(uhi, u1);
    vlo = std::min(vlo, v0);
    vhi = std::max(vhi, v1);
  };
  grow(s.head.u - s.head.r, s.head.u + s.head.r, s.head.v - s.head.r,
       s.head.v + s.head.r);
  for (const auto& c : s.limbs)
    grow(std::min(c.u0, c.u1) - c.r, std::max(c.u0, c.u1) + c.r,
         std::min(c.v0, c.v1) - c.r, std::max(c.v0, c.v1) + c.r);
  return clip_box(ulo, uhi, vlo, vhi, w, h);
}

// Far-to-near paint order; ties by index with the lower index painted last,
// so the lower index wins the pixel.
std::vector<int> paint_order(const std::vector<Silhouette>& sils) {
  std::vector<int> order(sils.size());
  for (std::size_t i = 0; i < sils.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (sils[a].depth != sils[b].depth) return sils[a].depth > sils[b].depth;
    return a > b;
  });
  return order;
}

unsigned char quantize(double v) {
  if (v <= 0.0) return 0;
  if (v >= 1.0) return 255;
  return static_cast<unsigned char>(std::lround(v * 255.0));
}

}  // namespace

void SpriteWorldConfig::validate() const {
  check(sprites >= 1 && sprites <= 32, "sprite count must be in [1, 32]");
  check(views >= 1 && views <= 16, "view count must be in [1, 16]");
  check(frames >= 1, "frame count must be positive");
  check(resolution >= 8 && resolution <= 512, "resolution must be in [8, 512]");
  check(ring_radius > 0.0, "camera ring radius must be positive");
  check(depth_scale >= 0.0 && depth_scale <= 0.6,
        "depth scale must be in [0, 0.6]");
  check(min_visible_fraction >= 0.0 && min_visible_fraction <= 1.0,
        "min visible fraction must be in [0, 1]");
  check(min_visible_pixels >= 0, "min visible pixels must be nonnegative");
  check(max_retries >= 0, "retry budget must be nonnegative");
  check(palette_distance >= 0.0 && palette_distance < 2.0,
        "palette distance must be in [0, 2)");
}

double Harmonic::at(double frame) const {
  return amp * std::sin(kTau * freq * frame / 100.0 + phase);
}

double palette_separation(const Sprite& a, const Sprite& b) {
  const auto ha = palette_histogram(a), hb = palette_histogram(b);
  double d = 0.0;
  for (int i = 0; i < 64; ++i) d += std::abs(ha[i] - hb[i]);
  return d;
}

SpriteScene sample_scene(const SpriteWorldConfig& config,
                         unsigned long long seed) {
  config.validate();
  SpriteScene scene;
  scene.config = config;
  scene.seed = seed;
  Rng rng(seed);

  for (int v = 0; v < config.views; ++v) {
    const double yaw = (15.0 + 360.0 * v / config.views) * std::numbers::pi /
                       180.0;
    geo::CameraView cam;
    cam.id = v;
    const Eigen::Vector3d right(-std::sin(yaw), std::cos(yaw), 0.0);
    const Eigen::Vector3d down(0.0, 0.0, -1.0);
    const Eigen::Vector3d forward(-std::cos(yaw), -std::sin(yaw), 0.0);
    cam.R.row(0) = right;
    cam.R.row(1) = down;
    cam.R.row(2) = forward;
    const Eigen::Vector3d center =
        config.ring_radius * Eigen::Vector3d(std::cos(yaw), std::sin(yaw), 0.0);
    cam.t = -cam.R * center;
    cam.intrinsics.fx = cam.intrinsics.fy = config.resolution / 2.0;
    cam.intrinsics.cx = cam.intrinsics.cy = (config.resolution - 1) / 2.0;
    cam.validate();
    scene.cameras.push_back(cam);
  }

  const double ring_phase = rng.uniform(0.0, kTau);
  for (int k = 0; k < config.sprites; ++k) {
    Sprite sp;
    sp.size = rng.uniform(0.92, 1.08);
    sp.slot_angle = ring_phase + kTau * k / config.sprites;
    sample_trajectory(sp, rng);
    bool distinct = false;
    for (int attempt = 0; attempt < 50 && !distinct; ++attempt) {
      sample_palette(sp, rng);
      distinct = true;
      for (const auto& other : scene.sprites)
        distinct = distinct &&
                   palette_separation(sp, other) >= config.palette_distance;
    }
    check(distinct, "could not draw a sprite palette distinct from the "
                    "others; lower palette_distance");
    scene.sprites.push_back(sp);
  }

  for (int v = 0; v < config.views; ++v) {
    auto dark = [&rng] {
      return std::array<double, 3>{rng.uniform(0.05, 0.3),
                                   rng.uniform(0.05, 0.3),
                                   rng.uniform(0.05, 0.3)};
    };
    scene.bg_top.push_back(dark());
    scene.bg_bottom.push_back(dark());
    std::array<BackgroundBlob, 2> blobs;
    for (auto& blob : blobs) {
      blob.u = rng.uniform(0.0, config.resolution - 1.0);
      blob.v = rng.uniform(0.0, config.resolution - 1.0);
      blob.a = rng.uniform(0.15, 0.35) * config.resolution;
      blob.b = rng.uniform(0.1, 0.3) * config.resolution;
      blob.color = dark();
    }
    scene.bg_blobs.push_back(blobs);
  }
  return scene;
}

SkeletonState skeleton_at(const Sprite& sp, double frame) {
  SkeletonState st;
  const Eigen::Vector3d up(0.0, 0.0, 1.0);
  const double orbit = sp.slot_angle + kTau * sp.orbit_freq * frame / 100.0;
  st.root = Eigen::Vector3d(sp.base_x + sp.orbit_radius * std::cos(orbit) +
                                sp.x1.at(frame) + sp.x2.at(frame),
                            sp.base_y + sp.orbit_radius * std::sin(orbit) +
                                sp.y1.at(frame) + sp.y2.at(frame),
                            0.0);
  st.heading = sp.heading0 + kTau * sp.heading_drift * frame / 100.0 +
               sp.heading_wobble.at(frame);
  const Eigen::Vector3d lat(std::cos(st.heading), std::sin(st.heading), 0.0);
  const double sz = sp.size;
  st.head_center = st.root + sz * kHeadCenterUp * up;
  st.keypoints[0] = st.root + sz * kHeadTopUp * up;

  const double gait = kTau * sp.gait_freq * frame / 100.0 + sp.gait_phase;
  for (int side = 0; side < 2; ++side) {
    const double sgn = side == 0 ? -1.0 : 1.0;
    st.shoulders[side] =
        st.root + sz * (kShoulderUp * up + sgn * kShoulderOut * lat);
    st.hips[side] = st.root + sz * (kHipUp * up + sgn * kHipOut * lat);
    const double swing = gait + (side == 0 ? std::numbers::pi : 0.0);
    const double arm = kArmBase + kArmAmp * std::sin(swing);
    st.keypoints[1 + side] =
        st.shoulders[side] +
        sz * kArmLen * (std::sin(arm) * sgn * lat - std::cos(arm) * up);
    const double leg = kLegBase + kLegAmp * std::sin(swing + std::numbers::pi);
    st.keypoints[3 + side] =
        st.hips[side] +
        sz * kLegLen * (std::sin(leg) * sgn * lat - std::cos(leg) * up);
  }
  return st;
}

bool Silhouette::covers(double u, double v) const {
  if (in_ellipse(torso, u, v)) return true;
  if (in_disc(head, u, v)) return true;
  for (const auto& c : limbs)
    if (in_capsule(c, u, v)) return true;
  return false;
}

Silhouette project_sprite(const SpriteScene& scene, const SkeletonState& pose,
                          const Sprite& sprite, int view) {
  check(view >= 0 && view < static_cast<int>(scene.cameras.size()),
        "view index out of range");
  const auto& cam = scene.cameras[view];
  const auto& cfg = scene.config;
  const Eigen::Vector3d root_cam = cam.R * pose.root + cam.t;
  const double depth = root_cam.z();
  const double shrink =
      1.0 / (1.0 + cfg.depth_scale * (depth - cfg.ring_radius));

  auto proj = [&](const Eigen::Vector3d& x) {
    const Eigen::Vector3d pc = cam.R * x + cam.t;
    return std::array<double, 2>{
        cam.intrinsics.cx + cam.intrinsics.fx * shrink * pc.x(),
        cam.intrinsics.cy + cam.intrinsics.fy * shrink * pc.y()};
  };

  Silhouette sil;
  sil.depth = depth;
  sil.scale = cam.intrinsics.fx * shrink * sprite.size;
  const auto root_px = proj(pose.root);
  sil.root_u = root_px[0];
  sil.root_v = root_px[1];

  const auto smid = proj(0.5 * (pose.shoulders[0] + pose.shoulders[1]));
  const auto hmid = proj(0.5 * (pose.hips[0] + pose.hips[1]));
  sil.torso.u = 0.5 * (smid[0] + hmid[0]);
  sil.torso.v = 0.5 * (smid[1] + hmid[1]);
  sil.torso.a = kTorsoHalfWidth * sil.scale;
  sil.torso.b = 0.5 * std::abs(smid[1] - hmid[1]) + kTorsoPad * sil.scale;

  const auto hc = proj(pose.head_center);
  sil.head = {hc[0], hc[1], kHeadR * sil.scale};

  for (int side = 0; side < 2; ++side) {
    const auto sh = proj(pose.shoulders[side]);
    const auto hand = proj(pose.keypoints[1 + side]);
    sil.limbs[side] = {sh[0], sh[1], hand[0], hand[1], kArmR * sil.scale};
    const auto hip = proj(pose.hips[side]);
    const auto foot = proj(pose.keypoints[3 + side]);
    sil.limbs[2 + side] = {hip[0], hip[1], foot[0], foot[1],
                           kLegR * sil.scale};
  }
  return sil;
}

ad::Tensor background_image(const SpriteScene& scene, int view) {
  check(view >= 0 && view < static_cast<int>(scene.bg_top.size()),
        "view index out of range");
  const int n = scene.config.resolution;
  std::vector<double> img(static_cast<std::size_t>(3) * n * n);
  const auto& top = scene.bg_top[view];
  const auto& bottom = scene.bg_bottom[view];
  for (int row = 0; row < n; ++row) {
    const double a = n == 1 ? 0.0 : static_cast<double>(row) / (n - 1);
    for (int c = 0; c < 3; ++c) {
      const double val = top[c] + a * (bottom[c] - top[c]);
      for (int col = 0; col < n; ++col)
        img[(static_cast<std::size_t>(c) * n + row) * n + col] = val;
    }
  }
  for (const auto& blob : scene.bg_blobs[view]) {
    const Silhouette::Ellipse e{blob.u, blob.v, blob.a, blob.b};
    const PixelBox box =
        clip_box(e.u - e.a, e.u + e.a, e.v - e.b, e.v + e.b, n, n);
    if (box.empty) continue;
    for (int row = box.v0; row <= box.v1; ++row)
      for (int col = box.u0; col <= box.u1; ++col)
        if (in_ellipse(e, col, row))
          for (int c = 0; c < 3; ++c)
            img[(static_cast<std::size_t>(c) * n + row) * n + col] =
                blob.color[c];
  }
  const auto un = static_cast<std::size_t>(n);
  return ad::Tensor::from({3, un, un}, std::move(img));
}

ad::Tensor RenderedView::mask(int sprite) const {
  std::vector<double> m(owner.size());
  for (std::size_t i = 0; i < owner.size(); ++i)
    m[i] = owner[i] == sprite ? 1.0 : 0.0;
  return ad::Tensor::from(
      {static_cast<std::size_t>(height), static_cast<std::size_t>(width)},
      std::move(m));
}

int RenderedView::visible_pixels(int sprite) const {
  int count = 0;
  for (int o : owner) count += o == sprite ? 1 : 0;
  return count;
}

RenderedView render_view(const SpriteScene& scene, int frame, int view) {
  const int n = scene.config.resolution;
  RenderedView out;
  out.width = out.height = n;
  out.image = background_image(scene, view);
  out.owner.assign(static_cast<std::size_t>(n) * n, -1);
  std::vector<double>& img = out.image.mutable_values();

  std::vector<Silhouette> sils;
  for (std::size_t k = 0; k < scene.sprites.size(); ++k)
    sils.push_back(project_sprite(scene, skeleton_at(scene.sprites[k], frame),
                                  scene.sprites[k], view));

  for (int k : paint_order(sils)) {
    const Silhouette& sil = sils[k];
    const Sprite& sp = scene.sprites[k];
    const PixelBox box = silhouette_box(sil, n, n);
    if (box.empty) continue;
    for (int row = box.v0; row <= box.v1; ++row)
      for (int col = box.u0; col <= box.u1; ++col)
        if (sil.covers(col, row)) {
          const auto color = sprite_color(sp, sil, col, row);
          for (int c = 0; c < 3; ++c)
            img[(static_cast<std::size_t>(c) * n + row) * n + col] = color[c];
          out.owner[static_cast<std::size_t>(row) * n + col] = k;
        }
  }
  return out;
}

namespace {

struct RenderStore {
  std::vector<std::vector<unsigned char>> images;  // [frame*V+view] 3*H*W
  std::vector<std::vector<std::int8_t>> owners;    // [frame*V+view] H*W
};

RenderStore render_all(const SpriteScene& scene) {
  const auto& cfg = scene.config;
  RenderStore store;
  store.images.resize(static_cast<std::size_t>(cfg.frames) * cfg.views);
  store.owners.resize(store.images.size());
  for (int f = 0; f < cfg.frames; ++f)
    for (int v = 0; v < cfg.views; ++v) {
      const RenderedView rv = render_view(scene, f, v);
      auto& img = store.images[static_cast<std::size_t>(f) * cfg.views + v];
      img.resize(rv.image.size());
      for (std::size_t i = 0; i < img.size(); ++i)
        img[i] = quantize(rv.image.values()[i]);
      auto& own = store.owners[static_cast<std::size_t>(f) * cfg.views + v];
      own.resize(rv.owner.size());
      for (std::size_t i = 0; i < own.size(); ++i)
        own[i] = static_cast<std::int8_t>(rv.owner[i]);
    }
  return store;
}

// fraction of frames in which every sprite owns enough pixels, minimized
// over sprites and views; also reports the worst (sprite, view) pair
struct VisibilityCheck {
  double worst = 1.0;
  int worst_sprite = -1;
};

VisibilityCheck check_visibility(const SpriteWorldConfig& cfg,
                                 const RenderStore& store) {
  VisibilityCheck result;
  for (int k = 0; k < cfg.sprites; ++k)
    for (int v = 0; v < cfg.views; ++v) {
      int ok = 0;
      for (int f = 0; f < cfg.frames; ++f) {
        const auto& own = store.owners[static_cast<std::size_t>(f) * cfg.views + v];
        int count = 0;
        for (std::int8_t o : own) count += o == k ? 1 : 0;
        ok += count >= cfg.min_visible_pixels ? 1 : 0;
      }
      const double frac = static_cast<double>(ok) / cfg.frames;
      if (frac < result.worst) {
        result.worst = frac;
        result.worst_sprite = k;
      }
    }
  return result;
}

}  // namespace

GenerationReport generate(const SpriteWorldConfig& config,
                          unsigned long long seed,
                          const std::string& out_dir) {
  config.validate();
  SpriteScene scene = sample_scene(config, seed);
  Rng retry_rng(seed ^ 0x9e3779b97f4a7c15ull);

  GenerationReport report;
  RenderStore store;
  for (int attempt = 0;; ++attempt) {
    store = render_all(scene);
    const VisibilityCheck vis = check_visibility(config, store);
    report.worst_visible_fraction = vis.worst;
    if (vis.worst >= config.min_visible_fraction) break;
    check(attempt < config.max_retries,
          "visibility constraint still violated after " +
              std::to_string(config.max_retries) + " trajectory retries");
    sample_trajectory(scene.sprites[vis.worst_sprite], retry_rng);
    ++report.retries;
  }

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  check(!ec, "cannot create output directory " + out_dir);
  for (int v = 0; v < config.views; ++v) {
    fs::create_directories(fs::path(out_dir) / "views" / std::to_string(v), ec);
    check(!ec, "cannot create view directory under " + out_dir);
    fs::create_directories(fs::path(out_dir) / "gt_masks" / std::to_string(v),
                           ec);
    check(!ec, "cannot create mask directory under " + out_dir);
  }

  geo::save_cameras((fs::path(out_dir) / "cameras.txt").string(),
                    scene.cameras);

  const int n = config.resolution;
  for (int f = 0; f < config.frames; ++f)
    for (int v = 0; v < config.views; ++v) {
      const auto& bytes =
          store.images[static_cast<std::size_t>(f) * config.views + v];
      std::vector<double> vals(bytes.size());
      for (std::size_t i = 0; i < bytes.size(); ++i) vals[i] = bytes[i] / 255.0;
      img::write_png((fs::path(out_dir) / "views" / std::to_string(v) /
                      frame_file(f))
                         .string(),
                     ad::Tensor::from({3, static_cast<std::size_t>(n),
                                       static_cast<std::size_t>(n)},
                                      std::move(vals)));
      const auto& own =
          store.owners[static_cast<std::size_t>(f) * config.views + v];
      for (int k = 0; k < config.sprites; ++k) {
        std::vector<double> m(own.size());
        for (std::size_t i = 0; i < own.size(); ++i)
          m[i] = own[i] == k ? 1.0 : 0.0;
        img::write_png((fs::path(out_dir) / "gt_masks" / std::to_string(v) /
                        mask_file(f, k))
                           .string(),
                       ad::Tensor::from({1, static_cast<std::size_t>(n),
                                         static_cast<std::size_t>(n)},
                                        std::move(m)));
      }
    }

  std::ofstream gt((fs::path(out_dir) / "ground_truth.txt").string());
  check(gt.good(), "cannot write ground truth file under " + out_dir);
  gt.precision(17);
  gt << "ground_truth v1\n";
  gt << "counts " << config.frames << " " << config.views << " "
     << config.sprites << " 5\n";
  gt << "columns frame view sprite cx cy w h depth rank visible_pixels "
        "kp0..kp4 xyz (head, left hand, right hand, left foot, right foot; "
        "camera frame, root-relative)\n";
  for (int f = 0; f < config.frames; ++f) {
    std::vector<SkeletonState> poses;
    for (const auto& sp : scene.sprites) poses.push_back(skeleton_at(sp, f));
    for (int v = 0; v < config.views; ++v) {
      const auto& cam = scene.cameras[v];
      std::vector<std::pair<double, int>> depth_order;
      for (int k = 0; k < config.sprites; ++k) {
        const double d = (cam.R * poses[k].root + cam.t).z();
        depth_order.emplace_back(d, k);
      }
      std::sort(depth_order.begin(), depth_order.end());
      std::vector<int> rank(config.sprites);
      for (int r = 0; r < config.sprites; ++r)
        rank[depth_order[r].second] = r;

      const auto& own =
          store.owners[static_cast<std::size_t>(f) * config.views + v];
      for (int k = 0; k < config.sprites; ++k) {
        int umin = n, umax = -1, vmin = n, vmax = -1, count = 0;
        for (int row = 0; row < n; ++row)
          for (int col = 0; col < n; ++col)
            if (own[static_cast<std::size_t>(row) * n + col] == k) {
              ++count;
              umin = std::min(umin, col);
              umax = std::max(umax, col);
              vmin = std::min(vmin, row);
              vmax = std::max(vmax, row);
            }
        double cx = 0, cy = 0, w = 0, h = 0;
        if (count > 0) {
          cx = (0.5 * (umin + umax) + 0.5) * 2.0 / n - 1.0;
          cy = (0.5 * (vmin + vmax) + 0.5) * 2.0 / n - 1.0;
          w = (umax - umin + 1) * 2.0 / n;
          h = (vmax - vmin + 1) * 2.0 / n;
        }
        gt << "gt " << f << " " << v << " " << k << " " << cx << " " << cy
           << " " << w << " " << h << " " << depth_order[rank[k]].first << " "
           << rank[k] << " " << count;
        for (int j = 0; j < 5; ++j) {
          const Eigen::Vector3d rel =
              cam.R * (poses[k].keypoints[j] - poses[k].root);
          gt << " " << rel.x() << " " << rel.y() << " " << rel.z();
        }
        gt << "\n";
      }
    }
  }
  gt.flush();
  check(gt.good(), "failed writing ground truth file under " + out_dir);
  return report;
}

GroundTruth::GroundTruth(std::string dir, int frames, int views, int sprites,
                         std::vector<GtEntry> entries)
    : dir_(std::move(dir)),
      frames_(frames),
      views_(views),
      sprites_(sprites),
      entries_(std::move(entries)) {}

const GtEntry& GroundTruth::at(int frame, int view, int sprite) const {
  check(frame >= 0 && frame < frames_ && view >= 0 && view < views_ &&
            sprite >= 0 && sprite < sprites_,
        "ground truth index out of range");
  return entries_[(static_cast<std::size_t>(frame) * views_ + view) * sprites_ +
                  sprite];
}

ad::Tensor GroundTruth::mask(int frame, int view, int sprite) const {
  at(frame, view, sprite);
  const std::string path = (fs::path(dir_) / "gt_masks" / std::to_string(view) /
                            mask_file(frame, sprite))
                               .string();
  const ad::Tensor raw = img::read_png(path);
  check(raw.dim(0) == 1, "mask " + path + " is not grayscale");
  return ad::reshape(raw, {raw.dim(1), raw.dim(2)}).detached_copy(false);
}

GroundTruth load_ground_truth(const std::string& dataset_dir) {
  const std::string path =
      (fs::path(dataset_dir) / "ground_truth.txt").string();
  std::ifstream in(path);
  check(in.good(), "cannot read ground truth file " + path);
  std::string header;
  std::getline(in, header);
  check(header == "ground_truth v1",
        "ground truth file " + path + ": unsupported format header '" +
            header + "'");
  std::string tok;
  int frames = 0, views = 0, sprites = 0, joints = 0;
  check(static_cast<bool>(in >> tok) && tok == "counts",
        "ground truth file " + path + ": expected 'counts'");
  check(static_cast<bool>(in >> frames >> views >> sprites >> joints),
        "ground truth file " + path + ": truncated counts");
  check(joints == 5, "ground truth file " + path + ": expected 5 joints");
  std::getline(in, header);
  std::getline(in, header);
  check(header.rfind("columns ", 0) == 0,
        "ground truth file " + path + ": expected a 'columns' line");

  std::vector<GtEntry> entries;
  entries.reserve(static_cast<std::size_t>(frames) * views * sprites);
  for (int f = 0; f < frames; ++f)
    for (int v = 0; v < views; ++v)
      for (int k = 0; k < sprites; ++k) {
        GtEntry e;
        check(static_cast<bool>(in >> tok) && tok == "gt",
              "ground truth file " + path + ": expected a 'gt' row");
        check(static_cast<bool>(in >> e.frame >> e.view >> e.sprite >> e.cx >>
                                e.cy >> e.w >> e.h >> e.depth >> e.rank >>
                                e.visible_pixels),
              "ground truth file " + path + ": truncated row");
        check(e.frame == f && e.view == v && e.sprite == k,
              "ground truth file " + path + ": rows out of order at frame " +
                  std::to_string(f));
        for (int j = 0; j < 5; ++j)
          check(static_cast<bool>(in >> e.keypoints(j, 0) >>
                                  e.keypoints(j, 1) >> e.keypoints(j, 2)),
                "ground truth file " + path + ": truncated keypoints");
        entries.push_back(e);
      }
  return GroundTruth(dataset_dir, frames, views, sprites, std::move(entries));
}

Dataset::Dataset(const std::string& dataset_dir) : dir_(dataset_dir) {
  cameras_ = geo::load_cameras((fs::path(dir_) / "cameras.txt").string());
  const fs::path views_dir = fs::path(dir_) / "views";
  check(fs::is_directory(views_dir),
        "dataset " + dir_ + ": missing views directory");
  int v = 0;
  while (fs::is_directory(views_dir / std::to_string(v))) ++v;
  views_ = v;
  check(views_ >= 1, "dataset " + dir_ + ": no view directories");
  check(views_ == static_cast<int>(cameras_.size()),
        "dataset " + dir_ + ": " + std::to_string(views_) +
            " view directories but " + std::to_string(cameras_.size()) +
            " cameras");

  int max_frame = -1;
  for (v = 0; v < views_; ++v)
    for (const auto& entry :
         fs::directory_iterator(views_dir / std::to_string(v))) {
      const std::string name = entry.path().filename().string();
      if (name.rfind("frame_", 0) == 0 && name.size() >= 10)
        max_frame = std::max(max_frame, std::atoi(name.substr(6, 6).c_str()));
    }
  check(max_frame >= 0, "dataset " + dir_ + ": no frames found");
  frames_ = max_frame + 1;

  std::string missing;
  int missing_count = 0;
  for (v = 0; v < views_; ++v) {
    std::string this_view;
    for (int f = 0; f < frames_; ++f)
      if (!fs::exists(views_dir / std::to_string(v) / frame_file(f))) {
        ++missing_count;
        if (missing_count <= 20)
          this_view += (this_view.empty() ? "" : " ") + std::to_string(f);
      }
    if (!this_view.empty())
      missing += " view " + std::to_string(v) + ": " + this_view + ";";
  }
  if (missing_count > 0)
    throw Error("dataset " + dir_ + " is missing " +
                std::to_string(missing_count) + " frame files:" + missing);

  const ad::Tensor first = img::read_png(
      (views_dir / "0" / frame_file(0)).string());
  check(first.dim(0) == 3, "dataset " + dir_ + ": frames must be RGB");
  height_ = static_cast<int>(first.dim(1));
  width_ = static_cast<int>(first.dim(2));
  cache_.resize(static_cast<std::size_t>(frames_) * views_);
}

ad::Tensor Dataset::image(int frame, int view) const {
  check(frame >= 0 && frame < frames_ && view >= 0 && view < views_,
        "dataset frame index out of range");
  auto& slot = cache_[static_cast<std::size_t>(frame) * views_ + view];
  if (!slot) {
    const std::string path = (fs::path(dir_) / "views" / std::to_string(view) /
                              frame_file(frame))
                                 .string();
    const ad::Tensor t = img::read_png(path);
    check(t.dim(0) == 3 && t.dim(1) == static_cast<std::size_t>(height_) &&
              t.dim(2) == static_cast<std::size_t>(width_),
          "dataset " + dir_ + ": frame " + path + " has unexpected shape " +
              ad::shape_str(t.shape()));
    auto bytes = std::make_unique<std::vector<unsigned char>>(t.size());
    for (std::size_t i = 0; i < t.size(); ++i)
      (*bytes)[i] = quantize(t.values()[i]);
    slot = std::move(bytes);
  }
  std::vector<double> vals(slot->size());
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = (*slot)[i] / 255.0;
  return ad::Tensor::from({3, static_cast<std::size_t>(height_),
                           static_cast<std::size_t>(width_)},
                          std::move(vals));
}

Dataset load_dataset(const std::string& dataset_dir) {
  return Dataset(dataset_dir);
}

ad::Tensor compute_background(const std::vector<ad::Tensor>& frames) {
  check(!frames.empty(), "background median needs a non-empty sequence");
  check(frames.size() >= 3, "background median needs at least 3 frames");
  const auto shape = frames[0].shape();
  for (const auto& f : frames)
    check(f.shape() == shape, "background median: frame shapes differ");

  const std::size_t count = frames.size();
  std::vector<double> out(frames[0].size());
  std::vector<double> buf(count);
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (std::size_t j = 0; j < count; ++j) buf[j] = frames[j].values()[i];
    const std::size_t mid = count / 2;
    std::nth_element(buf.begin(), buf.begin() + mid, buf.end());
    if (count % 2 == 1) {
      out[i] = buf[mid];
    } else {
      const double hi = buf[mid];
      const double lo = *std::max_element(buf.begin(), buf.begin() + mid);
      out[i] = 0.5 * (lo + hi);
    }
  }
  return ad::Tensor::from(shape, std::move(out));
}

}  // namespace scenedec::world
