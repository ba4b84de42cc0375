#include "scenedec/warp.hpp"

#include <cmath>
#include <memory>

namespace scenedec::geo {

using ad::Node;
using ad::Tensor;

namespace {

void validate_box(const BoundingBox& b) {
  check(b.cx.defined() && b.cy.defined() && b.w.defined() && b.h.defined(),
        "bounding box has undefined entries");
  check(b.cx.size() == 1 && b.cy.size() == 1 && b.w.size() == 1 && b.h.size() == 1,
        "bounding box entries must be scalars");
  for (double v : {b.cx.item(), b.cy.item(), b.w.item(), b.h.item()})
    check(std::isfinite(v), "bounding box entries must be finite");
  check(b.w.item() > 0.0 && b.h.item() > 0.0,
        "bounding box extents must be positive, got w=" + std::to_string(b.w.item()) +
            " h=" + std::to_string(b.h.item()));
}

struct Samp {
  std::size_t i0 = 0, i1 = 0;  // bilinear taps (clamped into range)
  double f = 0.0;              // fraction of tap i1
  double dcoord = 0.0;         // d(pixel coordinate)/d(normalized sample pos)
  double pos = 0.0;            // within-box coordinate in [-1,1]
};

// Forward crop sampling along one axis: crop pixel k of `n` maps to
// pos = (k+0.5)/n*2-1 inside the box, then into frame pixels with border
// clamping. dim is the frame extent along this axis.
Samp forward_samp(std::size_t k, std::size_t n, double center, double extent,
                  std::size_t dim) {
  Samp s;
  s.pos = (static_cast<double>(k) + 0.5) * 2.0 / static_cast<double>(n) - 1.0;
  // Algebraically (u+1)*dim/2 - 0.5 with u = center + pos*extent/2, arranged
  // so the full-frame box reproduces integer pixel coordinates exactly.
  const double step = extent * static_cast<double>(dim) / (2.0 * static_cast<double>(n));
  const double base =
      (center - extent * 0.5 + 1.0) * 0.5 * static_cast<double>(dim) - 0.5;
  double p = base + (static_cast<double>(k) + 0.5) * step;
  const double lim = static_cast<double>(dim - 1);
  if (p <= 0.0) {
    p = 0.0;
  } else if (p >= lim) {
    p = lim;
  } else {
    s.dcoord = 0.5 * static_cast<double>(dim);
  }
  const double fl = std::floor(p);
  s.i0 = static_cast<std::size_t>(fl);
  s.i1 = std::min(s.i0 + 1, dim - 1);
  s.f = p - fl;
  return s;
}

}  // namespace

BoundingBox make_box(double cx, double cy, double w, double h, bool requires_grad) {
  return BoundingBox{Tensor::scalar(cx, requires_grad), Tensor::scalar(cy, requires_grad),
                     Tensor::scalar(w, requires_grad), Tensor::scalar(h, requires_grad)};
}

Tensor spatial_transform(const Tensor& frame, const BoundingBox& b, std::size_t out_h,
                         std::size_t out_w) {
  check(frame.rank() == 3, "spatial_transform frame must be (C,H,W), got " +
                               ad::shape_str(frame.shape()));
  check(out_h >= 1 && out_w >= 1, "spatial_transform output size must be positive");
  validate_box(b);
  const std::size_t C = frame.dim(0), H = frame.dim(1), W = frame.dim(2);
  const double cx = b.cx.item(), cy = b.cy.item(), w = b.w.item(), h = b.h.item();

  auto sx = std::make_shared<std::vector<Samp>>(out_w);
  auto sy = std::make_shared<std::vector<Samp>>(out_h);
  for (std::size_t k = 0; k < out_w; ++k) (*sx)[k] = forward_samp(k, out_w, cx, w, W);
  for (std::size_t k = 0; k < out_h; ++k) (*sy)[k] = forward_samp(k, out_h, cy, h, H);

  const auto& fv = frame.values();
  std::vector<double> out(C * out_h * out_w);
  for (std::size_t c = 0; c < C; ++c) {
    const double* plane = fv.data() + c * H * W;
    for (std::size_t a = 0; a < out_h; ++a) {
      const Samp& py = (*sy)[a];
      for (std::size_t k = 0; k < out_w; ++k) {
        const Samp& px = (*sx)[k];
        const double v00 = plane[py.i0 * W + px.i0];
        const double v01 = plane[py.i0 * W + px.i1];
        const double v10 = plane[py.i1 * W + px.i0];
        const double v11 = plane[py.i1 * W + px.i1];
        out[(c * out_h + a) * out_w + k] =
            (1.0 - py.f) * ((1.0 - px.f) * v00 + px.f * v01) +
            py.f * ((1.0 - px.f) * v10 + px.f * v11);
      }
    }
  }

  auto n = std::make_shared<Node>();
  n->shape = {C, out_h, out_w};
  n->values = std::move(out);
  const std::vector<Tensor> inputs = {frame, b.cx, b.cy, b.w, b.h};
  bool rg = false;
  for (const auto& t : inputs) rg = rg || t.requires_grad();
  if (rg) {
    n->requires_grad = true;
    for (const auto& t : inputs) n->parents.push_back(t.node_ptr());
    Node* fp = frame.node();
    Node* cxp = b.cx.node();
    Node* cyp = b.cy.node();
    Node* wp = b.w.node();
    Node* hp = b.h.node();
    n->backward_fn = [fp, cxp, cyp, wp, hp, sx, sy, C, H, W, out_h, out_w](Node& self) {
      const bool need_frame = fp->requires_grad;
      const bool need_box = cxp->requires_grad || cyp->requires_grad ||
                            wp->requires_grad || hp->requires_grad;
      if (need_frame) fp->ensure_grad();
      double dcx = 0.0, dcy = 0.0, dw = 0.0, dh = 0.0;
      for (std::size_t a = 0; a < out_h; ++a) {
        const Samp& py = (*sy)[a];
        for (std::size_t k = 0; k < out_w; ++k) {
          const Samp& px = (*sx)[k];
          double gx = 0.0, gy = 0.0;
          for (std::size_t c = 0; c < C; ++c) {
            const double g = self.grad[(c * out_h + a) * out_w + k];
            if (g == 0.0) continue;
            const double* plane = fp->values.data() + c * H * W;
            const double v00 = plane[py.i0 * W + px.i0];
            const double v01 = plane[py.i0 * W + px.i1];
            const double v10 = plane[py.i1 * W + px.i0];
            const double v11 = plane[py.i1 * W + px.i1];
            if (need_frame) {
              double* gplane = fp->grad.data() + c * H * W;
              gplane[py.i0 * W + px.i0] += g * (1.0 - py.f) * (1.0 - px.f);
              gplane[py.i0 * W + px.i1] += g * (1.0 - py.f) * px.f;
              gplane[py.i1 * W + px.i0] += g * py.f * (1.0 - px.f);
              gplane[py.i1 * W + px.i1] += g * py.f * px.f;
            }
            if (need_box) {
              gx += g * ((1.0 - py.f) * (v01 - v00) + py.f * (v11 - v10));
              gy += g * ((1.0 - px.f) * (v10 - v00) + px.f * (v11 - v01));
            }
          }
          if (need_box) {
            dcx += gx * px.dcoord;
            dw += gx * px.dcoord * px.pos * 0.5;
            dcy += gy * py.dcoord;
            dh += gy * py.dcoord * py.pos * 0.5;
          }
        }
      }
      if (cxp->requires_grad) {
        cxp->ensure_grad();
        cxp->grad[0] += dcx;
      }
      if (cyp->requires_grad) {
        cyp->ensure_grad();
        cyp->grad[0] += dcy;
      }
      if (wp->requires_grad) {
        wp->ensure_grad();
        wp->grad[0] += dw;
      }
      if (hp->requires_grad) {
        hp->ensure_grad();
        hp->grad[0] += dh;
      }
    };
  }
  return Tensor::wrap(std::move(n));
}

double focal_bump(double x, double y) {
  const double r = std::sqrt(x * x * x * x + y * y * y * y);
  if (r >= 1.0) return 0.0;
  return std::exp(1.0 - 1.0 / (1.0 - r));
}

ad::Tensor focal_mask(std::size_t ch, std::size_t h, std::size_t w) {
  std::vector<double> g(h * w);
  for (std::size_t a = 0; a < h; ++a) {
    const double y = h == 1 ? 0.0 : static_cast<double>(a) * 2.0 / (h - 1) - 1.0;
    for (std::size_t k = 0; k < w; ++k) {
      const double x = w == 1 ? 0.0 : static_cast<double>(k) * 2.0 / (w - 1) - 1.0;
      g[a * w + k] = focal_bump(x, y);
    }
  }
  std::vector<double> tiled(ch * h * w);
  for (std::size_t c = 0; c < ch; ++c)
    std::copy(g.begin(), g.end(), tiled.begin() + c * h * w);
  return Tensor::from({ch, h, w}, std::move(tiled));
}

Tensor focal_spatial_transform(const Tensor& frame, const BoundingBox& b,
                               std::size_t out_h, std::size_t out_w) {
  Tensor crop = spatial_transform(frame, b, out_h, out_w);
  return ad::mul(crop, focal_mask(crop.dim(0), out_h, out_w));
}

Tensor inverse_spatial_transform(const Tensor& crop, const BoundingBox& b,
                                 std::size_t H, std::size_t W, PadMode mode) {
  check(crop.rank() == 3, "inverse_spatial_transform crop must be (C,h,w), got " +
                              ad::shape_str(crop.shape()));
  check(H >= 1 && W >= 1, "inverse_spatial_transform frame size must be positive");
  validate_box(b);
  const std::size_t C = crop.dim(0), ch = crop.dim(1), cw = crop.dim(2);
  const double cx = b.cx.item(), cy = b.cy.item(), w = b.w.item(), h = b.h.item();

  // Per-axis sample description for each frame pixel.
  struct ISamp {
    long i0 = 0;         // left tap (may be out of range in Zero mode)
    double f = 0.0;      // fraction of tap i0+1
    double dc = 0.0;     // d(crop pixel coord)/d(center)
    double dpos = 0.0;   // within-box coordinate (for the extent gradient)
    bool outside = false;
  };
  std::vector<ISamp> sx(W), sy(H);
  auto fill = [&](std::vector<ISamp>& out, std::size_t frame_dim, std::size_t crop_dim,
                  double center, double extent) {
    for (std::size_t k = 0; k < frame_dim; ++k) {
      ISamp s;
      const double u =
          (static_cast<double>(k) + 0.5) / static_cast<double>(frame_dim) * 2.0 - 1.0;
      double p = (u - center) * 2.0 / extent;
      bool live = true;
      if (p < -1.0 || p > 1.0) {
        if (mode == PadMode::Zero) {
          s.outside = true;
          out[k] = s;
          continue;
        }
        p = p < -1.0 ? -1.0 : 1.0;
        live = false;
      }
      double bc = (p + 1.0) * 0.5 * static_cast<double>(crop_dim) - 0.5;
      if (mode == PadMode::Border) {
        const double lim = static_cast<double>(crop_dim - 1);
        if (bc <= 0.0) {
          bc = 0.0;
          live = false;
        } else if (bc >= lim) {
          bc = lim;
          live = false;
        }
      }
      const double fl = std::floor(bc);
      s.i0 = static_cast<long>(fl);
      s.f = bc - fl;
      if (live) {
        s.dc = -static_cast<double>(crop_dim) / extent;
        s.dpos = p;
      }
      out[k] = s;
    }
  };
  fill(sx, W, cw, cx, w);
  fill(sy, H, ch, cy, h);

  const auto& cv = crop.values();
  auto tap = [&](const double* plane, long iy, long ix) -> double {
    if (iy < 0 || iy >= static_cast<long>(ch) || ix < 0 || ix >= static_cast<long>(cw))
      return 0.0;
    return plane[iy * static_cast<long>(cw) + ix];
  };
  std::vector<double> out(C * H * W, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    const double* plane = cv.data() + c * ch * cw;
    for (std::size_t y = 0; y < H; ++y) {
      const ISamp& py = sy[y];
      if (py.outside) continue;
      for (std::size_t x = 0; x < W; ++x) {
        const ISamp& px = sx[x];
        if (px.outside) continue;
        const double v00 = tap(plane, py.i0, px.i0);
        const double v01 = tap(plane, py.i0, px.i0 + 1);
        const double v10 = tap(plane, py.i0 + 1, px.i0);
        const double v11 = tap(plane, py.i0 + 1, px.i0 + 1);
        out[(c * H + y) * W + x] = (1.0 - py.f) * ((1.0 - px.f) * v00 + px.f * v01) +
                                   py.f * ((1.0 - px.f) * v10 + px.f * v11);
      }
    }
  }

  auto n = std::make_shared<Node>();
  n->shape = {C, H, W};
  n->values = std::move(out);
  const std::vector<Tensor> inputs = {crop, b.cx, b.cy, b.w, b.h};
  bool rg = false;
  for (const auto& t : inputs) rg = rg || t.requires_grad();
  if (rg) {
    n->requires_grad = true;
    for (const auto& t : inputs) n->parents.push_back(t.node_ptr());
    Node* cp = crop.node();
    Node* cxp = b.cx.node();
    Node* cyp = b.cy.node();
    Node* wp = b.w.node();
    Node* hp = b.h.node();
    auto sxp = std::make_shared<std::vector<ISamp>>(std::move(sx));
    auto syp = std::make_shared<std::vector<ISamp>>(std::move(sy));
    n->backward_fn = [cp, cxp, cyp, wp, hp, sxp, syp, C, H, W, ch, cw](Node& self) {
      const bool need_crop = cp->requires_grad;
      const bool need_box = cxp->requires_grad || cyp->requires_grad ||
                            wp->requires_grad || hp->requires_grad;
      if (need_crop) cp->ensure_grad();
      double dcx = 0.0, dcy = 0.0, dw = 0.0, dh = 0.0;
      auto tap = [&](const double* plane, long iy, long ix) -> double {
        if (iy < 0 || iy >= static_cast<long>(ch) || ix < 0 ||
            ix >= static_cast<long>(cw))
          return 0.0;
        return plane[iy * static_cast<long>(cw) + ix];
      };
      auto scatter = [&](double* gplane, long iy, long ix, double v) {
        if (iy < 0 || iy >= static_cast<long>(ch) || ix < 0 ||
            ix >= static_cast<long>(cw))
          return;
        gplane[iy * static_cast<long>(cw) + ix] += v;
      };
      for (std::size_t y = 0; y < H; ++y) {
        const ISamp& py = (*syp)[y];
        if (py.outside) continue;
        for (std::size_t x = 0; x < W; ++x) {
          const ISamp& px = (*sxp)[x];
          if (px.outside) continue;
          double gx = 0.0, gy = 0.0;
          for (std::size_t c = 0; c < C; ++c) {
            const double g = self.grad[(c * H + y) * W + x];
            if (g == 0.0) continue;
            const double* plane = cp->values.data() + c * ch * cw;
            if (need_crop) {
              double* gplane = cp->grad.data() + c * ch * cw;
              scatter(gplane, py.i0, px.i0, g * (1.0 - py.f) * (1.0 - px.f));
              scatter(gplane, py.i0, px.i0 + 1, g * (1.0 - py.f) * px.f);
              scatter(gplane, py.i0 + 1, px.i0, g * py.f * (1.0 - px.f));
              scatter(gplane, py.i0 + 1, px.i0 + 1, g * py.f * px.f);
            }
            if (need_box) {
              const double v00 = tap(plane, py.i0, px.i0);
              const double v01 = tap(plane, py.i0, px.i0 + 1);
              const double v10 = tap(plane, py.i0 + 1, px.i0);
              const double v11 = tap(plane, py.i0 + 1, px.i0 + 1);
              gx += g * ((1.0 - py.f) * (v01 - v00) + py.f * (v11 - v10));
              gy += g * ((1.0 - px.f) * (v10 - v00) + px.f * (v11 - v01));
            }
          }
          if (need_box) {
            dcx += gx * px.dc;
            dw += gx * px.dc * px.dpos * 0.5;
            dcy += gy * py.dc;
            dh += gy * py.dc * py.dpos * 0.5;
          }
        }
      }
      if (cxp->requires_grad) {
        cxp->ensure_grad();
        cxp->grad[0] += dcx;
      }
      if (cyp->requires_grad) {
        cyp->ensure_grad();
        cyp->grad[0] += dcy;
      }
      if (wp->requires_grad) {
        wp->ensure_grad();
        wp->grad[0] += dw;
      }
      if (hp->requires_grad) {
        hp->ensure_grad();
        hp->grad[0] += dh;
      }
    };
  }
  return Tensor::wrap(std::move(n));
}

Tensor inverse_focal_spatial_transform(const Tensor& crop, const BoundingBox& b,
                                       std::size_t H, std::size_t W, PadMode mode) {
  Tensor weighted = ad::mul(crop, focal_mask(crop.dim(0), crop.dim(1), crop.dim(2)));
  return inverse_spatial_transform(weighted, b, H, W, mode);
}

double box_iou(const BoundingBox& a, const BoundingBox& b) {
  const double ax0 = a.cx.item() - 0.5 * a.w.item();
  const double ax1 = a.cx.item() + 0.5 * a.w.item();
  const double ay0 = a.cy.item() - 0.5 * a.h.item();
  const double ay1 = a.cy.item() + 0.5 * a.h.item();
  const double bx0 = b.cx.item() - 0.5 * b.w.item();
  const double bx1 = b.cx.item() + 0.5 * b.w.item();
  const double by0 = b.cy.item() - 0.5 * b.h.item();
  const double by1 = b.cy.item() + 0.5 * b.h.item();
  const double iw = std::max(0.0, std::min(ax1, bx1) - std::max(ax0, bx0));
  const double ih = std::max(0.0, std::min(ay1, by1) - std::max(ay0, by0));
  const double inter = iw * ih;
  const double uni = a.w.item() * a.h.item() + b.w.item() * b.h.item() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

std::vector<std::pair<int, int>> greedy_iou_match(const std::vector<BoundingBox>& pred,
                                                  const std::vector<BoundingBox>& gt,
                                                  double min_iou) {
  std::vector<std::vector<double>> iou(pred.size(), std::vector<double>(gt.size()));
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (std::size_t j = 0; j < gt.size(); ++j) iou[i][j] = box_iou(pred[i], gt[j]);
  std::vector<bool> pu(pred.size(), false), gu(gt.size(), false);
  std::vector<std::pair<int, int>> out;
  while (true) {
    double best = -1.0;
    int bi = -1, bj = -1;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pu[i]) continue;
      for (std::size_t j = 0; j < gt.size(); ++j) {
        if (gu[j]) continue;
        if (iou[i][j] >= min_iou && iou[i][j] > best) {
          best = iou[i][j];
          bi = static_cast<int>(i);
          bj = static_cast<int>(j);
        }
      }
    }
    if (bi < 0) break;
    pu[static_cast<std::size_t>(bi)] = true;
    gu[static_cast<std::size_t>(bj)] = true;
    out.emplace_back(bi, bj);
  }
  return out;
}

}  // namespace scenedec::geo
