#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "scenedec/camera.hpp"
#include "scenedec/nets.hpp"
#include "scenedec/optim.hpp"

using namespace scenedec;
using ad::Tensor;

namespace {

Tensor random_tensor(ad::Shape shape, Rng& rng, double scale = 1.0,
                     bool requires_grad = false) {
  std::vector<double> v(ad::numel(shape));
  for (double& x : v) x = scale * rng.gaussian();
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Random-weight functional so every input coordinate has a nonzero true
// gradient; plain sums can hide sign errors and zero out by symmetry.
Tensor weighted_sum(const Tensor& x, Rng& rng) {
  std::vector<double> w(x.size());
  for (double& c : w) c = rng.uniform(0.5, 1.5) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
  return ad::reduce_sum(ad::mul(ad::reshape(x, {x.size()}), Tensor::from({x.size()}, std::move(w))));
}

void randomize_params(nets::ParamStore& ps, Rng& rng, double scale = 0.05) {
  for (const nets::ParamEntry& e : ps.entries()) {
    nets::ParamEntry copy = e;
    for (double& v : copy.tensor.mutable_values()) v = scale * rng.gaussian();
  }
}

double grad_norm(const Tensor& t) {
  if (!t.has_grad()) return 0.0;
  double s = 0.0;
  for (double g : t.grad()) s += g * g;
  return std::sqrt(s);
}

double softplus_oracle(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

}  // namespace

TEST_CASE("config validation rejects inconsistent architectures") {
  Rng rng(1);
  nets::DetectorConfig d;
  d.resolution = 4;
  CHECK_THROWS_AS(nets::Detector(d, rng), Error);
  nets::DetectorConfig d2;
  d2.max_detections = 0;
  CHECK_THROWS_AS(nets::Detector(d2, rng), Error);
  nets::DetectorConfig d3;
  d3.widths.clear();
  CHECK_THROWS_AS(nets::Detector(d3, rng), Error);

  nets::DecoderConfig dec;
  dec.crop = 24;  // base 4 with 3 blocks demands 32
  CHECK_THROWS_WITH_AS(nets::Decoder(dec, rng), doctest::Contains("base * 2^blocks"),
                       Error);

  nets::PoseRegressorConfig p;
  p.dropout = 1.0;
  CHECK_THROWS_AS(nets::PoseRegressor(p, rng), Error);
}

TEST_CASE("zero-initialized detector emits the prior box in every slot") {
  Rng rng(11);
  nets::DetectorConfig cfg;
  cfg.resolution = 16;
  cfg.widths = {4, 6};
  cfg.max_detections = 3;
  nets::Detector det(cfg, rng);

  Tensor frame = random_tensor({3, 16, 16}, rng);
  Tensor raw = det.raw_forward(frame);
  REQUIRE(raw.shape() == ad::Shape{3, 5});
  for (double v : raw.values()) CHECK(v == 0.0);

  std::vector<nets::Detection> dets = det.forward(frame);
  REQUIRE(dets.size() == 3);
  for (const nets::Detection& dt : dets) {
    CHECK(dt.box.cx.item() == 0.0);
    CHECK(dt.box.cy.item() == 0.0);
    CHECK(dt.z.item() == 0.0);
    CHECK(dt.box.h.item() == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(dt.box.w.item() == doctest::Approx(0.8 / 1.5).epsilon(1e-15));
    CHECK(dt.box.h.item() / dt.box.w.item() == doctest::Approx(1.5).epsilon(1e-12));
  }

  Tensor bad = random_tensor({3, 8, 8}, rng);
  CHECK_THROWS_WITH_AS(det.raw_forward(bad), doctest::Contains("(3,16,16)"), Error);
}

TEST_CASE("detection decode applies the softplus size map") {
  std::vector<double> raw_vals = {0.3, -0.2, 0.5, -1.0, 2.0,
                                  -0.7, 0.4, -2.5, 1.5, -0.3};
  Tensor raw = Tensor::from({2, 5}, raw_vals);
  std::vector<nets::Detection> dets = nets::decode_detections(raw);
  REQUIRE(dets.size() == 2);
  const double inv_ln2 = 1.0 / std::log(2.0);
  for (int i = 0; i < 2; ++i) {
    const double* r = raw_vals.data() + 5 * i;
    CHECK(dets[i].box.cx.item() == r[0]);
    CHECK(dets[i].box.cy.item() == r[1]);
    CHECK(dets[i].box.w.item() ==
          doctest::Approx(softplus_oracle(r[2]) * (0.8 / 1.5 * inv_ln2)).epsilon(1e-15));
    CHECK(dets[i].box.h.item() ==
          doctest::Approx(softplus_oracle(r[3]) * (0.8 * inv_ln2)).epsilon(1e-15));
    CHECK(dets[i].z.item() == r[4]);
    CHECK(dets[i].box.w.item() > 0.0);
    CHECK(dets[i].box.h.item() > 0.0);
  }
  CHECK_THROWS_WITH_AS(nets::decode_detections(Tensor::zeros({2, 4})),
                       doctest::Contains("(N,5)"), Error);
}

TEST_CASE("parameter construction is seed-deterministic") {
  nets::EncoderConfig cfg;
  cfg.crop = 16;
  cfg.widths = {4, 6};
  cfg.app_dim = 8;
  cfg.points = 3;
  Rng r1(7), r2(7), r3(8);
  nets::Encoder a(cfg, r1), b(cfg, r2), c(cfg, r3);
  REQUIRE(a.params().entries().size() == b.params().entries().size());
  bool all_equal = true, any_diff_from_c = false;
  for (std::size_t i = 0; i < a.params().entries().size(); ++i) {
    CHECK(a.params().entries()[i].name == b.params().entries()[i].name);
    if (a.params().entries()[i].tensor.values() != b.params().entries()[i].tensor.values())
      all_equal = false;
    if (a.params().entries()[i].tensor.values() != c.params().entries()[i].tensor.values())
      any_diff_from_c = true;
  }
  CHECK(all_equal);
  CHECK(any_diff_from_c);

  // conv1 4*3*9+4, conv2 6*4*9+6, app 8*96+8, geo 9*96+9 with flat = 6*4*4.
  const std::size_t flat = 6 * 4 * 4;
  CHECK(a.params().count() == (4 * 27 + 4) + (6 * 4 * 9 + 6) + (8 * flat + 8) + (9 * flat + 9));
}

TEST_CASE("backward reaches every parameter of every network") {
  Rng rng(21);

  nets::DetectorConfig dc;
  dc.resolution = 16;
  dc.widths = {3, 4};
  dc.max_detections = 2;
  nets::Detector det(dc, rng);
  randomize_params(det.params(), rng);
  Tensor frame = random_tensor({3, 16, 16}, rng, 0.5);
  ad::backward(weighted_sum(det.raw_forward(frame), rng));
  for (const nets::ParamEntry& e : det.params().entries()) {
    INFO(e.name);
    CHECK(grad_norm(e.tensor) > 0.0);
  }

  nets::EncoderConfig ec;
  ec.crop = 16;
  ec.widths = {3, 4};
  ec.app_dim = 6;
  ec.points = 2;
  nets::Encoder enc(ec, rng);
  Tensor crop = random_tensor({3, 16, 16}, rng, 0.5);
  nets::LatentCode code = enc.forward(crop);
  ad::backward(ad::add(weighted_sum(code.appearance, rng), weighted_sum(code.geometry, rng)));
  for (const nets::ParamEntry& e : enc.params().entries()) {
    INFO(e.name);
    CHECK(grad_norm(e.tensor) > 0.0);
  }

  nets::DecoderConfig dcc;
  dcc.crop = 8;
  dcc.base = 2;
  dcc.widths = {4, 3};
  dcc.app_dim = 6;
  dcc.points = 2;
  nets::Decoder dec(dcc, rng);
  Tensor app = random_tensor({6}, rng, 1.0, true);
  Tensor geo = random_tensor({3, 2}, rng, 1.0, true);
  nets::DecodedCrop out = dec.forward(app, geo);
  ad::backward(ad::add(weighted_sum(out.rgb, rng), weighted_sum(out.mask, rng)));
  for (const nets::ParamEntry& e : dec.params().entries()) {
    INFO(e.name);
    CHECK(grad_norm(e.tensor) > 0.0);
  }
  CHECK(grad_norm(app) > 0.0);  // both latent inputs stay on the tape
  CHECK(grad_norm(geo) > 0.0);

  nets::PoseRegressorConfig pc;
  pc.points = 2;
  pc.app_dim = 6;
  pc.hidden = 8;
  pc.joints = 2;
  nets::PoseRegressor pose(pc, rng);
  nets::LatentCode pcode;
  pcode.geometry = random_tensor({3, 2}, rng);
  ad::backward(weighted_sum(pose.forward(pcode, nets::Mode::Eval), rng));
  for (const nets::ParamEntry& e : pose.params().entries()) {
    INFO(e.name);
    CHECK(grad_norm(e.tensor) > 0.0);
  }
}

TEST_CASE("encoder is deterministic and sensitive to single pixels") {
  Rng rng(31);
  nets::EncoderConfig cfg;
  cfg.crop = 16;
  cfg.widths = {4, 4};
  cfg.app_dim = 8;
  cfg.points = 3;
  nets::Encoder enc(cfg, rng);

  Tensor crop = random_tensor({3, 16, 16}, rng, 0.5);
  nets::LatentCode a = enc.forward(crop);
  nets::LatentCode b = enc.forward(crop);
  CHECK(a.appearance.shape() == ad::Shape{8});
  CHECK(a.geometry.shape() == ad::Shape{3, 3});
  CHECK(a.appearance.values() == b.appearance.values());
  CHECK(a.geometry.values() == b.geometry.values());

  Tensor poked = crop.detached_copy();
  poked.mutable_values()[5 * 16 + 9] += 1e-3;
  nets::LatentCode c = enc.forward(poked);
  double delta = 0.0;
  for (std::size_t i = 0; i < 8; ++i)
    delta += std::abs(c.appearance.at(i) - a.appearance.at(i));
  for (std::size_t i = 0; i < 9; ++i)
    delta += std::abs(c.geometry.at(i) - a.geometry.at(i));
  CHECK(delta > 0.0);

  CHECK_THROWS_WITH_AS(enc.forward(random_tensor({3, 8, 8}, rng)),
                       doctest::Contains("(3,16,16)"), Error);
}

TEST_CASE("decoder outputs stay inside [0,1] for random codes") {
  Rng rng(41);
  nets::DecoderConfig cfg;
  cfg.crop = 8;
  cfg.base = 2;
  cfg.widths = {4, 3};
  cfg.app_dim = 8;
  cfg.points = 2;
  nets::Decoder dec(cfg, rng);
  randomize_params(dec.params(), rng, 0.5);

  double lo_rgb = 1e300, hi_rgb = -1e300, lo_m = 1e300, hi_m = -1e300;
  for (int s = 0; s < 10000; ++s) {
    nets::DecodedCrop out =
        dec.forward(random_tensor({8}, rng, 3.0), random_tensor({3, 2}, rng, 3.0));
    for (double v : out.rgb.values()) {
      lo_rgb = std::min(lo_rgb, v);
      hi_rgb = std::max(hi_rgb, v);
    }
    for (double v : out.mask.values()) {
      lo_m = std::min(lo_m, v);
      hi_m = std::max(hi_m, v);
    }
    if (s == 0) {
      CHECK(out.rgb.shape() == ad::Shape{3, 8, 8});
      CHECK(out.mask.shape() == ad::Shape{8, 8});
    }
  }
  CHECK(lo_rgb >= 0.0);
  CHECK(hi_rgb <= 1.0);
  CHECK(lo_m >= 0.0);
  CHECK(hi_m <= 1.0);
  CHECK(hi_m > lo_m);  // not a constant network
}

TEST_CASE("decoder output depends on latent point rotation") {
  Rng rng(51);
  nets::DecoderConfig cfg;
  cfg.crop = 8;
  cfg.base = 2;
  cfg.widths = {4, 3};
  cfg.app_dim = 8;
  cfg.points = 4;
  nets::Decoder dec(cfg, rng);

  Tensor app = random_tensor({8}, rng);
  Tensor geo = random_tensor({3, 4}, rng);
  Eigen::Matrix3d R;
  R << 0, -1, 0, 1, 0, 0, 0, 0, 1;  // quarter turn about z
  Tensor geo_rot = geo::rotate_latent(geo, R);

  nets::DecodedCrop a = dec.forward(app, geo);
  nets::DecodedCrop b = dec.forward(app, geo_rot);
  double diff = 0.0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i)
    diff = std::max(diff, std::abs(a.rgb.at(i) - b.rgb.at(i)));
  CHECK(diff > 1e-12);
}

TEST_CASE("pose regressor modes: eval deterministic, train stochastic") {
  Rng rng(61);
  nets::PoseRegressorConfig cfg;
  cfg.points = 3;
  cfg.hidden = 16;
  cfg.joints = 4;
  nets::PoseRegressor pose(cfg, rng);
  nets::LatentCode code;
  code.geometry = random_tensor({3, 3}, rng);

  Tensor e1 = pose.forward(code, nets::Mode::Eval);
  Tensor e2 = pose.forward(code, nets::Mode::Eval);
  CHECK(e1.shape() == ad::Shape{4, 3});
  CHECK(e1.values() == e2.values());

  Rng drop(99);
  Tensor t1 = pose.forward(code, nets::Mode::Train, &drop);
  Tensor t2 = pose.forward(code, nets::Mode::Train, &drop);
  CHECK(t1.values() != t2.values());

  Rng d1(5), d2(5);
  Tensor s1 = pose.forward(code, nets::Mode::Train, &d1);
  Tensor s2 = pose.forward(code, nets::Mode::Train, &d2);
  CHECK(s1.values() == s2.values());  // same dropout stream, same output

  CHECK_THROWS_WITH_AS(pose.forward(code, nets::Mode::Train),
                       doctest::Contains("needs an rng"), Error);
}

TEST_CASE("pose regressor can consume appearance when configured") {
  Rng rng(71);
  nets::PoseRegressorConfig cfg;
  cfg.points = 2;
  cfg.app_dim = 5;
  cfg.use_appearance = true;
  cfg.hidden = 8;
  cfg.joints = 2;
  nets::PoseRegressor pose(cfg, rng);
  nets::LatentCode code;
  code.geometry = random_tensor({3, 2}, rng);
  code.appearance = random_tensor({5}, rng);
  Tensor out = pose.forward(code, nets::Mode::Eval);
  CHECK(out.shape() == ad::Shape{2, 3});

  Tensor app2 = code.appearance.detached_copy();
  app2.mutable_values()[0] += 0.1;
  nets::LatentCode code2{app2, code.geometry};
  Tensor out2 = pose.forward(code2, nets::Mode::Eval);
  CHECK(out.values() != out2.values());
}

TEST_CASE("dropout zeroes or rescales and passes gradients through the mask") {
  Rng rng(81);
  Tensor x = Tensor::constant({1000}, 1.0);
  Tensor x_leaf = x.detached_copy(true);
  Tensor y = nets::dropout(x_leaf, 0.5, rng);
  double mean = 0.0;
  int zeros = 0;
  for (double v : y.values()) {
    CHECK((v == 0.0 || v == 2.0));
    mean += v;
    if (v == 0.0) ++zeros;
  }
  mean /= 1000.0;
  CHECK(mean == doctest::Approx(1.0).epsilon(0.15));
  CHECK(zeros > 350);
  CHECK(zeros < 650);

  ad::backward(ad::reduce_sum(y));
  CHECK(x_leaf.grad() == y.values());  // d(sum m*x)/dx = m, and x = 1

  Rng r0(1);
  Tensor id = nets::dropout(x, 0.0, r0);
  CHECK(id.values() == x.values());
  CHECK_THROWS_AS(nets::dropout(x, 1.0, r0), Error);
}

TEST_CASE("parameter json round trip reproduces forwards bit-exactly") {
  nets::EncoderConfig cfg;
  cfg.crop = 16;
  cfg.widths = {4, 4};
  cfg.app_dim = 8;
  cfg.points = 3;
  Rng r1(3), r2(9), data_rng(15);
  nets::Encoder a(cfg, r1), b(cfg, r2);

  Tensor crop = random_tensor({3, 16, 16}, data_rng, 0.5);
  nets::LatentCode before = b.forward(crop);

  const std::string text = a.params().values_to_json().dump();
  b.params().values_from_json(nlohmann::json::parse(text));
  nets::LatentCode ours = b.forward(crop);
  nets::LatentCode theirs = a.forward(crop);
  CHECK(ours.appearance.values() == theirs.appearance.values());
  CHECK(ours.geometry.values() == theirs.geometry.values());
  CHECK(ours.appearance.values() != before.appearance.values());

  nlohmann::json j = a.params().values_to_json();
  j.erase("encoder.app.weight");
  CHECK_THROWS_WITH_AS(b.params().values_from_json(j),
                       doctest::Contains("encoder.app.weight"), Error);
  nlohmann::json j2 = a.params().values_to_json();
  j2["encoder.geo.bias"] = std::vector<double>{1.0};
  CHECK_THROWS_WITH_AS(b.params().values_from_json(j2),
                       doctest::Contains("wrong length"), Error);

  CHECK_THROWS_WITH_AS(a.params().at("nope"), doctest::Contains("nope"), Error);
}

TEST_CASE("architecture and whitening descriptors survive json") {
  nets::DecoderConfig cfg;
  cfg.crop = 16;
  cfg.base = 2;
  cfg.widths = {6, 5, 4};
  cfg.app_dim = 12;
  cfg.points = 7;
  cfg.base_channels = 9;
  nlohmann::json j = cfg;
  auto back = j.get<nets::DecoderConfig>();
  CHECK(back.crop == cfg.crop);
  CHECK(back.base == cfg.base);
  CHECK(back.widths == cfg.widths);
  CHECK(back.app_dim == cfg.app_dim);
  CHECK(back.points == cfg.points);
  CHECK(back.base_channels == cfg.base_channels);

  nets::Whitening w;
  w.mean = {0.1, 0.25, 0.4};
  w.stdev = {1.5, 0.75, 2.0};
  nlohmann::json wj = w;
  auto wb = wj.get<nets::Whitening>();
  CHECK(wb.mean == w.mean);
  CHECK(wb.stdev == w.stdev);
}

TEST_CASE("whitening normalizes channels against hand-computed statistics") {
  Rng rng(91);
  std::vector<Tensor> frames;
  for (int f = 0; f < 4; ++f) frames.push_back(random_tensor({3, 6, 6}, rng, 0.3));
  for (Tensor& t : frames)
    for (std::size_t i = 0; i < 36; ++i) t.mutable_values()[36 + i] += 2.0;  // shift ch1

  double sum[3] = {0, 0, 0}, sq[3] = {0, 0, 0};
  for (const Tensor& t : frames)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 36; ++i) {
        double v = t.values()[c * 36 + i];
        sum[c] += v;
        sq[c] += v * v;
      }
  nets::Whitening w = nets::compute_whitening(frames);
  for (std::size_t c = 0; c < 3; ++c) {
    const double mean = sum[c] / 144.0;
    const double var = sq[c] / 144.0 - mean * mean;
    CHECK(w.mean[c] == doctest::Approx(mean).epsilon(1e-12));
    CHECK(w.stdev[c] == doctest::Approx(std::sqrt(var)).epsilon(1e-12));
  }
  CHECK(w.mean[1] > 1.5);

  // applying the stats recenters and rescales every channel
  double msum[3] = {0, 0, 0}, msq[3] = {0, 0, 0};
  for (const Tensor& t : frames) {
    Tensor n = w.apply(t);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 36; ++i) {
        double v = n.values()[c * 36 + i];
        msum[c] += v;
        msq[c] += v * v;
      }
  }
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(msum[c] / 144.0 == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(msq[c] / 144.0 == doctest::Approx(1.0).epsilon(1e-9));
  }

  // constant channels floor the deviation instead of dividing by zero
  std::vector<Tensor> flat = {Tensor::constant({3, 2, 2}, 0.5)};
  nets::Whitening wf = nets::compute_whitening(flat);
  for (std::size_t c = 0; c < 3; ++c) CHECK(wf.stdev[c] == doctest::Approx(1e-6));
  Tensor applied = wf.apply(flat[0]);
  for (double v : applied.values()) CHECK(std::isfinite(v));

  CHECK_THROWS_WITH_AS(nets::compute_whitening({}), doctest::Contains("at least one"),
                       Error);
}

TEST_CASE("whitening application is differentiable in the frame") {
  Rng rng(101);
  nets::Whitening w;
  w.mean = {0.2, 0.4, 0.1};
  w.stdev = {0.5, 2.0, 1.25};
  Tensor x0 = random_tensor({3, 2, 2}, rng);
  Rng wr(7);
  auto f = [&](const Tensor& x) {
    Rng local(7);
    return weighted_sum(w.apply(x), local);
  };
  ad::GradCheckReport rep = ad::grad_check(f, x0, 1e-4);
  CHECK(rep.max_rel_err < 1e-7);
}

TEST_CASE("end-to-end gradient checks on micro networks") {
  Rng rng(111);

  nets::DetectorConfig dc;
  dc.resolution = 8;
  dc.widths = {2, 2};
  dc.max_detections = 1;
  nets::Detector det(dc, rng);
  randomize_params(det.params(), rng, 0.2);
  Tensor frame0 = random_tensor({3, 8, 8}, rng, 0.5);
  auto f_det = [&](const Tensor& x) {
    Rng local(13);
    std::vector<nets::Detection> d = nets::decode_detections(det.raw_forward(x));
    Tensor parts = ad::concat_flat({d[0].box.cx, d[0].box.cy, d[0].box.w, d[0].box.h, d[0].z});
    return weighted_sum(parts, local);
  };
  CHECK(ad::grad_check(f_det, frame0).max_rel_err < 1e-4);

  nets::EncoderConfig ec;
  ec.crop = 8;
  ec.widths = {2, 2};
  ec.app_dim = 4;
  ec.points = 2;
  nets::Encoder enc(ec, rng);
  Tensor crop0 = random_tensor({3, 8, 8}, rng, 0.5);
  auto f_enc = [&](const Tensor& x) {
    Rng local(17);
    nets::LatentCode code = enc.forward(x);
    return ad::add(weighted_sum(code.appearance, local), weighted_sum(code.geometry, local));
  };
  CHECK(ad::grad_check(f_enc, crop0).max_rel_err < 1e-4);

  nets::DecoderConfig dcc;
  dcc.crop = 8;
  dcc.base = 2;
  dcc.widths = {3, 2};
  dcc.app_dim = 4;
  dcc.points = 2;
  nets::Decoder dec(dcc, rng);
  Tensor code0 = random_tensor({10}, rng);
  auto f_dec = [&](const Tensor& x) {
    Rng local(19);
    Tensor app = ad::narrow(x, 0, 0, 4);
    Tensor geo = ad::reshape(ad::narrow(x, 0, 4, 6), {3, 2});
    nets::DecodedCrop out = dec.forward(app, geo);
    return ad::add(weighted_sum(out.rgb, local), weighted_sum(out.mask, local));
  };
  CHECK(ad::grad_check(f_dec, code0).max_rel_err < 1e-4);

  nets::PoseRegressorConfig pc;
  pc.points = 2;
  pc.hidden = 6;
  pc.joints = 2;
  nets::PoseRegressor pose(pc, rng);
  Tensor geo0 = random_tensor({3, 2}, rng);
  auto f_pose = [&](const Tensor& x) {
    Rng local(23);
    nets::LatentCode code;
    code.geometry = x;
    return weighted_sum(pose.forward(code, nets::Mode::Eval), local);
  };
  CHECK(ad::grad_check(f_pose, geo0).max_rel_err < 1e-4);
}

TEST_CASE("freezing parameters blocks gradient accumulation") {
  Rng rng(121);
  nets::EncoderConfig cfg;
  cfg.crop = 8;
  cfg.widths = {2, 2};
  cfg.app_dim = 4;
  cfg.points = 2;
  nets::Encoder enc(cfg, rng);
  enc.params().set_trainable(false);
  Tensor crop = random_tensor({3, 8, 8}, rng, 0.5, true);
  nets::LatentCode code = enc.forward(crop);
  ad::backward(weighted_sum(code.appearance, rng));
  for (const nets::ParamEntry& e : enc.params().entries()) CHECK(grad_norm(e.tensor) == 0.0);
  CHECK(grad_norm(crop) > 0.0);  // input gradients still flow through frozen layers
  enc.params().set_trainable(true);
}
