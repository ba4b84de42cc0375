#include "scenedec/nets.hpp"

#include <cmath>
#include <cstddef>

#include "scenedec/common.hpp"

namespace scenedec::nets {

using ad::Shape;
using ad::Tensor;

namespace {

std::vector<double> gaussian_fill(std::size_t n, double std_dev, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = std_dev * rng.gaussian();
  return v;
}

// He-style conv block parameters: weight (out,in,k,k), bias (out,) zeros.
void add_conv(ParamStore& ps, const std::string& prefix, int in_ch, int out_ch,
              int k, Rng& rng) {
  const std::size_t fan_in = static_cast<std::size_t>(in_ch) * k * k;
  const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
  const Shape ws = {static_cast<std::size_t>(out_ch), static_cast<std::size_t>(in_ch),
                    static_cast<std::size_t>(k), static_cast<std::size_t>(k)};
  ps.create(prefix + ".weight", ws, gaussian_fill(ad::numel(ws), std_dev, rng));
  ps.create(prefix + ".bias", {static_cast<std::size_t>(out_ch)},
            std::vector<double>(out_ch, 0.0));
}

void add_linear(ParamStore& ps, const std::string& prefix, int in_dim, int out_dim,
                double std_dev, Rng& rng) {
  const Shape ws = {static_cast<std::size_t>(out_dim), static_cast<std::size_t>(in_dim)};
  ps.create(prefix + ".weight", ws, gaussian_fill(ad::numel(ws), std_dev, rng));
  ps.create(prefix + ".bias", {static_cast<std::size_t>(out_dim)},
            std::vector<double>(out_dim, 0.0));
}

Tensor conv_block(const Tensor& x, const ParamStore& ps, const std::string& prefix,
                  std::size_t stride) {
  Tensor h = ad::conv2d(x, ps.at(prefix + ".weight"), stride);
  return silu(ad::add_channel_bias(h, ps.at(prefix + ".bias")));
}

// Spatial side after the stride-2 trunk: ceil division per block.
int trunk_side(int side, std::size_t blocks) {
  for (std::size_t i = 0; i < blocks; ++i) side = (side + 1) / 2;
  return side;
}

void check_frame(const Tensor& x, int channels, int side, const char* who) {
  check(x.defined() && x.rank() == 3 && x.dim(0) == static_cast<std::size_t>(channels) &&
            x.dim(1) == static_cast<std::size_t>(side) &&
            x.dim(2) == static_cast<std::size_t>(side),
        std::string(who) + " expects input (" + std::to_string(channels) + "," +
            std::to_string(side) + "," + std::to_string(side) + "), got " +
            (x.defined() ? ad::shape_str(x.shape()) : "undefined"));
}

void check_widths(const std::vector<int>& widths, const char* who) {
  check(!widths.empty(), std::string(who) + " needs at least one conv block");
  for (int w : widths) check(w > 0, std::string(who) + " widths must be positive");
}

}  // namespace

Tensor silu(const Tensor& x) { return ad::mul(x, ad::sigmoid(x)); }

Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b) {
  check(x.rank() == 1 && W.rank() == 2 && b.rank() == 1 && W.dim(1) == x.size() &&
            W.dim(0) == b.size(),
        "linear: incompatible shapes x " + ad::shape_str(x.shape()) + ", W " +
            ad::shape_str(W.shape()) + ", b " + ad::shape_str(b.shape()));
  Tensor y = ad::matmul_nt(ad::reshape(x, {1, x.size()}), W);
  return ad::add(ad::reshape(y, {W.dim(0)}), b);
}

Tensor dropout(const Tensor& x, double p, Rng& rng) {
  check(p >= 0.0 && p < 1.0, "dropout probability must be in [0,1)");
  std::vector<double> m(x.size());
  const double keep_scale = 1.0 / (1.0 - p);
  for (double& v : m) v = rng.uniform() < p ? 0.0 : keep_scale;
  return ad::mul(x, Tensor::from(x.shape(), std::move(m)));
}

Tensor ParamStore::create(const std::string& name, Shape shape,
                          std::vector<double> values) {
  for (const ParamEntry& e : entries_)
    check(e.name != name, "duplicate parameter name " + name);
  check(ad::numel(shape) == values.size(), "parameter " + name + " value count mismatch");
  Tensor t = Tensor::from(std::move(shape), std::move(values), true);
  entries_.push_back({name, t});
  return t;
}

const Tensor& ParamStore::at(const std::string& name) const {
  for (const ParamEntry& e : entries_)
    if (e.name == name) return e.tensor;
  throw Error("unknown parameter " + name);
}

std::size_t ParamStore::count() const {
  std::size_t n = 0;
  for (const ParamEntry& e : entries_) n += e.tensor.size();
  return n;
}

void ParamStore::zero_grads() {
  for (ParamEntry& e : entries_) e.tensor.zero_grad();
}

void ParamStore::set_trainable(bool trainable) {
  for (ParamEntry& e : entries_) e.tensor.set_requires_grad(trainable);
}

nlohmann::json ParamStore::values_to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const ParamEntry& e : entries_) j[e.name] = e.tensor.values();
  return j;
}

void ParamStore::values_from_json(const nlohmann::json& j) {
  for (ParamEntry& e : entries_) {
    check(j.contains(e.name), "parameter block " + e.name + " missing from checkpoint");
    const auto& arr = j.at(e.name);
    check(arr.is_array() && arr.size() == e.tensor.size(),
          "parameter block " + e.name + " has wrong length");
    std::vector<double>& dst = e.tensor.mutable_values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = arr[i].get<double>();
  }
}

Tensor Whitening::apply(const Tensor& frame) const {
  check(frame.defined() && frame.rank() == 3 && frame.dim(0) == 3,
        "whitening expects a (3,H,W) frame");
  std::vector<Tensor> chans;
  chans.reserve(3);
  for (std::size_t c = 0; c < 3; ++c) {
    Tensor ch = ad::narrow(frame, 0, c, 1);
    ch = ad::add_constant(ch, -mean[c]);
    chans.push_back(ad::scale(ch, 1.0 / stdev[c]));
  }
  return ad::reshape(ad::concat_flat(chans), frame.shape());
}

Whitening compute_whitening(const std::vector<Tensor>& frames) {
  check(!frames.empty(), "whitening needs at least one frame");
  std::array<double, 3> sum{0, 0, 0}, sum_sq{0, 0, 0};
  std::size_t per_channel = 0;
  for (const Tensor& f : frames) {
    check(f.defined() && f.rank() == 3 && f.dim(0) == 3,
          "whitening expects (3,H,W) frames");
    const std::size_t hw = f.dim(1) * f.dim(2);
    per_channel += hw;
    const std::vector<double>& v = f.values();
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < hw; ++i) {
        const double x = v[c * hw + i];
        sum[c] += x;
        sum_sq[c] += x * x;
      }
  }
  Whitening w;
  for (std::size_t c = 0; c < 3; ++c) {
    w.mean[c] = sum[c] / static_cast<double>(per_channel);
    const double var = sum_sq[c] / static_cast<double>(per_channel) - w.mean[c] * w.mean[c];
    w.stdev[c] = std::sqrt(var > 1e-12 ? var : 1e-12);
  }
  return w;
}

void to_json(nlohmann::json& j, const Whitening& w) {
  j = nlohmann::json{{"mean", w.mean}, {"stdev", w.stdev}};
}

void from_json(const nlohmann::json& j, Whitening& w) {
  j.at("mean").get_to(w.mean);
  j.at("stdev").get_to(w.stdev);
}

void DetectorConfig::validate() const {
  check(resolution >= 8, "detector resolution too small");
  check(in_channels > 0 && ksize > 0 && ksize % 2 == 1, "detector channel/kernel config invalid");
  check(max_detections > 0, "detector needs at least one detection slot");
  check_widths(widths, "detector");
}

void EncoderConfig::validate() const {
  check(crop >= 8, "encoder crop too small");
  check(in_channels > 0 && ksize > 0 && ksize % 2 == 1, "encoder channel/kernel config invalid");
  check(app_dim > 0 && points > 0, "encoder latent dims must be positive");
  check_widths(widths, "encoder");
}

void DecoderConfig::validate() const {
  check(app_dim > 0 && points > 0, "decoder latent dims must be positive");
  check(base > 0 && base_channels > 0 && ksize > 0 && ksize % 2 == 1,
        "decoder base/kernel config invalid");
  check_widths(widths, "decoder");
  check(crop == base << widths.size(),
        "decoder crop must equal base * 2^blocks, got crop " + std::to_string(crop) +
            " with base " + std::to_string(base) + " and " +
            std::to_string(widths.size()) + " blocks");
}

void PoseRegressorConfig::validate() const {
  check(points > 0 && app_dim > 0 && hidden > 0 && joints > 0,
        "pose regressor dims must be positive");
  check(dropout >= 0.0 && dropout < 1.0, "pose regressor dropout must be in [0,1)");
}

std::vector<Detection> decode_detections(const Tensor& raw) {
  check(raw.defined() && raw.rank() == 2 && raw.dim(1) == 5,
        "detection head output must be (N,5)");
  const double inv_ln2 = 1.0 / std::log(2.0);
  std::vector<Detection> out;
  out.reserve(raw.dim(0));
  for (std::size_t i = 0; i < raw.dim(0); ++i) {
    Tensor row = ad::reshape(ad::narrow(raw, 0, i, 1), {5});
    geo::BoundingBox box;
    box.cx = ad::narrow(row, 0, 0, 1);
    box.cy = ad::narrow(row, 0, 1, 1);
    box.w = ad::scale(ad::softplus(ad::narrow(row, 0, 2, 1)),
                      kPriorHeight / kPriorAspect * inv_ln2);
    box.h = ad::scale(ad::softplus(ad::narrow(row, 0, 3, 1)), kPriorHeight * inv_ln2);
    out.push_back({box, ad::narrow(row, 0, 4, 1)});
  }
  return out;
}

Detector::Detector(DetectorConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
  cfg_.validate();
  int in_ch = cfg_.in_channels;
  for (std::size_t i = 0; i < cfg_.widths.size(); ++i) {
    add_conv(params_, "detector.conv" + std::to_string(i + 1), in_ch, cfg_.widths[i],
             cfg_.ksize, rng);
    in_ch = cfg_.widths[i];
  }
  const int side = trunk_side(cfg_.resolution, cfg_.widths.size());
  const int flat = in_ch * side * side;
  const int out = cfg_.max_detections * 5;
  // Zero head: every slot starts at the prior box.
  params_.create("detector.head.weight",
                 {static_cast<std::size_t>(out), static_cast<std::size_t>(flat)},
                 std::vector<double>(static_cast<std::size_t>(out) * flat, 0.0));
  params_.create("detector.head.bias", {static_cast<std::size_t>(out)},
                 std::vector<double>(out, 0.0));
}

Tensor Detector::raw_forward(const Tensor& frame) const {
  check_frame(frame, cfg_.in_channels, cfg_.resolution, "detector");
  Tensor h = frame;
  for (std::size_t i = 0; i < cfg_.widths.size(); ++i)
    h = conv_block(h, params_, "detector.conv" + std::to_string(i + 1), 2);
  Tensor flat = ad::reshape(h, {h.size()});
  Tensor y = linear(flat, params_.at("detector.head.weight"),
                    params_.at("detector.head.bias"));
  return ad::reshape(y, {static_cast<std::size_t>(cfg_.max_detections), 5});
}

std::vector<Detection> Detector::forward(const Tensor& frame) const {
  return decode_detections(raw_forward(frame));
}

Encoder::Encoder(EncoderConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
  cfg_.validate();
  int in_ch = cfg_.in_channels;
  for (std::size_t i = 0; i < cfg_.widths.size(); ++i) {
    add_conv(params_, "encoder.conv" + std::to_string(i + 1), in_ch, cfg_.widths[i],
             cfg_.ksize, rng);
    in_ch = cfg_.widths[i];
  }
  const int side = trunk_side(cfg_.crop, cfg_.widths.size());
  const int flat = in_ch * side * side;
  const double head_std = std::sqrt(1.0 / static_cast<double>(flat));
  add_linear(params_, "encoder.app", flat, cfg_.app_dim, head_std, rng);
  add_linear(params_, "encoder.geo", flat, 3 * cfg_.points, head_std, rng);
}

LatentCode Encoder::forward(const Tensor& crop) const {
  check_frame(crop, cfg_.in_channels, cfg_.crop, "encoder");
  Tensor h = crop;
  for (std::size_t i = 0; i < cfg_.widths.size(); ++i)
    h = conv_block(h, params_, "encoder.conv" + std::to_string(i + 1), 2);
  Tensor flat = ad::reshape(h, {h.size()});
  LatentCode code;
  code.appearance =
      linear(flat, params_.at("encoder.app.weight"), params_.at("encoder.app.bias"));
  Tensor g = linear(flat, params_.at("encoder.geo.weight"), params_.at("encoder.geo.bias"));
  code.geometry = ad::reshape(g, {3, static_cast<std::size_t>(cfg_.points)});
  return code;
}

Decoder::Decoder(DecoderConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int in_dim = cfg_.app_dim + 3 * cfg_.points;
  const int fc_out = cfg_.base_channels * cfg_.base * cfg_.base;
  add_linear(params_, "decoder.fc", in_dim, fc_out,
             std::sqrt(2.0 / static_cast<double>(in_dim)), rng);
  int in_ch = cfg_.base_channels;
  for (std::size_t i = 0; i < cfg_.widths.size(); ++i) {
    add_conv(params_, "decoder.up" + std::to_string(i + 1), in_ch, cfg_.widths[i],
             cfg_.ksize, rng);
    in_ch = cfg_.widths[i];
  }
  // Small-scale output head: decoded crops start near mid gray, mask near 0.5.
  const std::size_t ow = static_cast<std::size_t>(4) * in_ch * cfg_.ksize * cfg_.ksize;
  params_.create("decoder.out.weight",
                 {4, static_cast<std::size_t>(in_ch), static_cast<std::size_t>(cfg_.ksize),
                  static_cast<std::size_t>(cfg_.ksize)},
                 gaussian_fill(ow, 0.01, rng));
  params_.create("decoder.out.bias", {4}, std::vector<double>(4, 0.0));
}

DecodedCrop Decoder::forward(const Tensor& appearance, const Tensor& geometry) const {
  check(appearance.defined() && appearance.rank() == 1 &&
            appearance.size() == static_cast<std::size_t>(cfg_.app_dim),
        "decoder appearance code must be (" + std::to_string(cfg_.app_dim) + ",)");
  check(geometry.defined() && geometry.rank() == 2 && geometry.dim(0) == 3 &&
            geometry.dim(1) == static_cast<std::size_t>(cfg_.points),
        "decoder geometry code must be (3," + std::to_string(cfg_.points) + ")");
  Tensor x = ad::concat_flat({appearance, ad::reshape(geometry, {geometry.size()})});
  Tensor h = silu(linear(x, params_.at("decoder.fc.weight"), params_.at("decoder.fc.bias")));
  h = ad::reshape(h, {static_cast<std::size_t>(cfg_.base_channels),
                      static_cast<std::size_t>(cfg_.base),
                      static_cast<std::size_t>(cfg_.base)});
  for (std::size_t i = 0; i < cfg_.widths.size(); ++i)
    h = conv_block(ad::upsample2x(h), params_, "decoder.up" + std::to_string(i + 1), 1);
  Tensor out = ad::add_channel_bias(ad::conv2d(h, params_.at("decoder.out.weight"), 1),
                                    params_.at("decoder.out.bias"));
  DecodedCrop dc;
  dc.rgb = ad::sigmoid(ad::narrow(out, 0, 0, 3));
  dc.mask = ad::reshape(ad::sigmoid(ad::narrow(out, 0, 3, 1)),
                        {out.dim(1), out.dim(2)});
  return dc;
}

PoseRegressor::PoseRegressor(PoseRegressorConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int in_dim = 3 * cfg_.points + (cfg_.use_appearance ? cfg_.app_dim : 0);
  add_linear(params_, "pose.fc1", in_dim, cfg_.hidden,
             std::sqrt(2.0 / static_cast<double>(in_dim)), rng);
  add_linear(params_, "pose.fc2", cfg_.hidden, cfg_.hidden,
             std::sqrt(2.0 / static_cast<double>(cfg_.hidden)), rng);
  const std::size_t ow = static_cast<std::size_t>(cfg_.joints) * 3 * cfg_.hidden;
  params_.create("pose.out.weight",
                 {static_cast<std::size_t>(cfg_.joints) * 3,
                  static_cast<std::size_t>(cfg_.hidden)},
                 gaussian_fill(ow, 0.01, rng));
  params_.create("pose.out.bias", {static_cast<std::size_t>(cfg_.joints) * 3},
                 std::vector<double>(static_cast<std::size_t>(cfg_.joints) * 3, 0.0));
}

Tensor PoseRegressor::forward(const LatentCode& code, Mode mode, Rng* rng) const {
  check(mode == Mode::Eval || rng != nullptr,
        "pose regressor train mode needs an rng for dropout");
  check(code.geometry.defined() && code.geometry.rank() == 2 &&
            code.geometry.dim(0) == 3 &&
            code.geometry.dim(1) == static_cast<std::size_t>(cfg_.points),
        "pose regressor geometry code must be (3," + std::to_string(cfg_.points) + ")");
  Tensor x = ad::reshape(code.geometry, {code.geometry.size()});
  if (cfg_.use_appearance) {
    check(code.appearance.defined() &&
              code.appearance.size() == static_cast<std::size_t>(cfg_.app_dim),
          "pose regressor appearance code must be (" + std::to_string(cfg_.app_dim) + ",)");
    x = ad::concat_flat({x, code.appearance});
  }
  Tensor h = silu(linear(x, params_.at("pose.fc1.weight"), params_.at("pose.fc1.bias")));
  if (mode == Mode::Train && cfg_.dropout > 0.0) h = dropout(h, cfg_.dropout, *rng);
  h = silu(linear(h, params_.at("pose.fc2.weight"), params_.at("pose.fc2.bias")));
  if (mode == Mode::Train && cfg_.dropout > 0.0) h = dropout(h, cfg_.dropout, *rng);
  Tensor y = linear(h, params_.at("pose.out.weight"), params_.at("pose.out.bias"));
  return ad::reshape(y, {static_cast<std::size_t>(cfg_.joints), 3});
}

}  // namespace scenedec::nets
