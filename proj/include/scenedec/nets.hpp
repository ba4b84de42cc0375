#pragma once

#include <array>
#include <string>
#include <vector>

#include "json.hpp"
#include "scenedec/rng.hpp"
#include "scenedec/tensor.hpp"
#include "scenedec/warp.hpp"

namespace scenedec::nets {

// x * sigmoid(x); smooth, never saturates to a zero derivative region.
ad::Tensor silu(const ad::Tensor& x);

// y = W x + b with x (d,), W (o,d), b (o,).
ad::Tensor linear(const ad::Tensor& x, const ad::Tensor& W, const ad::Tensor& b);

// Inverted dropout: zero with probability p, else scale by 1/(1-p).
ad::Tensor dropout(const ad::Tensor& x, double p, Rng& rng);

struct LatentCode {
  ad::Tensor appearance;  // (app_dim,)
  ad::Tensor geometry;    // (3, points)
};

struct Detection {
  geo::BoundingBox box;
  ad::Tensor z;  // unconstrained scalar depth
};

// Named parameter leaves. Entries keep registration order; names are unique.
struct ParamEntry {
  std::string name;
  ad::Tensor tensor;
};

class ParamStore {
 public:
  ad::Tensor create(const std::string& name, ad::Shape shape, std::vector<double> values);
  const std::vector<ParamEntry>& entries() const { return entries_; }
  const ad::Tensor& at(const std::string& name) const;
  std::size_t count() const;
  void zero_grads();
  void set_trainable(bool trainable);
  nlohmann::json values_to_json() const;
  // Copies values back into existing entries; shapes must match exactly.
  void values_from_json(const nlohmann::json& j);

 private:
  std::vector<ParamEntry> entries_;
};

// Per-channel affine input normalization, estimated once from training frames.
struct Whitening {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> stdev{1.0, 1.0, 1.0};
  ad::Tensor apply(const ad::Tensor& frame) const;  // frame (3,H,W)
};

Whitening compute_whitening(const std::vector<ad::Tensor>& frames);
void to_json(nlohmann::json& j, const Whitening& w);
void from_json(const nlohmann::json& j, Whitening& w);

struct DetectorConfig {
  int resolution = 64;
  int in_channels = 3;
  std::vector<int> widths = {12, 24, 48, 48};  // stride-2 blocks
  int ksize = 3;
  int max_detections = 2;
  void validate() const;
};

struct EncoderConfig {
  int crop = 32;
  int in_channels = 3;
  std::vector<int> widths = {12, 24, 48, 48};  // stride-2 blocks
  int ksize = 3;
  int app_dim = 128;
  int points = 16;
  void validate() const;
};

struct DecoderConfig {
  int crop = 32;
  int app_dim = 128;
  int points = 16;
  int base = 4;            // spatial side after the fully connected stage
  int base_channels = 48;
  std::vector<int> widths = {32, 16, 8};  // one 2x upsample per entry
  int ksize = 3;
  void validate() const;  // requires crop == base << widths.size()
};

struct PoseRegressorConfig {
  int points = 16;
  int app_dim = 128;
  bool use_appearance = false;
  int hidden = 1024;
  int joints = 5;
  double dropout = 0.5;
  void validate() const;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DetectorConfig, resolution, in_channels, widths,
                                   ksize, max_detections)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EncoderConfig, crop, in_channels, widths, ksize,
                                   app_dim, points)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DecoderConfig, crop, app_dim, points, base,
                                   base_channels, widths, ksize)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(PoseRegressorConfig, points, app_dim,
                                   use_appearance, hidden, joints, dropout)

// Maps raw head rows (N,5) = (cx, cy, w_raw, h_raw, z) to detections. Sizes go
// through softplus scaled so an all-zero row yields the prior box: centered,
// height 0.8 of the [-1,1] span, aspect 1.5.
std::vector<Detection> decode_detections(const ad::Tensor& raw);

inline constexpr double kPriorHeight = 0.8;
inline constexpr double kPriorAspect = 1.5;

// Full-frame box regressor: stride-2 conv trunk and a zero-initialized linear
// head, so the untrained output is exactly the prior box for every slot.
class Detector {
 public:
  Detector(DetectorConfig cfg, Rng& rng);
  const DetectorConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  ad::Tensor raw_forward(const ad::Tensor& frame) const;  // (N,5)
  std::vector<Detection> forward(const ad::Tensor& frame) const;

 private:
  DetectorConfig cfg_;
  ParamStore params_;
};

class Encoder {
 public:
  Encoder(EncoderConfig cfg, Rng& rng);
  const EncoderConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  LatentCode forward(const ad::Tensor& crop) const;

 private:
  EncoderConfig cfg_;
  ParamStore params_;
};

struct DecodedCrop {
  ad::Tensor rgb;   // (3,S,S) in [0,1]
  ad::Tensor mask;  // (S,S) in [0,1]
};

class Decoder {
 public:
  Decoder(DecoderConfig cfg, Rng& rng);
  const DecoderConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  DecodedCrop forward(const ad::Tensor& appearance, const ad::Tensor& geometry) const;

 private:
  DecoderConfig cfg_;
  ParamStore params_;
};

enum class Mode { Train, Eval };

class PoseRegressor {
 public:
  PoseRegressor(PoseRegressorConfig cfg, Rng& rng);
  const PoseRegressorConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  // Train mode needs the rng for dropout; eval mode is deterministic.
  ad::Tensor forward(const LatentCode& code, Mode mode, Rng* rng = nullptr) const;

 private:
  PoseRegressorConfig cfg_;
  ParamStore params_;
};

}  // namespace scenedec::nets
