#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "scenedec/tensor.hpp"

namespace scenedec::geo {

struct Intrinsics {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
};

// Orthographic view: camera coordinates are R*X + t; the xy components map to
// pixels through the intrinsics, the z component is depth.
struct CameraView {
  int id = 0;
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  Intrinsics intrinsics;

  void validate() const;  // orthonormal R with det +1 (1e-9)
};

// Rotation taking `from`-camera coordinates into `to`-camera coordinates:
// R_to * R_from^T. Both inputs are validated.
Eigen::Matrix3d relative_rotation(const CameraView& from, const CameraView& to);

// R * L for a (3,K) latent point set; R must be orthonormal (1e-9).
// Differentiable with respect to L.
ad::Tensor rotate_latent(const ad::Tensor& latent, const Eigen::Matrix3d& R);

bool is_rotation(const Eigen::Matrix3d& R, double tol = 1e-9);

// Plain-text camera description file (one block per view; format header).
void save_cameras(const std::string& path, const std::vector<CameraView>& views);
std::vector<CameraView> load_cameras(const std::string& path);

}  // namespace scenedec::geo
