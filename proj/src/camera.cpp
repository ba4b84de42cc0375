#include "scenedec/camera.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace scenedec::geo {

bool is_rotation(const Eigen::Matrix3d& R, double tol) {
  const Eigen::Matrix3d err = R * R.transpose() - Eigen::Matrix3d::Identity();
  return err.cwiseAbs().maxCoeff() <= tol && std::abs(R.determinant() - 1.0) <= tol;
}

void CameraView::validate() const {
  check(is_rotation(R), "camera " + std::to_string(id) +
                            ": R is not a proper rotation (orthonormal, det +1)");
}

Eigen::Matrix3d relative_rotation(const CameraView& from, const CameraView& to) {
  from.validate();
  to.validate();
  return to.R * from.R.transpose();
}

ad::Tensor rotate_latent(const ad::Tensor& latent, const Eigen::Matrix3d& R) {
  check(latent.rank() == 2 && latent.dim(0) == 3,
        "rotate_latent expects a (3,K) latent, got " + ad::shape_str(latent.shape()));
  check(is_rotation(R), "rotate_latent: R is not a proper rotation");
  std::vector<double> rv(9);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) rv[i * 3 + j] = R(i, j);
  return ad::matmul(ad::Tensor::from({3, 3}, std::move(rv)), latent);
}

void save_cameras(const std::string& path, const std::vector<CameraView>& views) {
  std::ofstream out(path);
  check(out.good(), "cannot write camera file " + path);
  out << "cameras v1\n";
  out.precision(17);
  for (const auto& v : views) {
    out << "view " << v.id << "\n";
    out << "R";
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) out << " " << v.R(i, j);
    out << "\n";
    out << "t " << v.t.x() << " " << v.t.y() << " " << v.t.z() << "\n";
    out << "intrinsics " << v.intrinsics.fx << " " << v.intrinsics.fy << " "
        << v.intrinsics.cx << " " << v.intrinsics.cy << "\n";
  }
}

std::vector<CameraView> load_cameras(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "cannot read camera file " + path);
  std::string header;
  std::getline(in, header);
  check(header == "cameras v1", "camera file " + path +
                                    ": unsupported format header '" + header + "'");
  std::vector<CameraView> views;
  std::string tok;
  while (in >> tok) {
    check(tok == "view", "camera file " + path + ": expected 'view', got '" + tok + "'");
    CameraView v;
    check(static_cast<bool>(in >> v.id), "camera file " + path + ": bad view id");
    check(static_cast<bool>(in >> tok) && tok == "R", "camera file: expected 'R'");
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        check(static_cast<bool>(in >> v.R(i, j)), "camera file: truncated R");
    check(static_cast<bool>(in >> tok) && tok == "t", "camera file: expected 't'");
    for (int i = 0; i < 3; ++i)
      check(static_cast<bool>(in >> v.t(i)), "camera file: truncated t");
    check(static_cast<bool>(in >> tok) && tok == "intrinsics",
          "camera file: expected 'intrinsics'");
    check(static_cast<bool>(in >> v.intrinsics.fx >> v.intrinsics.fy >>
                            v.intrinsics.cx >> v.intrinsics.cy),
          "camera file: truncated intrinsics");
    v.validate();
    views.push_back(v);
  }
  check(!views.empty(), "camera file " + path + ": no views");
  return views;
}

}  // namespace scenedec::geo
