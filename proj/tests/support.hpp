#pragma once

// Shared fixtures for the unit tests: random camera pairs, feature builders
// and a few brute-force helpers that deliberately avoid library code.

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "epipre/geometry.hpp"
#include "epipre/types.hpp"

namespace testutil {

using epipre::CameraModel;
using epipre::Descriptor;
using epipre::Feature;
using epipre::FeatureSet;
using epipre::PointPair;

inline Eigen::Matrix3d random_rotation(std::mt19937_64& rng, double max_angle = 0.4) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::Vector3d axis(u(rng), u(rng), u(rng));
  if (axis.norm() < 1e-3) axis = Eigen::Vector3d::UnitY();
  return Eigen::AngleAxisd(max_angle * u(rng), axis.normalized()).toRotationMatrix();
}

inline Eigen::Matrix3d intrinsics(double f = 800.0, double cx = 512.0, double cy = 384.0) {
  Eigen::Matrix3d K;
  K << f, 0.0, cx, 0.0, f, cy, 0.0, 0.0, 1.0;
  return K;
}

struct CameraPair {
  CameraModel c1, c2;
};

/// Camera 1 at the origin; camera 2 displaced by up to ~2 units and rotated
/// slightly, both looking at the slab z in [4, 8].
inline CameraPair random_camera_pair(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> f(600.0, 1200.0);
  CameraPair p;
  p.c1.K = intrinsics(f(rng), 500.0 + 50.0 * u(rng), 380.0 + 40.0 * u(rng));
  p.c2.K = intrinsics(f(rng), 500.0 + 50.0 * u(rng), 380.0 + 40.0 * u(rng));
  p.c2.R = random_rotation(rng, 0.3);
  Eigen::Vector3d center(1.5 * u(rng), 0.5 * u(rng), 0.3 * u(rng));
  if (center.norm() < 0.3) center.x() += 0.5;
  p.c2.t = -p.c2.R * center;
  return p;
}

inline Eigen::Vector3d random_point(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  return {2.0 * u(rng), 1.5 * u(rng), 6.0 + 2.0 * u(rng)};
}

inline std::vector<PointPair> project_pairs(const CameraPair& cams, std::size_t n,
                                            std::mt19937_64& rng) {
  std::vector<PointPair> out;
  while (out.size() < n) {
    const Eigen::Vector3d X = random_point(rng);
    if (cams.c1.depth(X) <= 0.1 || cams.c2.depth(X) <= 0.1) continue;
    out.push_back({cams.c1.project(X), cams.c2.project(X)});
  }
  return out;
}

/// Canonical form computed independently of the library: unit Frobenius
/// norm, largest-magnitude entry positive.
inline Eigen::Matrix3d canonical(const Eigen::Matrix3d& m) {
  Eigen::Matrix3d c = m / m.norm();
  Eigen::Index r = 0, k = 0;
  c.cwiseAbs().maxCoeff(&r, &k);
  return c(r, k) < 0.0 ? Eigen::Matrix3d(-c) : c;
}

/// F via the camera matrices: F = [e2]x P2 P1^+ (pseudo-inverse route).
inline Eigen::Matrix3d f_from_projections(const CameraModel& a, const CameraModel& b) {
  Eigen::Matrix<double, 3, 4> P1, P2;
  P1 << a.K * a.R, a.K * a.t;
  P2 << b.K * b.R, b.K * b.t;
  const Eigen::Matrix<double, 4, 3> pinv =
      P1.transpose() * (P1 * P1.transpose()).inverse();
  Eigen::Vector4d C1;
  C1 << a.center(), 1.0;
  const Eigen::Vector3d e2 = P2 * C1;
  Eigen::Matrix3d ex;
  ex << 0.0, -e2.z(), e2.y(), e2.z(), 0.0, -e2.x(), -e2.y(), e2.x(), 0.0;
  return ex * P2 * pinv;
}

inline Descriptor random_descriptor(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  Descriptor d(dim);
  double n = 0.0;
  for (auto& v : d) {
    v = g(rng);
    n += v * v;
  }
  for (auto& v : d) v /= std::sqrt(n);
  return d;
}

inline Feature feature(double x, double y, double scale, double orientation,
                       Descriptor d = {1.0, 0.0}) {
  Feature f;
  f.x = x;
  f.y = y;
  f.scale = scale;
  f.orientation = orientation;
  f.descriptor = std::move(d);
  return f;
}

inline FeatureSet feature_set(std::vector<Feature> feats,
                              epipre::OrientationMode mode = epipre::OrientationMode::kNatural,
                              double angle = 0.0) {
  FeatureSet s;
  s.image_id = "test";
  s.mode = mode;
  s.fixed_angle = angle;
  s.features = std::move(feats);
  return s;
}

/// Plain dot product, used as an independent similarity oracle.
inline double dot(const Descriptor& a, const Descriptor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace testutil
