#pragma once

// Two-view geometry: Sampson distance, linear fundamental-matrix solvers and
// the local-similarity expansion that lets two feature matches stand in for
// eight point correspondences.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Dense>
#include <Eigen/SVD>

#include "epipre/errors.hpp"
#include "epipre/types.hpp"

namespace epipre {

struct PointPair {
  Eigen::Vector2d x1;
  Eigen::Vector2d x2;
};

/// Rank-2 fundamental matrix with unit Frobenius norm whose largest-magnitude
/// entry is positive. Construction enforces all three properties.
class FundamentalMatrix {
 public:
  FundamentalMatrix() : m_(Eigen::Matrix3d::Zero()) { m_(2, 2) = 1.0; }

  explicit FundamentalMatrix(const Eigen::Matrix3d& raw) : m_(raw) {
    if (!m_.allFinite()) {
      throw DegenerateConfiguration("fundamental matrix has non-finite entries");
    }
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(m_, Eigen::ComputeFullU |
                                                  Eigen::ComputeFullV);
    Eigen::Vector3d s = svd.singularValues();
    if (s(0) <= 0.0) {
      throw DegenerateConfiguration("fundamental matrix is zero");
    }
    s(2) = 0.0;
    m_ = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
    canonicalize();
  }

  const Eigen::Matrix3d& matrix() const { return m_; }
  double operator()(int r, int c) const { return m_(r, c); }

  FundamentalMatrix transposed() const {
    FundamentalMatrix t;
    t.m_ = m_.transpose();
    return t;
  }

  std::array<double, 9> row_major() const {
    std::array<double, 9> out{};
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) out[3 * r + c] = m_(r, c);
    }
    return out;
  }

 private:
  void canonicalize() {
    m_ /= m_.norm();
    Eigen::Index r = 0, c = 0;
    m_.cwiseAbs().maxCoeff(&r, &c);
    if (m_(r, c) < 0.0) m_ = -m_;
  }

  Eigen::Matrix3d m_;
};

/// Frobenius distance between two canonical matrices.
inline double frobenius_distance(const FundamentalMatrix& a,
                                 const FundamentalMatrix& b) {
  return (a.matrix() - b.matrix()).norm();
}

/// First-order geometric error of a correspondence under F, in pixels (the
/// square root of the Sampson error). Returns +infinity when all four
/// epipolar-line partials vanish.
inline double sampson_distance(const Eigen::Matrix3d& f, const PointPair& p) {
  const Eigen::Vector3d x1(p.x1.x(), p.x1.y(), 1.0);
  const Eigen::Vector3d x2(p.x2.x(), p.x2.y(), 1.0);
  const Eigen::Vector3d fx1 = f * x1;
  const Eigen::Vector3d ftx2 = f.transpose() * x2;
  const double num = x2.dot(fx1);
  const double den = fx1(0) * fx1(0) + fx1(1) * fx1(1) + ftx2(0) * ftx2(0) +
                     ftx2(1) * ftx2(1);
  if (den <= 0.0) return std::numeric_limits<double>::infinity();
  return std::abs(num) / std::sqrt(den);
}

inline double sampson_distance(const FundamentalMatrix& f, const PointPair& p) {
  return sampson_distance(f.matrix(), p);
}

namespace detail {

/// Similarity transform moving the centroid to the origin and the mean
/// distance to sqrt(2).
inline Eigen::Matrix3d hartley_transform(std::span<const Eigen::Vector2d> pts) {
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  for (const auto& p : pts) centroid += p;
  centroid /= static_cast<double>(pts.size());
  double mean_dist = 0.0;
  for (const auto& p : pts) mean_dist += (p - centroid).norm();
  mean_dist /= static_cast<double>(pts.size());
  if (!(mean_dist > 0.0)) {
    throw DegenerateConfiguration("all points coincide");
  }
  const double s = std::sqrt(2.0) / mean_dist;
  Eigen::Matrix3d t;
  t << s, 0.0, -s * centroid.x(), 0.0, s, -s * centroid.y(), 0.0, 0.0, 1.0;
  return t;
}

struct NormalizedSystem {
  Eigen::MatrixXd design;  // one row per correspondence, F row-major
  Eigen::Matrix3d t1;
  Eigen::Matrix3d t2;
};

inline NormalizedSystem build_design(std::span<const PointPair> pairs) {
  std::vector<Eigen::Vector2d> p1, p2;
  p1.reserve(pairs.size());
  p2.reserve(pairs.size());
  for (const auto& pp : pairs) {
    if (!pp.x1.allFinite() || !pp.x2.allFinite()) {
      throw DegenerateConfiguration("non-finite point coordinates");
    }
    p1.push_back(pp.x1);
    p2.push_back(pp.x2);
  }
  NormalizedSystem sys;
  sys.t1 = hartley_transform(p1);
  sys.t2 = hartley_transform(p2);
  sys.design.resize(static_cast<Eigen::Index>(pairs.size()), 9);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const Eigen::Vector3d a = sys.t1 * p1[i].homogeneous();
    const Eigen::Vector3d b = sys.t2 * p2[i].homogeneous();
    const auto r = static_cast<Eigen::Index>(i);
    sys.design.row(r) << b(0) * a(0), b(0) * a(1), b(0), b(1) * a(0),
        b(1) * a(1), b(1), a(0), a(1), 1.0;
  }
  return sys;
}

inline Eigen::Matrix3d reshape_row_major(const Eigen::VectorXd& v) {
  Eigen::Matrix3d m;
  m << v(0), v(1), v(2), v(3), v(4), v(5), v(6), v(7), v(8);
  return m;
}

// Relative singular-value floor below which the design matrix is treated as
// rank deficient.
inline constexpr double kRankTolerance = 1e-9;

/// Real roots of a*x^3 + b*x^2 + c*x + d, Newton-polished.
inline std::vector<double> real_cubic_roots(double a, double b, double c,
                                            double d) {
  std::vector<double> roots;
  const double scale = std::max({std::abs(a), std::abs(b), std::abs(c),
                                 std::abs(d)});
  if (scale == 0.0) return roots;
  if (std::abs(a) < 1e-12 * scale) {
    if (std::abs(b) < 1e-12 * scale) {
      if (std::abs(c) > 0.0) roots.push_back(-d / c);
      return roots;
    }
    const double disc = c * c - 4.0 * b * d;
    if (disc < 0.0) return roots;
    const double q = -0.5 * (c + std::copysign(std::sqrt(disc), c));
    roots.push_back(q / b);
    if (q != 0.0) roots.push_back(d / q);
    return roots;
  }
  const double bn = b / a, cn = c / a, dn = d / a;
  const double q = (bn * bn - 3.0 * cn) / 9.0;
  const double r = (2.0 * bn * bn * bn - 9.0 * bn * cn + 27.0 * dn) / 54.0;
  const double q3 = q * q * q;
  if (r * r < q3) {
    const double theta = std::acos(std::clamp(r / std::sqrt(q3), -1.0, 1.0));
    const double sq = -2.0 * std::sqrt(q);
    for (int k = 0; k < 3; ++k) {
      roots.push_back(sq * std::cos((theta + 2.0 * std::numbers::pi * k) / 3.0) -
                      bn / 3.0);
    }
  } else {
    const double big_a =
        -std::copysign(std::cbrt(std::abs(r) + std::sqrt(r * r - q3)), r);
    const double big_b = big_a != 0.0 ? q / big_a : 0.0;
    roots.push_back(big_a + big_b - bn / 3.0);
  }
  for (double& x : roots) {
    for (int it = 0; it < 3; ++it) {
      const double f = ((x + bn) * x + cn) * x + dn;
      const double df = (3.0 * x + 2.0 * bn) * x + cn;
      if (df == 0.0) break;
      x -= f / df;
    }
  }
  return roots;
}

}  // namespace detail

/// Normalized 8-point algorithm on n >= 8 correspondences.
inline FundamentalMatrix eight_point(std::span<const PointPair> pairs) {
  if (pairs.size() < 8) {
    throw DegenerateConfiguration("eight_point needs at least 8 pairs");
  }
  const auto sys = detail::build_design(pairs);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(sys.design, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  if (s.size() < 8 || s(7) <= detail::kRankTolerance * s(0)) {
    throw DegenerateConfiguration("design matrix rank below 8");
  }
  const Eigen::Matrix3d fn = detail::reshape_row_major(svd.matrixV().col(8));
  // Rank-2 projection happens in normalized coordinates before undoing the
  // conditioning transforms.
  const FundamentalMatrix rank2(fn);
  return FundamentalMatrix(sys.t2.transpose() * rank2.matrix() * sys.t1);
}

/// Minimal 7-point solver. Returns 1 to 3 rank-2 solutions.
inline std::vector<FundamentalMatrix> seven_point(
    std::span<const PointPair> pairs) {
  if (pairs.size() != 7) {
    throw DegenerateConfiguration("seven_point needs exactly 7 pairs");
  }
  const auto sys = detail::build_design(pairs);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(sys.design, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  if (s(6) <= detail::kRankTolerance * s(0)) {
    throw DegenerateConfiguration("design matrix rank below 7");
  }
  const Eigen::Matrix3d f1 = detail::reshape_row_major(svd.matrixV().col(7));
  const Eigen::Matrix3d f2 = detail::reshape_row_major(svd.matrixV().col(8));

  // det(l*F1 + (1-l)*F2) is cubic in l; recover it from four samples.
  auto det_at = [&](double l) { return (l * f1 + (1.0 - l) * f2).determinant(); };
  const double p0 = det_at(0.0), p1 = det_at(1.0), pm1 = det_at(-1.0),
               p2 = det_at(2.0);
  const double d = p0;
  const double b = 0.5 * (p1 + pm1) - d;
  const double a = (p2 - 4.0 * b - d - (p1 - pm1)) / 6.0;
  const double c = 0.5 * (p1 - pm1) - a;

  std::vector<FundamentalMatrix> out;
  for (double l : detail::real_cubic_roots(a, b, c, d)) {
    const Eigen::Matrix3d fn = l * f1 + (1.0 - l) * f2;
    if (fn.norm() == 0.0) continue;
    const Eigen::Matrix3d f = sys.t2.transpose() * fn * sys.t1;
    try {
      out.emplace_back(f);
    } catch (const DegenerateConfiguration&) {
    }
  }
  if (out.empty()) {
    throw DegenerateConfiguration("seven_point produced no real solution");
  }
  return out;
}

/// Generates the center correspondence plus three virtual correspondences
/// predicted by the local similarity between two matched features. Image-1
/// offsets are `offset_scales * s(p1)` along the feature orientation, its
/// perpendicular and its negation.
inline std::array<PointPair, 4> expand_match_similarity(
    const Feature& p1, const Feature& p2, double offset_scales = 5.0) {
  if (!(p1.scale > 0.0) || !(p2.scale > 0.0)) {
    throw InvalidFeature("feature scale must be positive");
  }
  if (!std::isfinite(p1.orientation) || !std::isfinite(p2.orientation)) {
    throw InvalidFeature("feature orientation must be finite");
  }
  const Eigen::Vector2d c1(p1.x, p1.y);
  const Eigen::Vector2d c2(p2.x, p2.y);
  const Eigen::Rotation2Dd r1(p1.orientation);
  const Eigen::Rotation2Dd r2(p2.orientation);
  static const std::array<Eigen::Vector2d, 3> kUnits = {
      Eigen::Vector2d(1.0, 0.0), Eigen::Vector2d(0.0, 1.0),
      Eigen::Vector2d(-1.0, 0.0)};

  std::array<PointPair, 4> out;
  out[0] = {c1, c2};
  for (std::size_t k = 0; k < kUnits.size(); ++k) {
    out[k + 1] = {c1 + offset_scales * p1.scale * (r1 * kUnits[k]),
                  c2 + offset_scales * p2.scale * (r2 * kUnits[k])};
  }
  return out;
}

/// Rough F from two feature matches (a1<->a2, b1<->b2) of each of two
/// 2keypoint matches: the 4 real matches expanded to 16 correspondences.
inline FundamentalMatrix f_from_two_2kp(const TwoKeypointMatch& a,
                                        const TwoKeypointMatch& b,
                                        const FeatureSet& f1,
                                        const FeatureSet& f2,
                                        double offset_scales = 5.0) {
  auto shares = [](const TwoKeypoint& u, const TwoKeypoint& v) {
    return u.p == v.p || u.p == v.n || u.n == v.p || u.n == v.n;
  };
  if (shares(a.tk1, b.tk1) || shares(a.tk2, b.tk2)) {
    throw DegenerateConfiguration("2keypoint matches share a feature");
  }
  std::vector<PointPair> pairs;
  pairs.reserve(16);
  for (const auto* m : {&a, &b}) {
    for (const auto& [i1, i2] : {std::pair{m->tk1.p, m->tk2.p},
                                 std::pair{m->tk1.n, m->tk2.n}}) {
      const auto ex = expand_match_similarity(f1[i1], f2[i2], offset_scales);
      pairs.insert(pairs.end(), ex.begin(), ex.end());
    }
  }
  return eight_point(pairs);
}

/// Pinhole camera mapping a world point X to K (R X + t).
struct CameraModel {
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  Eigen::Vector3d center() const { return -R.transpose() * t; }

  /// Depth of X along the optical axis.
  double depth(const Eigen::Vector3d& X) const { return (R * X + t).z(); }

  Eigen::Vector2d project(const Eigen::Vector3d& X) const {
    return (K * (R * X + t)).hnormalized();
  }

  void validate() const {
    if (std::abs(R.determinant() - 1.0) > 1e-10 ||
        !(R.transpose() * R).isApprox(Eigen::Matrix3d::Identity(), 1e-10)) {
      throw Error("camera rotation is not orthonormal");
    }
    if (K(1, 0) != 0.0 || K(2, 0) != 0.0 || K(2, 1) != 0.0 || K(0, 0) <= 0.0 ||
        K(1, 1) <= 0.0 || K(2, 2) <= 0.0) {
      throw Error("camera intrinsics must be upper triangular, positive diagonal");
    }
  }
};

inline Eigen::Matrix3d cross_matrix(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

inline FundamentalMatrix fundamental_from_cameras(const CameraModel& c1,
                                                  const CameraModel& c2) {
  c1.validate();
  c2.validate();
  const double baseline = (c1.center() - c2.center()).norm();
  const double extent = std::max({1.0, c1.center().norm(), c2.center().norm()});
  if (baseline <= 1e-12 * extent) {
    throw NoEpipolarGeometry("cameras share the same center");
  }
  const Eigen::Matrix3d r_rel = c2.R * c1.R.transpose();
  const Eigen::Vector3d t_rel = c2.t - r_rel * c1.t;
  const Eigen::Matrix3d f = c2.K.inverse().transpose() * cross_matrix(t_rel) *
                            r_rel * c1.K.inverse();
  return FundamentalMatrix(f);
}

}  // namespace epipre
