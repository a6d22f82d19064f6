#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace epipre {

using Descriptor = std::vector<double>;

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  if (a > std::numbers::pi) a -= two_pi;
  return a;
}

/// Absolute circular difference of two angles, in [0, pi].
inline double angle_diff(double a, double b) {
  return std::abs(wrap_angle(a - b));
}

constexpr double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }
constexpr double rad2deg(double rad) { return rad * 180.0 / std::numbers::pi; }

/// One detected keypoint. `orientation` lives in (-pi, pi] and is measured
/// in image coordinates (x right, y down) as atan2(dy, dx).
struct Feature {
  double x = 0.0;
  double y = 0.0;
  double scale = 1.0;
  double orientation = 0.0;
  Descriptor descriptor;
};

enum class OrientationMode { kNatural, kFixed };

struct FeatureSet {
  std::string image_id;
  OrientationMode mode = OrientationMode::kNatural;
  // Only meaningful in fixed mode.
  double fixed_angle = 0.0;
  std::vector<Feature> features;

  std::size_t size() const { return features.size(); }
  bool empty() const { return features.empty(); }
  const Feature& operator[](std::size_t i) const { return features[i]; }
  std::size_t descriptor_dim() const {
    return features.empty() ? 0 : features.front().descriptor.size();
  }
};

using IndexPair = std::pair<std::uint32_t, std::uint32_t>;

enum MatchSource : std::uint8_t {
  kInXL = 1u << 0,  // Lowe ratio-test list
  kInXB = 1u << 1,  // mutual nearest neighbours with similarity weights
  kInX = 1u << 2,   // cluster-pair expansion
};

struct PutativeMatch {
  std::uint32_t i1 = 0;
  std::uint32_t i2 = 0;
  // Similarities; absent for matches that only came from clustering.
  std::optional<double> m_k;
  std::optional<double> m_k1;
  std::optional<double> m_k2;
  std::optional<double> d_r;
  std::optional<double> t_k;
  std::optional<std::uint32_t> sfm;
  std::optional<double> prob;
  std::uint8_t sources = 0;

  IndexPair key() const { return {i1, i2}; }
};

enum TwoKeypointMethod : std::uint8_t {
  kKNearest = 1u << 0,
  kRadius = 1u << 1,
  kSameCluster = 1u << 2,
};

/// Ordered pair of features in one image: main feature `p` plus neighbour `n`.
struct TwoKeypoint {
  std::uint32_t p = 0;
  std::uint32_t n = 0;
  double d = 0.0;      // |p - n| / s(p)
  double theta = 0.0;  // angle of p->n relative to the reference orientation
  std::uint8_t methods = 0;
};

struct TwoKpDescriptor {
  double n1 = 0.0;
  double n2 = 0.0;
  double dist_r = 0.0;
  double angle_d = 0.0;
  double cluster_t = 0.0;
  double min_d = 0.0;

  std::vector<double> as_vector() const {
    return {n1, n2, dist_r, angle_d, cluster_t, min_d};
  }
};

struct TwoKeypointMatch {
  TwoKeypoint tk1;
  TwoKeypoint tk2;
  TwoKpDescriptor descriptor;
  double prob = 0.0;
};

}  // namespace epipre
