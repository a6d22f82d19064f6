#pragma once

// Baseline putative correspondences: the Lowe ratio-test list X_L scored by
// the angular distance ratio, the mutual-nearest-neighbour list X_B scored by
// the similarity weight, and the relative roll estimate derived from both.

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "epipre/errors.hpp"
#include "epipre/features.hpp"
#include "epipre/types.hpp"

namespace epipre {

/// acos(m_k) / acos(m_k2), in [0, 1]. Two perfect similarities give 1.
inline double distance_ratio(double m_k, double m_k2) {
  m_k = std::clamp(m_k, -1.0, 1.0);
  m_k2 = std::clamp(m_k2, -1.0, 1.0);
  const double den = std::acos(m_k2);
  if (den == 0.0) return 1.0;
  return std::clamp(std::acos(m_k) / den, 0.0, 1.0);
}

/// (1 - e^-m_k)^2 (1 - m_k1/m_k) (1 - m_k2/m_k); zero when m_k <= 0.
inline double similarity_weight(double m_k, double m_k1, double m_k2) {
  if (!(m_k > 0.0)) return 0.0;
  m_k = std::clamp(m_k, 1e-6, 1.0);
  // Negative runner-up similarities carry no more evidence than orthogonal
  // ones; clamping keeps every factor in [0, 1].
  m_k1 = std::clamp(m_k1, 0.0, m_k);
  m_k2 = std::clamp(m_k2, 0.0, m_k);
  const double a = 1.0 - std::exp(-m_k);
  return a * a * (1.0 - m_k1 / m_k) * (1.0 - m_k2 / m_k);
}

/// Nearest-two search of every feature of `from` against `to`.
inline std::vector<NearestTwo> nearest_two_table(const FeatureSet& from,
                                                 const FeatureSet& to) {
  std::vector<NearestTwo> out;
  out.reserve(from.size());
  for (const auto& f : from.features) out.push_back(nearest_two(f.descriptor, to));
  return out;
}

inline std::vector<PutativeMatch> lowe_matches(
    const std::vector<NearestTwo>& forward, double ratio_max = 0.9) {
  std::vector<PutativeMatch> out;
  for (std::uint32_t i = 0; i < forward.size(); ++i) {
    const auto& nn = forward[i];
    const double dr = distance_ratio(nn.best, nn.second);
    if (dr > ratio_max) continue;
    PutativeMatch m;
    m.i1 = i;
    m.i2 = nn.index;
    m.m_k = nn.best;
    m.m_k2 = nn.second;
    m.d_r = dr;
    m.sources = kInXL;
    out.push_back(m);
  }
  return out;
}

/// X_L: nearest neighbour of every image-1 feature, kept when d_r <= ratio_max.
inline std::vector<PutativeMatch> lowe_matches(const FeatureSet& f1,
                                               const FeatureSet& f2,
                                               double ratio_max = 0.9) {
  if (f1.empty() || f2.empty()) throw Error("lowe_matches on empty feature set");
  return lowe_matches(nearest_two_table(f1, f2), ratio_max);
}

inline std::vector<PutativeMatch> blogs_matches(
    const std::vector<NearestTwo>& forward,
    const std::vector<NearestTwo>& backward) {
  std::vector<PutativeMatch> out;
  for (std::uint32_t i = 0; i < forward.size(); ++i) {
    const auto& fw = forward[i];
    const auto& bw = backward[fw.index];
    if (bw.index != i) continue;
    PutativeMatch m;
    m.i1 = i;
    m.i2 = fw.index;
    m.m_k = fw.best;
    m.m_k1 = bw.second;
    m.m_k2 = fw.second;
    m.t_k = similarity_weight(fw.best, bw.second, fw.second);
    m.sources = kInXB;
    out.push_back(m);
  }
  return out;
}

/// X_B: mutual nearest neighbours, each carrying its similarity weight t_k.
inline std::vector<PutativeMatch> blogs_matches(const FeatureSet& f1,
                                                const FeatureSet& f2) {
  if (f1.empty() || f2.empty()) throw Error("blogs_matches on empty feature set");
  return blogs_matches(nearest_two_table(f1, f2), nearest_two_table(f2, f1));
}

struct RollParams {
  double bandwidth_deg = 5.0;
  double grid_deg = 1.0;
};

struct RollEstimate {
  double alpha_exp = 0.0;  // radians, (-pi, pi]
  double peak = 0.0;
  std::size_t samples = 0;
};

/// Wrapped-Gaussian kernel density over orientation differences, evaluated on
/// a regular grid. Ties resolve to the smallest absolute angle, then the
/// positive one.
inline RollEstimate estimate_roll_from_angles(const std::vector<double>& deltas,
                                              const RollParams& params = {}) {
  if (deltas.empty()) throw RollUnavailable("no matches for roll estimation");
  const double h = deg2rad(params.bandwidth_deg);
  const double inv_2h2 = 1.0 / (2.0 * h * h);
  const int steps = static_cast<int>(std::lround(360.0 / params.grid_deg));
  const double two_pi = 2.0 * std::numbers::pi;

  RollEstimate best;
  best.samples = deltas.size();
  bool have = false;
  for (int k = -steps / 2 + 1; k <= steps / 2; ++k) {
    const double grid = deg2rad(k * params.grid_deg);
    double density = 0.0;
    for (double delta : deltas) {
      const double d = wrap_angle(grid - delta);
      density += std::exp(-d * d * inv_2h2) +
                 std::exp(-(d - two_pi) * (d - two_pi) * inv_2h2) +
                 std::exp(-(d + two_pi) * (d + two_pi) * inv_2h2);
    }
    const bool better =
        !have || density > best.peak ||
        (density == best.peak &&
         (std::abs(grid) < std::abs(best.alpha_exp) ||
          (std::abs(grid) == std::abs(best.alpha_exp) && grid > 0.0)));
    if (better) {
      best.peak = density;
      best.alpha_exp = grid;
      have = true;
    }
  }
  return best;
}

/// Roll between the images from X_L and X_B pooled and deduplicated by index
/// pair, each pair weighted once.
inline RollEstimate estimate_roll(const std::vector<PutativeMatch>& matches,
                                  const FeatureSet& f1, const FeatureSet& f2,
                                  const RollParams& params = {}) {
  std::map<IndexPair, double> unique;
  for (const auto& m : matches) {
    unique.emplace(m.key(), wrap_angle(f2[m.i2].orientation -
                                       f1[m.i1].orientation));
  }
  std::vector<double> deltas;
  deltas.reserve(unique.size());
  for (const auto& [key, delta] : unique) deltas.push_back(delta);
  return estimate_roll_from_angles(deltas, params);
}

}  // namespace epipre
