#pragma once

// 2keypoints (a main feature plus a spatially close neighbour), their matches
// across the two images, the six-field match descriptor and classifier-based
// selection of the best K matches.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "epipre/dtree.hpp"
#include "epipre/errors.hpp"
#include "epipre/features.hpp"
#include "epipre/types.hpp"

namespace epipre {

inline const std::vector<std::string>& twokp_schema() {
  static const std::vector<std::string> kSchema = {
      "N1", "N2", "dist_r", "angle_d", "cluster_t", "min_d"};
  return kSchema;
}

struct TwoKeypointParams {
  std::size_t k_nearest = 5;    // K1
  double radius_scales = 5.0;   // K2, in units of s(p)
  std::size_t k_cluster = 1;    // K3
  // When set, theta is measured against this angle instead of the main
  // feature's natural orientation.
  std::optional<double> theta_reference;
};

/// All 2keypoints of one image: the union of the K1 nearest neighbours, the
/// neighbours within K2 * s(p) pixels, and the K3 nearest members of p's
/// cluster. Ordered by (p, n); neighbours at zero distance are skipped.
inline std::vector<TwoKeypoint> gen_2keypoints(
    const FeatureSet& f, const std::vector<std::uint32_t>& cluster_of,
    const TwoKeypointParams& params = {}) {
  const std::size_t n = f.size();
  if (cluster_of.size() != n) {
    throw Error("cluster assignment does not cover the feature set");
  }
  std::vector<TwoKeypoint> out;
  std::vector<std::pair<double, std::uint32_t>> by_dist;
  by_dist.reserve(n);
  std::vector<std::uint8_t> chosen(n, 0);

  for (std::uint32_t p = 0; p < n; ++p) {
    const Feature& fp = f[p];
    by_dist.clear();
    for (std::uint32_t q = 0; q < n; ++q) {
      if (q == p) continue;
      const double d = std::hypot(f[q].x - fp.x, f[q].y - fp.y);
      if (d > 0.0) by_dist.emplace_back(d, q);
    }
    std::sort(by_dist.begin(), by_dist.end());

    std::vector<std::uint32_t> touched;
    auto mark = [&](std::uint32_t q, std::uint8_t method) {
      if (!chosen[q]) touched.push_back(q);
      chosen[q] |= method;
    };
    for (std::size_t k = 0; k < std::min(params.k_nearest, by_dist.size()); ++k) {
      mark(by_dist[k].second, kKNearest);
    }
    const double radius = params.radius_scales * fp.scale;
    for (const auto& [d, q] : by_dist) {
      if (d > radius) break;
      mark(q, kRadius);
    }
    std::size_t same = 0;
    for (const auto& [d, q] : by_dist) {
      if (same >= params.k_cluster) break;
      if (cluster_of[q] == cluster_of[p]) {
        mark(q, kSameCluster);
        ++same;
      }
    }

    std::sort(touched.begin(), touched.end());
    const double ref = params.theta_reference.value_or(fp.orientation);
    for (auto q : touched) {
      TwoKeypoint tk;
      tk.p = p;
      tk.n = q;
      tk.d = std::hypot(f[q].x - fp.x, f[q].y - fp.y) / fp.scale;
      tk.theta = wrap_angle(std::atan2(f[q].y - fp.y, f[q].x - fp.x) - ref);
      tk.methods = chosen[q];
      out.push_back(tk);
      chosen[q] = 0;
    }
  }
  return out;
}

/// Geometric fields of the 2kpmd. N1/N2 are left untouched.
inline void fill_2kpmd_geometry(TwoKeypointMatch& m,
                                const std::vector<std::uint32_t>& cluster_of1,
                                const std::vector<std::uint32_t>& cluster_of2) {
  const double d1 = m.tk1.d, d2 = m.tk2.d;
  m.descriptor.dist_r = std::min(d1 / d2, d2 / d1);
  m.descriptor.angle_d = angle_diff(m.tk1.theta, m.tk2.theta);
  m.descriptor.cluster_t = (cluster_of1.at(m.tk1.p) == cluster_of1.at(m.tk1.n) &&
                            cluster_of2.at(m.tk2.p) == cluster_of2.at(m.tk2.n))
                               ? 1.0
                               : 0.0;
  m.descriptor.min_d = std::min(d1, d2);
}

inline TwoKpDescriptor compute_2kpmd(const TwoKeypointMatch& m,
                                     const std::vector<std::uint32_t>& cluster_of1,
                                     const std::vector<std::uint32_t>& cluster_of2) {
  TwoKeypointMatch copy = m;
  fill_2kpmd_geometry(copy, cluster_of1, cluster_of2);
  return copy.descriptor;
}

/// Every pair (tk1, tk2) whose main features and neighbour features are both
/// putative matches in X. N1 (N2) counts the emitted matches containing tk1
/// (tk2). Output is ordered by (tk1 position, tk2 position).
inline std::vector<TwoKeypointMatch> match_2keypoints(
    const std::vector<PutativeMatch>& x, const std::vector<TwoKeypoint>& t1,
    const std::vector<TwoKeypoint>& t2,
    const std::vector<std::uint32_t>& cluster_of1,
    const std::vector<std::uint32_t>& cluster_of2) {
  std::vector<TwoKeypointMatch> out;
  if (x.empty() || t1.empty() || t2.empty()) return out;

  std::uint32_t max_i1 = 0;
  for (const auto& m : x) max_i1 = std::max(max_i1, m.i1);
  for (const auto& tk : t1) max_i1 = std::max({max_i1, tk.p, tk.n});
  std::vector<std::vector<std::uint32_t>> partners(max_i1 + 1);
  for (const auto& m : x) partners[m.i1].push_back(m.i2);
  for (auto& v : partners) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  }

  auto key = [](std::uint32_t p, std::uint32_t n) {
    return (static_cast<std::uint64_t>(p) << 32) | n;
  };
  std::unordered_map<std::uint64_t, std::uint32_t> index2;
  index2.reserve(t2.size());
  for (std::uint32_t j = 0; j < t2.size(); ++j) index2.emplace(key(t2[j].p, t2[j].n), j);

  std::vector<std::pair<std::uint32_t, std::uint32_t>> hits;
  std::vector<std::uint32_t> count2(t2.size(), 0);
  for (std::uint32_t i = 0; i < t1.size(); ++i) {
    const auto& pp = partners[t1[i].p];
    const auto& np = partners[t1[i].n];
    if (pp.empty() || np.empty()) continue;
    const std::size_t first = hits.size();
    for (auto p2 : pp) {
      for (auto n2 : np) {
        if (p2 == n2) continue;
        const auto it = index2.find(key(p2, n2));
        if (it != index2.end()) hits.emplace_back(i, it->second);
      }
    }
    std::sort(hits.begin() + static_cast<std::ptrdiff_t>(first), hits.end());
    for (std::size_t h = first; h < hits.size(); ++h) ++count2[hits[h].second];
  }

  out.reserve(hits.size());
  std::size_t h = 0;
  while (h < hits.size()) {
    std::size_t e = h;
    while (e < hits.size() && hits[e].first == hits[h].first) ++e;
    for (std::size_t k = h; k < e; ++k) {
      TwoKeypointMatch m;
      m.tk1 = t1[hits[k].first];
      m.tk2 = t2[hits[k].second];
      m.descriptor.n1 = static_cast<double>(e - h);
      m.descriptor.n2 = static_cast<double>(count2[hits[k].second]);
      fill_2kpmd_geometry(m, cluster_of1, cluster_of2);
      out.push_back(m);
    }
    h = e;
  }
  return out;
}

/// Scores every match with the 2kpmd classifier and keeps the best `k`:
/// descending probability, then ascending N1 + N2, then (p1, n1, p2, n2).
inline std::vector<TwoKeypointMatch> rank_2kp(std::vector<TwoKeypointMatch> matches,
                                              const TreeModel& model,
                                              std::size_t k = 100) {
  check_schema(model, twokp_schema());
  for (auto& m : matches) m.prob = predict_proba(model, m.descriptor.as_vector());
  auto order_key = [](const TwoKeypointMatch& m) {
    return std::tuple(-m.prob, m.descriptor.n1 + m.descriptor.n2, m.tk1.p, m.tk1.n,
                      m.tk2.p, m.tk2.n);
  };
  const std::size_t keep = std::min(k, matches.size());
  std::partial_sort(matches.begin(), matches.begin() + static_cast<std::ptrdiff_t>(keep),
                    matches.end(), [&](const auto& a, const auto& b) {
                      return order_key(a) < order_key(b);
                    });
  matches.resize(keep);
  return matches;
}

inline void write_2kp_csv(const std::vector<TwoKeypointMatch>& matches,
                          std::ostream& out) {
  out << "p1,n1,p2,n2,N1,N2,dist_r,angle_d,cluster_t,min_d,prob\n";
  std::string line;
  for (const auto& m : matches) {
    line = std::to_string(m.tk1.p) + ',' + std::to_string(m.tk1.n) + ',' +
           std::to_string(m.tk2.p) + ',' + std::to_string(m.tk2.n);
    for (double v : {m.descriptor.n1, m.descriptor.n2, m.descriptor.dist_r,
                     m.descriptor.angle_d, m.descriptor.cluster_t,
                     m.descriptor.min_d, m.prob}) {
      line += ',';
      detail::append_double(line, v);
    }
    out << line << '\n';
  }
}

}  // namespace epipre
