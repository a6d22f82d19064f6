#pragma once

// Agglomerative clustering of fixed-orientation descriptors, bidirectional
// closest-cluster matching and expansion of cluster pairs into putative
// matches (the set X).

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <vector>

#include "epipre/errors.hpp"
#include "epipre/features.hpp"
#include "epipre/types.hpp"

namespace epipre {

struct Cluster {
  std::vector<std::uint32_t> members;  // ascending
  Descriptor representative;           // unit length
};

/// Per-coordinate median of the member descriptors, renormalized. Even-sized
/// clusters use the midpoint of the two central values.
inline Descriptor median_descriptor(const FeatureSet& f,
                                    const std::vector<std::uint32_t>& members) {
  const std::size_t dim = f.descriptor_dim();
  Descriptor rep(dim);
  std::vector<double> column(members.size());
  const std::size_t mid = members.size() / 2;
  for (std::size_t d = 0; d < dim; ++d) {
    for (std::size_t k = 0; k < members.size(); ++k) {
      column[k] = f[members[k]].descriptor[d];
    }
    std::nth_element(column.begin(), column.begin() + mid, column.end());
    double med = column[mid];
    if (members.size() % 2 == 0) {
      const double lower = *std::max_element(column.begin(), column.begin() + mid);
      med = 0.5 * (lower + med);
    }
    rep[d] = med;
  }
  normalize_descriptor(rep);
  return rep;
}

/// Merges the two clusters whose representatives are most similar until the
/// best similarity drops below `stop_sim`. Ties merge the pair with the
/// smallest (min member index) key first. Clusters come back ordered by their
/// smallest member.
inline std::vector<Cluster> agglomerative_cluster(const FeatureSet& f,
                                                  double stop_sim = 0.85) {
  if (f.mode != OrientationMode::kFixed) {
    throw ModeError("clustering requires fixed-orientation descriptors");
  }
  const std::size_t n = f.size();
  // Slot i always holds the cluster whose smallest member is i.
  std::vector<Cluster> slots(n);
  std::vector<char> alive(n, 1);
  for (std::uint32_t i = 0; i < n; ++i) {
    slots[i].members = {i};
    slots[i].representative = f[i].descriptor;
  }
  constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();
  std::vector<double> best_sim(n, -std::numeric_limits<double>::infinity());
  std::vector<std::uint32_t> best_j(n, kNone);

  auto sim = [&](std::uint32_t a, std::uint32_t b) {
    return ncc(slots[a].representative, slots[b].representative);
  };
  auto rescan = [&](std::uint32_t i) {
    best_sim[i] = -std::numeric_limits<double>::infinity();
    best_j[i] = kNone;
    for (std::uint32_t j = 0; j < n; ++j) {
      if (j == i || !alive[j]) continue;
      const double s = sim(i, j);
      if (s > best_sim[i]) {  // strict: lower j wins ties
        best_sim[i] = s;
        best_j[i] = j;
      }
    }
  };
  for (std::uint32_t i = 0; i < n; ++i) rescan(i);

  while (true) {
    double top = -std::numeric_limits<double>::infinity();
    std::uint32_t a = kNone, b = kNone;
    for (std::uint32_t i = 0; i < n; ++i) {
      if (!alive[i] || best_j[i] == kNone) continue;
      const std::uint32_t lo = std::min(i, best_j[i]);
      const std::uint32_t hi = std::max(i, best_j[i]);
      if (best_sim[i] > top ||
          (best_sim[i] == top && std::pair{lo, hi} < std::pair{a, b})) {
        top = best_sim[i];
        a = lo;
        b = hi;
      }
    }
    if (a == kNone || top < stop_sim) break;

    auto& merged = slots[a].members;
    merged.insert(merged.end(), slots[b].members.begin(), slots[b].members.end());
    std::sort(merged.begin(), merged.end());
    slots[a].representative = median_descriptor(f, merged);
    slots[b] = Cluster{};
    alive[b] = 0;

    rescan(a);
    for (std::uint32_t k = 0; k < n; ++k) {
      if (!alive[k] || k == a) continue;
      if (best_j[k] == a || best_j[k] == b) {
        rescan(k);
        continue;
      }
      const double s = sim(k, a);
      if (s > best_sim[k] || (s == best_sim[k] && a < best_j[k])) {
        best_sim[k] = s;
        best_j[k] = a;
      }
    }
  }

  std::vector<Cluster> out;
  for (std::uint32_t i = 0; i < n; ++i) {
    if (alive[i]) out.push_back(std::move(slots[i]));
  }
  return out;
}

/// Cluster position for every feature index.
inline std::vector<std::uint32_t> cluster_labels(const std::vector<Cluster>& clusters,
                                                 std::size_t feature_count) {
  std::vector<std::uint32_t> labels(feature_count,
                                    std::numeric_limits<std::uint32_t>::max());
  for (std::uint32_t c = 0; c < clusters.size(); ++c) {
    for (auto m : clusters[c].members) labels.at(m) = c;
  }
  return labels;
}

enum PairDirection : std::uint8_t {
  kForward = 1u << 0,   // image-1 cluster chose its closest image-2 cluster
  kBackward = 1u << 1,  // image-2 cluster chose its closest image-1 cluster
};

struct ClusterPair {
  std::uint32_t c1 = 0;
  std::uint32_t c2 = 0;
  std::uint8_t directions = 0;
};

struct ClusterPairing {
  std::vector<ClusterPair> pairs;  // ordered by (c1, c2)
};

namespace detail {

inline std::uint32_t closest_cluster(const Descriptor& rep,
                                     const std::vector<Cluster>& others) {
  std::uint32_t best = 0;
  double best_s = -std::numeric_limits<double>::infinity();
  for (std::uint32_t j = 0; j < others.size(); ++j) {
    const double s = ncc(rep, others[j].representative);
    if (s > best_s) {
      best_s = s;
      best = j;
    }
  }
  return best;
}

}  // namespace detail

/// Every cluster is paired with its closest cluster in the other image, in
/// both directions, with no ratio test. The union is deduplicated.
inline ClusterPairing match_clusters(const std::vector<Cluster>& c1,
                                     const std::vector<Cluster>& c2) {
  ClusterPairing out;
  if (c1.empty() || c2.empty()) return out;
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint8_t> dirs;
  for (std::uint32_t i = 0; i < c1.size(); ++i) {
    dirs[{i, detail::closest_cluster(c1[i].representative, c2)}] |= kForward;
  }
  for (std::uint32_t j = 0; j < c2.size(); ++j) {
    dirs[{detail::closest_cluster(c2[j].representative, c1), j}] |= kBackward;
  }
  out.pairs.reserve(dirs.size());
  for (const auto& [key, d] : dirs) out.pairs.push_back({key.first, key.second, d});
  return out;
}

/// Cartesian product of the members of every paired cluster, deduplicated and
/// ordered by index pair.
inline std::vector<PutativeMatch> expand_to_matches(const ClusterPairing& pairing,
                                                    const std::vector<Cluster>& c1,
                                                    const std::vector<Cluster>& c2) {
  std::vector<IndexPair> keys;
  for (const auto& p : pairing.pairs) {
    for (auto a : c1.at(p.c1).members) {
      for (auto b : c2.at(p.c2).members) keys.emplace_back(a, b);
    }
  }
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  std::vector<PutativeMatch> out;
  out.reserve(keys.size());
  for (const auto& [a, b] : keys) {
    PutativeMatch m;
    m.i1 = a;
    m.i2 = b;
    m.sources = kInX;
    out.push_back(m);
  }
  return out;
}

}  // namespace epipre
