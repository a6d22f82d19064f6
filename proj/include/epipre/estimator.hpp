#pragma once

// Reference guided-RANSAC consumer: 7-point hypotheses drawn with probability
// proportional to per-match priors, fixed iteration budget, and an LO-style
// least-squares refinement of the winner.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "epipre/errors.hpp"
#include "epipre/geometry.hpp"

namespace epipre {

enum class Branch { kAlphaExp, kZero };

inline const char* branch_name(Branch b) {
  return b == Branch::kAlphaExp ? "alpha_exp" : "zero";
}

struct EstimationResult {
  FundamentalMatrix F;
  std::vector<std::uint32_t> inliers;
  std::size_t support = 0;
  std::size_t iterations = 0;
  // Iteration (1-based) that produced the winning hypothesis; 0 if none.
  std::size_t best_iteration = 0;
  Branch branch = Branch::kZero;
  std::uint64_t seed = 0;
  bool found = false;
};

struct RansacConfig {
  std::size_t max_iters = 2000;
  double inlier_tau = 2.0;
  std::uint64_t seed = 0;
  std::size_t lo_rounds = 3;
};

inline std::vector<std::uint32_t> collect_inliers(const FundamentalMatrix& f,
                                                  std::span<const PointPair> pts,
                                                  double tau) {
  std::vector<std::uint32_t> in;
  for (std::uint32_t i = 0; i < pts.size(); ++i) {
    if (sampson_distance(f, pts[i]) < tau) in.push_back(i);
  }
  return in;
}

/// Re-fits F by the 8-point algorithm on its inliers while the support does
/// not decrease, at most `rounds` times. Fewer than 8 inliers returns F as is.
inline FundamentalMatrix local_optimize(const FundamentalMatrix& f,
                                        std::span<const PointPair> pts,
                                        double tau, std::size_t rounds = 3) {
  FundamentalMatrix current = f;
  auto inliers = collect_inliers(current, pts, tau);
  for (std::size_t r = 0; r < rounds; ++r) {
    if (inliers.size() < 8) break;
    std::vector<PointPair> sub;
    sub.reserve(inliers.size());
    for (auto i : inliers) sub.push_back(pts[i]);
    FundamentalMatrix refit;
    try {
      refit = eight_point(sub);
    } catch (const DegenerateConfiguration&) {
      break;
    }
    auto next = collect_inliers(refit, pts, tau);
    if (next.size() < inliers.size()) break;
    const bool unchanged = next == inliers;
    current = refit;
    inliers = std::move(next);
    if (unchanged) break;
  }
  return current;
}

namespace detail {

/// Fenwick tree over sampling weights supporting removal and restoration, so
/// a sample of distinct indices costs O(k log n).
class WeightedSampler {
 public:
  explicit WeightedSampler(std::span<const double> weights)
      : w_(weights.begin(), weights.end()),
        tree_(weights.size() + 1, 0.0),
        removed_(weights.size(), 0) {
    for (std::size_t i = 0; i < w_.size(); ++i) add(i, w_[i]);
  }

  double total() const { return prefix(w_.size()); }

  /// Smallest index whose cumulative weight exceeds `u`.
  std::size_t find(double u) const {
    std::size_t pos = 0;
    std::size_t step = 1;
    while (step * 2 <= w_.size()) step *= 2;
    for (; step > 0; step /= 2) {
      if (pos + step <= w_.size() && tree_[pos + step] <= u) {
        pos += step;
        u -= tree_[pos];
      }
    }
    // Rounding can land on a zero-weight or removed slot; step to a live one.
    auto dead = [&](std::size_t i) { return w_[i] <= 0.0 || removed_[i]; };
    while (pos < w_.size() && dead(pos)) ++pos;
    if (pos >= w_.size()) {
      pos = w_.size() - 1;
      while (pos > 0 && dead(pos)) --pos;
    }
    return pos;
  }

  void remove(std::size_t i) {
    removed_[i] = 1;
    add(i, -w_[i]);
  }
  void restore(std::size_t i) {
    removed_[i] = 0;
    add(i, w_[i]);
  }

 private:
  void add(std::size_t i, double v) {
    for (std::size_t k = i + 1; k < tree_.size(); k += k & (~k + 1)) tree_[k] += v;
  }
  double prefix(std::size_t n) const {
    double s = 0.0;
    for (std::size_t k = n; k > 0; k -= k & (~k + 1)) s += tree_[k];
    return s;
  }

  std::vector<double> w_;
  std::vector<double> tree_;
  std::vector<char> removed_;
};

/// Inlier count of f, abandoning once it can no longer exceed `to_beat`.
inline std::size_t count_inliers_bounded(const FundamentalMatrix& f,
                                         std::span<const PointPair> pts, double tau,
                                         std::size_t to_beat) {
  std::size_t count = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (sampson_distance(f, pts[i]) < tau) ++count;
    if (count + (pts.size() - i - 1) <= to_beat) return 0;
  }
  return count;
}

}  // namespace detail

/// Each iteration draws 7 distinct matches with probability proportional to
/// `probs` (sequential weighted draws without replacement), solves the 7-point
/// problem and keeps the hypothesis with the most inliers at `inlier_tau`;
/// earlier iterations win ties. The winner is refined by local_optimize.
inline EstimationResult guided_ransac(std::span<const PointPair> pts,
                                      std::span<const double> probs,
                                      const RansacConfig& cfg) {
  if (pts.size() < 7) {
    throw InsufficientData("guided_ransac needs at least 7 matches, got " +
                           std::to_string(pts.size()));
  }
  if (probs.size() != pts.size()) throw Error("probabilities do not align with matches");

  std::vector<double> weights(probs.begin(), probs.end());
  std::size_t positive = 0;
  for (double& w : weights) {
    if (!(w > 0.0) || !std::isfinite(w)) w = 0.0;
    if (w > 0.0) ++positive;
  }
  if (positive < 7) {
    // Not enough mass to draw 7 distinct matches; give every match a floor.
    for (double& w : weights) w += 1e-9;
  }
  detail::WeightedSampler sampler(weights);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  EstimationResult res;
  res.seed = cfg.seed;
  std::array<std::size_t, 7> idx{};
  std::array<PointPair, 7> sample;
  for (std::size_t it = 1; it <= cfg.max_iters; ++it) {
    res.iterations = it;
    for (std::size_t k = 0; k < 7; ++k) {
      idx[k] = sampler.find(unit(rng) * sampler.total());
      sampler.remove(idx[k]);
      sample[k] = pts[idx[k]];
    }
    for (std::size_t k = 0; k < 7; ++k) sampler.restore(idx[k]);

    std::vector<FundamentalMatrix> models;
    try {
      models = seven_point(sample);
    } catch (const DegenerateConfiguration&) {
      continue;
    }
    for (const auto& f : models) {
      const std::size_t s =
          detail::count_inliers_bounded(f, pts, cfg.inlier_tau, res.support);
      if (!res.found || s > res.support) {
        res.F = f;
        res.support = s;
        res.best_iteration = it;
        res.found = true;
      }
    }
  }
  if (!res.found) return res;
  res.F = local_optimize(res.F, pts, cfg.inlier_tau, cfg.lo_rounds);
  res.inliers = collect_inliers(res.F, pts, cfg.inlier_tau);
  res.support = res.inliers.size();
  return res;
}

}  // namespace epipre
