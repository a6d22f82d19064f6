#pragma once

// End-to-end preprocessing for one image pair: standard matches, roll
// estimate, and for each orientation branch the clustering, 2keypoint ranking,
// global sfm ranking and guided estimation. The branch with the larger
// support wins.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "epipre/clustering.hpp"
#include "epipre/dtree.hpp"
#include "epipre/errors.hpp"
#include "epipre/estimator.hpp"
#include "epipre/features.hpp"
#include "epipre/global_rank.hpp"
#include "epipre/standard_match.hpp"
#include "epipre/twokeypoint.hpp"

namespace epipre {

struct PipelineConfig {
  double ratio_max = 0.9;
  RollParams roll;
  double stop_sim = 0.85;
  TwoKeypointParams twokp;
  std::size_t k_2kp = 100;
  double offset_scales = 5.0;
  double tau = 2.0;
  unsigned threads = 1;
  RansacConfig ransac;
  double branch_dedup_deg = 3.0;
  bool always_two_branches = false;
  // Report the candidate F with the largest support over X instead of running
  // the guided estimator on the ranked matches.
  bool ablation_largest_support = false;
};

struct Models {
  TreeModel twokp;
  TreeModel kpmd;
};

struct StandardMatches {
  std::vector<PutativeMatch> xl;
  std::vector<PutativeMatch> xb;
};

inline StandardMatches standard_matches(const FeatureSet& f1, const FeatureSet& f2,
                                        double ratio_max = 0.9) {
  if (f1.empty() || f2.empty()) throw InsufficientData("empty feature set");
  const auto fwd = nearest_two_table(f1, f2);
  const auto bwd = nearest_two_table(f2, f1);
  return {lowe_matches(fwd, ratio_max), blogs_matches(fwd, bwd)};
}

/// Roll estimate from X_L and X_B, or nothing when both lists are empty.
inline std::optional<RollEstimate> roll_from_standard(const StandardMatches& sm,
                                                      const FeatureSet& f1,
                                                      const FeatureSet& f2,
                                                      const RollParams& params) {
  std::vector<PutativeMatch> pooled = sm.xl;
  pooled.insert(pooled.end(), sm.xb.begin(), sm.xb.end());
  try {
    return estimate_roll(pooled, f1, f2, params);
  } catch (const RollUnavailable&) {
    return std::nullopt;
  }
}

/// Orientation branches to run, alpha_exp first.
inline std::vector<std::pair<Branch, double>> branch_angles(
    const std::optional<RollEstimate>& roll, const PipelineConfig& cfg) {
  if (!roll) return {{Branch::kZero, 0.0}};
  if (!cfg.always_two_branches &&
      std::abs(roll->alpha_exp) < deg2rad(cfg.branch_dedup_deg)) {
    return {{Branch::kZero, 0.0}};
  }
  return {{Branch::kAlphaExp, roll->alpha_exp}, {Branch::kZero, 0.0}};
}

/// Everything of one branch that does not need a trained model.
struct BranchCore {
  Branch branch = Branch::kZero;
  double angle = 0.0;
  std::vector<Cluster> clusters1;
  std::vector<Cluster> clusters2;
  std::vector<std::uint32_t> labels1;
  std::vector<std::uint32_t> labels2;
  std::vector<PutativeMatch> x;
  std::vector<TwoKeypointMatch> twokp_matches;
};

struct BranchOutput {
  BranchCore core;
  std::vector<TwoKeypointMatch> top_2kp;
  CandidateSet candidates;
  std::vector<KpmdEntry> ranked;
};

inline BranchCore build_branch_core(const FeatureSet& f1, const FeatureSet& f2,
                                    const std::vector<Cluster>& clusters1,
                                    const FeatureSet& fixed2, Branch branch,
                                    double angle, const PipelineConfig& cfg) {
  if (fixed2.size() != f2.size()) {
    throw Error("fixed-orientation set of image 2 does not align with natural set");
  }
  BranchCore core;
  core.branch = branch;
  core.angle = angle;
  core.clusters1 = clusters1;
  core.clusters2 = agglomerative_cluster(fixed2, cfg.stop_sim);
  core.labels1 = cluster_labels(core.clusters1, f1.size());
  core.labels2 = cluster_labels(core.clusters2, f2.size());
  core.x = expand_to_matches(match_clusters(core.clusters1, core.clusters2),
                             core.clusters1, core.clusters2);
  const auto t1 = gen_2keypoints(f1, core.labels1, cfg.twokp);
  const auto t2 = gen_2keypoints(f2, core.labels2, cfg.twokp);
  core.twokp_matches = match_2keypoints(core.x, t1, t2, core.labels1, core.labels2);
  return core;
}

inline BranchOutput finish_branch(BranchCore core, const FeatureSet& f1,
                                  const FeatureSet& f2, const StandardMatches& sm,
                                  const Models& models, const PipelineConfig& cfg) {
  BranchOutput out;
  out.top_2kp = rank_2kp(core.twokp_matches, models.twokp, cfg.k_2kp);
  out.candidates = generate_candidate_fs(out.top_2kp, f1, f2, cfg.offset_scales);
  const auto sfm =
      count_sfm(core.x, f1, f2, out.candidates.matrices, cfg.tau, cfg.threads);
  out.ranked = score_matches(build_kpmd(core.x, sm.xl, sm.xb, sfm), models.kpmd);
  out.core = std::move(core);
  return out;
}

/// Supplies fixed-orientation feature sets; image is 1 or 2. May throw
/// ExtractionRequired when the requested angle is not available.
using FixedSource = std::function<FeatureSet(int image, double angle_rad)>;

struct PipelineResult {
  std::optional<RollEstimate> roll;
  std::vector<BranchOutput> branches;
  std::vector<EstimationResult> results;  // aligned with branches
  std::size_t chosen = 0;

  const EstimationResult& best() const { return results.at(chosen); }
};

inline EstimationResult estimate_branch(const BranchOutput& b, const FeatureSet& f1,
                                        const FeatureSet& f2,
                                        const PipelineConfig& cfg) {
  std::vector<PointPair> pts;
  std::vector<double> probs;
  pts.reserve(b.ranked.size());
  probs.reserve(b.ranked.size());
  for (const auto& e : b.ranked) {
    pts.push_back(point_pair(e.match, f1, f2));
    probs.push_back(e.match.prob.value_or(0.0));
  }
  EstimationResult res;
  if (cfg.ablation_largest_support) {
    std::vector<PointPair> xpts;
    for (const auto& m : b.core.x) xpts.push_back(point_pair(m, f1, f2));
    const auto k = best_supported_candidate(xpts, b.candidates.matrices, cfg.tau);
    res.F = b.candidates.matrices[k];
    res.inliers = collect_inliers(res.F, pts, cfg.ransac.inlier_tau);
    res.support = res.inliers.size();
    res.found = true;
    res.seed = cfg.ransac.seed;
  } else {
    res = guided_ransac(pts, probs, cfg.ransac);
  }
  res.branch = b.core.branch;
  return res;
}

/// Everything up to the ranked match lists of each branch; no estimation.
inline PipelineResult prepare_branches(const FeatureSet& f1, const FeatureSet& f2,
                                       const FixedSource& fixed, const Models& models,
                                       const PipelineConfig& cfg = {}) {
  if (f1.mode != OrientationMode::kNatural || f2.mode != OrientationMode::kNatural) {
    throw ModeError("the pipeline expects natural-orientation feature sets");
  }
  PipelineResult out;
  const auto sm = standard_matches(f1, f2, cfg.ratio_max);
  out.roll = roll_from_standard(sm, f1, f2, cfg.roll);
  const auto angles = branch_angles(out.roll, cfg);

  // Resolve every needed extraction before doing the expensive work.
  const FeatureSet fixed1 = fixed(1, 0.0);
  std::vector<FeatureSet> fixed2;
  for (const auto& [branch, angle] : angles) fixed2.push_back(fixed(2, angle));
  if (fixed1.size() != f1.size()) {
    throw Error("fixed-orientation set of image 1 does not align with natural set");
  }
  const auto clusters1 = agglomerative_cluster(fixed1, cfg.stop_sim);

  for (std::size_t k = 0; k < angles.size(); ++k) {
    auto core = build_branch_core(f1, f2, clusters1, fixed2[k], angles[k].first,
                                  angles[k].second, cfg);
    out.branches.push_back(finish_branch(std::move(core), f1, f2, sm, models, cfg));
  }
  return out;
}

/// Runs the estimator on every branch and keeps the one with maximal support
/// (alpha_exp wins ties). Replaces any earlier results.
inline void estimate_branches(PipelineResult& out, const FeatureSet& f1,
                              const FeatureSet& f2, const PipelineConfig& cfg) {
  out.results.clear();
  out.chosen = 0;
  for (const auto& b : out.branches) {
    out.results.push_back(estimate_branch(b, f1, f2, cfg));
  }
  for (std::size_t k = 1; k < out.results.size(); ++k) {
    if (out.results[k].support > out.results[out.chosen].support) out.chosen = k;
  }
}

inline PipelineResult run_pipeline(const FeatureSet& f1, const FeatureSet& f2,
                                   const FixedSource& fixed, const Models& models,
                                   const PipelineConfig& cfg = {}) {
  auto out = prepare_branches(f1, f2, fixed, models, cfg);
  estimate_branches(out, f1, f2, cfg);
  return out;
}

/// File name of the fixed-orientation features of `stem` at `angle`, keyed
/// by the angle in integer millidegrees.
inline std::string fixed_file_name(const std::string& stem, double angle_rad) {
  const long mdeg = std::lround(rad2deg(wrap_angle(angle_rad)) * 1000.0);
  return stem + ".fixed_" + std::to_string(mdeg) + ".epf";
}

/// Looks fixed-orientation files up in `dir`; a missing file raises
/// ExtractionRequired naming the image and angle.
inline FixedSource directory_fixed_source(std::filesystem::path dir, std::string stem1,
                                          std::string stem2) {
  return [dir = std::move(dir), stem1 = std::move(stem1),
          stem2 = std::move(stem2)](int image, double angle) {
    const std::string& stem = image == 1 ? stem1 : stem2;
    const auto path = dir / fixed_file_name(stem, angle);
    if (!std::filesystem::exists(path)) throw ExtractionRequired(stem, angle);
    FeatureSet fs = load_features(path);
    if (fs.mode != OrientationMode::kFixed ||
        angle_diff(fs.fixed_angle, angle) > deg2rad(1e-3)) {
      throw ParseError(path.string() + ": expected fixed orientation at " +
                       std::to_string(angle) + " rad");
    }
    return fs;
  };
}

}  // namespace epipre
