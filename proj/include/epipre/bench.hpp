#pragma once

// Evaluation metrics, model training on synthetic scenes, and the benchmark
// runner that compares the full pipeline with the d_r and t_k baselines.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "epipre/dtree.hpp"
#include "epipre/errors.hpp"
#include "epipre/estimator.hpp"
#include "epipre/features.hpp"
#include "epipre/geometry.hpp"
#include "epipre/global_rank.hpp"
#include "epipre/pipeline.hpp"
#include "epipre/scene.hpp"
#include "epipre/standard_match.hpp"
#include "epipre/twokeypoint.hpp"

namespace epipre {

inline constexpr double kSuccessThresholdPx = 10.0;

struct Evaluation {
  double mean_root_sampson = 0.0;
  bool success = false;
};

inline Evaluation evaluate(const FundamentalMatrix& f, const std::vector<PointPair>& gt,
                           double threshold = kSuccessThresholdPx) {
  if (gt.empty()) throw InsufficientData("evaluation needs at least one ground-truth pair");
  double sum = 0.0;
  for (const auto& p : gt) sum += sampson_distance(f, p);
  Evaluation e;
  e.mean_root_sampson = sum / static_cast<double>(gt.size());
  e.success = e.mean_root_sampson < threshold;
  return e;
}

/// 1, 2, 5, 10, 20, 50, ... up to n, always ending at n.
inline std::vector<std::size_t> log_rank_grid(std::size_t n) {
  std::vector<std::size_t> grid;
  for (std::size_t decade = 1; decade <= n; decade *= 10) {
    for (std::size_t m : {1, 2, 5}) {
      if (m * decade <= n) grid.push_back(m * decade);
    }
  }
  if (n > 0 && (grid.empty() || grid.back() != n)) grid.push_back(n);
  return grid;
}

/// Fraction of inliers among the first min(k, n) ranked matches.
inline double precision_at(const std::vector<bool>& labels, std::size_t k) {
  const std::size_t m = std::min(k, labels.size());
  if (m == 0) return 0.0;
  return static_cast<double>(std::count(labels.begin(), labels.begin() + m, true)) /
         static_cast<double>(m);
}

inline std::vector<std::pair<std::size_t, double>> cumulative_precision(
    const std::vector<bool>& labels) {
  std::vector<std::pair<std::size_t, double>> curve;
  std::size_t hits = 0, next = 0;
  const auto grid = log_rank_grid(labels.size());
  for (std::size_t r = 0; r < labels.size() && next < grid.size(); ++r) {
    hits += labels[r] ? 1 : 0;
    if (r + 1 == grid[next]) {
      curve.emplace_back(r + 1, static_cast<double>(hits) / static_cast<double>(r + 1));
      ++next;
    }
  }
  return curve;
}

/// X_L by ascending d_r, ties by index pair.
inline std::vector<PutativeMatch> rank_by_distance_ratio(std::vector<PutativeMatch> xl) {
  std::sort(xl.begin(), xl.end(), [](const PutativeMatch& a, const PutativeMatch& b) {
    if (*a.d_r != *b.d_r) return *a.d_r < *b.d_r;
    return a.key() < b.key();
  });
  for (auto& m : xl) m.prob = 1.0 - *m.d_r;
  return xl;
}

/// X_B by descending t_k, ties by index pair.
inline std::vector<PutativeMatch> rank_by_similarity_weight(std::vector<PutativeMatch> xb) {
  std::sort(xb.begin(), xb.end(), [](const PutativeMatch& a, const PutativeMatch& b) {
    if (*a.t_k != *b.t_k) return *a.t_k > *b.t_k;
    return a.key() < b.key();
  });
  for (auto& m : xb) m.prob = *m.t_k;
  return xb;
}

inline std::vector<PutativeMatch> matches_of(const std::vector<KpmdEntry>& ranked) {
  std::vector<PutativeMatch> out;
  out.reserve(ranked.size());
  for (const auto& e : ranked) out.push_back(e.match);
  return out;
}

inline std::vector<bool> labels_of(const std::vector<PutativeMatch>& ranked,
                                   const SyntheticScene& scene) {
  std::vector<bool> out;
  out.reserve(ranked.size());
  for (const auto& m : ranked) out.push_back(scene.is_inlier(m.i1, m.i2));
  return out;
}

inline FixedSource scene_fixed_source(const SyntheticScene& scene) {
  return [&scene](int image, double angle) { return scene.fixed(image, angle); };
}

// ---------------------------------------------------------------------------
// Training

struct TrainingOutput {
  LabeledDataset twokp{twokp_schema(), {}, {}};
  LabeledDataset kpmd{kpmd_schema(), {}, {}};
  Models models;
};

/// A 2keypoint match is an inlier when both of its feature matches are.
inline void add_2kp_rows(const std::vector<TwoKeypointMatch>& matches,
                         const SyntheticScene& scene, LabeledDataset& out) {
  for (const auto& m : matches) {
    out.add(m.descriptor.as_vector(),
            scene.is_inlier(m.tk1.p, m.tk2.p) && scene.is_inlier(m.tk1.n, m.tk2.n));
  }
}

/// Trains the 2kpmd classifier on every branch the pipeline would run, then
/// the kpmd classifier on the fused vectors those branches produce with it.
inline TrainingOutput train_models(const std::vector<SyntheticScene>& scenes,
                                   const PipelineConfig& cfg, const TreeParams& tp = {}) {
  TrainingOutput out;
  struct Prepared {
    const SyntheticScene* scene;
    StandardMatches sm;
    std::vector<BranchCore> cores;
  };
  std::vector<Prepared> prepared;
  for (const auto& scene : scenes) {
    Prepared p{&scene, standard_matches(scene.f1, scene.f2, cfg.ratio_max), {}};
    const auto roll = roll_from_standard(p.sm, scene.f1, scene.f2, cfg.roll);
    const auto clusters1 = agglomerative_cluster(scene.fixed(1, 0.0), cfg.stop_sim);
    for (const auto& [branch, angle] : branch_angles(roll, cfg)) {
      p.cores.push_back(build_branch_core(scene.f1, scene.f2, clusters1,
                                          scene.fixed(2, angle), branch, angle, cfg));
      add_2kp_rows(p.cores.back().twokp_matches, scene, out.twokp);
    }
    prepared.push_back(std::move(p));
  }
  if (out.twokp.size() == 0) throw InsufficientData("training produced no 2keypoint matches");
  out.models.twokp = train_tree(out.twokp, tp);

  for (const auto& p : prepared) {
    const auto& scene = *p.scene;
    for (const auto& core : p.cores) {
      const auto top = rank_2kp(core.twokp_matches, out.models.twokp, cfg.k_2kp);
      const auto cands = generate_candidate_fs(top, scene.f1, scene.f2, cfg.offset_scales);
      const auto sfm = count_sfm(core.x, scene.f1, scene.f2, cands.matrices, cfg.tau,
                                 cfg.threads);
      for (const auto& e : build_kpmd(core.x, p.sm.xl, p.sm.xb, sfm)) {
        out.kpmd.add(e.kpmd.as_vector(), scene.is_inlier(e.match.i1, e.match.i2));
      }
    }
  }
  out.models.kpmd = train_tree(out.kpmd, tp);
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

struct SceneEntry {
  std::string name;
  std::string group;
  std::optional<SceneConfig> config;  // synthetic scene
  // Feature-file scene.
  std::filesystem::path features1, features2, fixed_dir, gt;
};

struct Manifest {
  std::uint64_t seed = 0;
  std::size_t seeds_per_scene = 5;
  std::vector<SceneEntry> scenes;
  std::vector<SceneConfig> training;
  std::optional<std::filesystem::path> twokp_model;
  std::optional<std::filesystem::path> kpmd_model;
  std::vector<std::string> errors;  // per-entry parse errors
};

namespace detail {

/// Expands {"name", "count", "config"} into `count` configs whose seeds derive
/// from the manifest seed, the entry name and the instance index.
inline std::vector<std::pair<std::string, SceneConfig>> expand_entry(
    const nlohmann::json& e, std::uint64_t seed, const std::string& fallback_name) {
  if (!e.is_object()) throw ParseError("entry must be an object");
  const std::string name = e.value("name", fallback_name);
  const auto count = e.value("count", std::uint64_t{1});
  const SceneConfig base = scene_config_from_json(e.value("config", nlohmann::json::object()));
  std::vector<std::pair<std::string, SceneConfig>> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    SceneConfig c = base;
    const std::string id = count == 1 ? name : name + "_" + std::to_string(i);
    c.seed = derive_seed(seed ^ base.seed, id);
    out.emplace_back(id, c);
  }
  return out;
}

}  // namespace detail

/// Relative paths resolve against `base_dir`. A malformed entry is recorded
/// in `errors` and skipped; a malformed document throws ParseError.
inline Manifest parse_manifest(const nlohmann::json& j,
                               const std::filesystem::path& base_dir = {}) {
  if (!j.is_object()) throw ParseError("manifest must be a JSON object");
  Manifest m;
  try {
    m.seed = j.value("seed", std::uint64_t{0});
    m.seeds_per_scene = j.value("seeds_per_scene", std::size_t{5});
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("manifest header: ") + ex.what());
  }
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };
  if (j.contains("models")) {
    const auto& mj = j.at("models");
    if (mj.contains("twokp")) m.twokp_model = resolve(mj.at("twokp").get<std::string>());
    if (mj.contains("kpmd")) m.kpmd_model = resolve(mj.at("kpmd").get<std::string>());
  }
  if (j.contains("training")) {
    const auto& tj = j.at("training");
    const auto list = tj.is_array() ? tj : nlohmann::json::array({tj});
    for (std::size_t k = 0; k < list.size(); ++k) {
      try {
        for (auto& [id, cfg] : detail::expand_entry(list[k], derive_seed(m.seed, "training"),
                                                    "training" + std::to_string(k))) {
          m.training.push_back(cfg);
        }
      } catch (const std::exception& ex) {
        m.errors.push_back("training[" + std::to_string(k) + "]: " + ex.what());
      }
    }
  }
  const auto scenes = j.value("scenes", nlohmann::json::array());
  for (std::size_t k = 0; k < scenes.size(); ++k) {
    const auto& e = scenes[k];
    const std::string fallback = "scene" + std::to_string(k);
    try {
      if (e.is_object() && e.contains("features1")) {
        SceneEntry s;
        s.name = s.group = e.value("name", fallback);
        s.features1 = resolve(e.at("features1").get<std::string>());
        s.features2 = resolve(e.at("features2").get<std::string>());
        s.fixed_dir = resolve(e.value("fixed_dir", s.features1.parent_path().string()));
        s.gt = resolve(e.at("gt").get<std::string>());
        m.scenes.push_back(std::move(s));
        continue;
      }
      const std::string group = e.is_object() ? e.value("name", fallback) : fallback;
      for (auto& [id, cfg] : detail::expand_entry(e, m.seed, fallback)) {
        SceneEntry s;
        s.name = id;
        s.group = group;
        s.config = cfg;
        m.scenes.push_back(std::move(s));
      }
    } catch (const std::exception& ex) {
      m.errors.push_back("scenes[" + std::to_string(k) + "]: " + ex.what());
    }
  }
  return m;
}

inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& ex) {
    throw ParseError(path.string() + ": " + ex.what());
  }
  return parse_manifest(j, path.parent_path());
}

/// Ground-truth correspondences, one `x1 y1 x2 y2` per line.
inline std::vector<PointPair> read_gt_pairs(std::istream& in) {
  std::vector<PointPair> out;
  std::string line;
  long record = 0;
  while (std::getline(in, line)) {
    ++record;
    const auto tok = detail::split_ws(line);
    if (tok.empty()) continue;
    if (tok.size() != 4) throw ParseError("expected 'x1 y1 x2 y2'", record);
    double v[4];
    for (int k = 0; k < 4; ++k) {
      if (!detail::parse_double(tok[static_cast<std::size_t>(k)], v[k])) {
        throw ParseError("bad number '" + std::string(tok[static_cast<std::size_t>(k)]) + "'",
                         record);
      }
    }
    out.push_back({Eigen::Vector2d(v[0], v[1]), Eigen::Vector2d(v[2], v[3])});
  }
  return out;
}

inline void write_gt_pairs(const std::vector<PointPair>& pairs, std::ostream& out) {
  std::string line;
  for (const auto& p : pairs) {
    line.clear();
    for (double v : {p.x1.x(), p.x1.y(), p.x2.x(), p.x2.y()}) {
      if (!line.empty()) line += ' ';
      detail::append_double(line, v);
    }
    out << line << '\n';
  }
}

// ---------------------------------------------------------------------------
// Benchmark

struct BenchOptions {
  PipelineConfig pipeline;
  double success_px = kSuccessThresholdPx;
  bool timing = false;            // otherwise wall_ms is written as 0
  bool include_ablation = false;  // adds the largest-support method
};

struct RunRow {
  std::string scene;
  std::string group;
  std::string method;
  std::uint64_t seed = 0;
  double mean_root_sampson = 0.0;
  bool success = false;
  std::size_t iterations = 0;
  double wall_ms = 0.0;
};

struct RankingRow {
  std::string scene;
  std::string group;
  std::string method;
  std::size_t matches = 0;
  std::size_t inliers = 0;
  double precision_at_10 = 0.0;
  double precision_at_100 = 0.0;
};

struct BenchReport {
  std::vector<RunRow> runs;
  std::vector<RankingRow> rankings;
  std::vector<std::string> errors;
  std::vector<std::string> methods;
};

namespace detail {

inline RankingRow ranking_row(const SceneEntry& e, const char* method,
                              const std::vector<bool>& labels) {
  RankingRow r;
  r.scene = e.name;
  r.group = e.group;
  r.method = method;
  r.matches = labels.size();
  r.inliers = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
  r.precision_at_10 = precision_at(labels, 10);
  r.precision_at_100 = precision_at(labels, 100);
  return r;
}

inline EstimationResult estimate_list(const std::vector<PutativeMatch>& ranked,
                                      const FeatureSet& f1, const FeatureSet& f2,
                                      const RansacConfig& cfg) {
  std::vector<PointPair> pts;
  std::vector<double> probs;
  for (const auto& m : ranked) {
    pts.push_back(point_pair(m, f1, f2));
    probs.push_back(m.prob.value_or(0.0));
  }
  return guided_ransac(pts, probs, cfg);
}

}  // namespace detail

/// One pipeline run (both branches) plus the two baselines per scene, each
/// estimated with `seeds_per_scene` sampler seeds.
inline BenchReport run_benchmark(const Manifest& manifest, const Models& models,
                                 const BenchOptions& opts = {}) {
  BenchReport report;
  report.errors = manifest.errors;
  report.methods = {"pipeline", "lowe_dr", "blogs_tk"};
  if (opts.include_ablation) report.methods.push_back("max_support");

  for (std::size_t si = 0; si < manifest.scenes.size(); ++si) {
    const SceneEntry& entry = manifest.scenes[si];
    try {
      std::optional<SyntheticScene> scene;
      FeatureSet f1, f2;
      std::vector<PointPair> gt;
      FixedSource fixed;
      if (entry.config) {
        scene = gen_scene(*entry.config);
        f1 = scene->f1;
        f2 = scene->f2;
        gt = scene->gt_pairs;
        fixed = scene_fixed_source(*scene);
      } else {
        f1 = load_features(entry.features1);
        f2 = load_features(entry.features2);
        std::ifstream gin(entry.gt);
        if (!gin) throw ParseError("cannot open " + entry.gt.string());
        gt = read_gt_pairs(gin);
        fixed = directory_fixed_source(entry.fixed_dir, f1.image_id, f2.image_id);
      }

      PipelineConfig pcfg = opts.pipeline;
      auto prepared = prepare_branches(f1, f2, fixed, models, pcfg);
      const auto sm = standard_matches(f1, f2, pcfg.ratio_max);
      const auto by_dr = rank_by_distance_ratio(sm.xl);
      const auto by_tk = rank_by_similarity_weight(sm.xb);

      std::vector<std::size_t> branch_votes(prepared.branches.size(), 0);
      for (std::size_t k = 0; k < manifest.seeds_per_scene; ++k) {
        const std::uint64_t seed =
            derive_seed(derive_seed(manifest.seed, "sampler"), entry.name + "#" + std::to_string(k));
        for (const auto& method : report.methods) {
          const auto t0 = std::chrono::steady_clock::now();
          EstimationResult res;
          bool ok = true;
          try {
            RansacConfig rc = pcfg.ransac;
            rc.seed = seed;
            if (method == "pipeline" || method == "max_support") {
              PipelineConfig c = pcfg;
              c.ransac = rc;
              c.ablation_largest_support = method == "max_support";
              estimate_branches(prepared, f1, f2, c);
              res = prepared.best();
              if (method == "pipeline") ++branch_votes[prepared.chosen];
            } else {
              res = detail::estimate_list(method == "lowe_dr" ? by_dr : by_tk, f1, f2, rc);
            }
          } catch (const InsufficientData&) {
            ok = false;
          }
          const auto t1 = std::chrono::steady_clock::now();
          RunRow row;
          row.scene = entry.name;
          row.group = entry.group;
          row.method = method;
          row.seed = seed;
          row.iterations = ok ? res.iterations : 0;
          if (ok && res.found) {
            const auto ev = evaluate(res.F, gt, opts.success_px);
            row.mean_root_sampson = ev.mean_root_sampson;
            row.success = ev.success;
          } else {
            row.mean_root_sampson = std::numeric_limits<double>::infinity();
          }
          if (opts.timing) {
            row.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
          }
          report.runs.push_back(std::move(row));
        }
      }

      if (scene) {
        // Ranking quality of the branch the estimator preferred most often.
        const auto pick = static_cast<std::size_t>(
            std::max_element(branch_votes.begin(), branch_votes.end()) - branch_votes.begin());
        report.rankings.push_back(detail::ranking_row(
            entry, "pipeline", labels_of(matches_of(prepared.branches[pick].ranked), *scene)));
        report.rankings.push_back(
            detail::ranking_row(entry, "lowe_dr", labels_of(by_dr, *scene)));
        report.rankings.push_back(
            detail::ranking_row(entry, "blogs_tk", labels_of(by_tk, *scene)));
      }
    } catch (const Error& ex) {
      report.errors.push_back(entry.name + ": " + ex.what());
    }
  }
  return report;
}

inline void write_report_csv(const BenchReport& r, std::ostream& out) {
  out << "scene,method,seed,mean_root_sampson,success,iterations,wall_ms\n";
  std::string line;
  for (const auto& row : r.runs) {
    line = row.scene + ',' + row.method + ',' + std::to_string(row.seed) + ',';
    detail::append_double(line, row.mean_root_sampson);
    line += ',' + std::to_string(row.success ? 1 : 0) + ',' + std::to_string(row.iterations) + ',';
    detail::append_double(line, row.wall_ms);
    out << line << '\n';
  }
}

inline void write_ranking_csv(const BenchReport& r, std::ostream& out) {
  out << "scene,method,matches,inliers,precision_at_10,precision_at_100\n";
  std::string line;
  for (const auto& row : r.rankings) {
    line = row.scene + ',' + row.method + ',' + std::to_string(row.matches) + ',' +
           std::to_string(row.inliers) + ',';
    detail::append_double(line, row.precision_at_10);
    line += ',';
    detail::append_double(line, row.precision_at_100);
    out << line << '\n';
  }
}

/// Success counts per group and method, each scene contributing the mean of
/// its per-seed success flags.
inline std::map<std::string, std::map<std::string, double>> success_counts(
    const BenchReport& r) {
  std::map<std::pair<std::string, std::string>, std::pair<double, double>> per_scene;
  std::map<std::string, std::string> group_of;
  for (const auto& row : r.runs) {
    auto& acc = per_scene[{row.scene, row.method}];
    acc.first += row.success ? 1.0 : 0.0;
    acc.second += 1.0;
    group_of[row.scene] = row.group;
  }
  std::map<std::string, std::map<std::string, double>> out;
  for (const auto& [key, acc] : per_scene) {
    out[group_of[key.first]][key.second] += acc.first / acc.second;
  }
  return out;
}

inline void write_summary(const BenchReport& r, std::ostream& out) {
  out << "success counts (mean over seeds, summed over scenes)\n";
  std::string line;
  for (const auto& [group, methods] : success_counts(r)) {
    line = "  " + group + ":";
    for (const auto& m : r.methods) {
      const auto it = methods.find(m);
      line += ' ' + m + '=';
      detail::append_double(line, it == methods.end() ? 0.0 : it->second);
    }
    out << line << '\n';
  }
  if (!r.rankings.empty()) {
    out << "mean precision@100\n";
    std::map<std::string, std::map<std::string, std::pair<double, double>>> acc;
    for (const auto& row : r.rankings) {
      auto& a = acc[row.group][row.method];
      a.first += row.precision_at_100;
      a.second += 1.0;
    }
    for (const auto& [group, methods] : acc) {
      line = "  " + group + ":";
      for (const auto& [m, a] : methods) {
        line += ' ' + m + '=';
        detail::append_double(line, a.first / a.second);
      }
      out << line << '\n';
    }
  }
  if (!r.errors.empty()) {
    out << "errors\n";
    for (const auto& e : r.errors) out << "  " << e << '\n';
  }
}

}  // namespace epipre
