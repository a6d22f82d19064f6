#pragma once

// Command implementations behind the `epipre` executable. run_cli parses
// arguments and maps library errors to exit codes:
//   0 success, 1 other failure, 2 input parse error, 3 extraction request,
//   4 insufficient data, 5 schema error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "epipre/bench.hpp"
#include "epipre/dtree.hpp"
#include "epipre/errors.hpp"
#include "epipre/estimator.hpp"
#include "epipre/features.hpp"
#include "epipre/global_rank.hpp"
#include "epipre/pipeline.hpp"
#include "epipre/scene.hpp"
#include "epipre/twokeypoint.hpp"

namespace epipre::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kParseError = 2,
  kExtractionRequest = 3,
  kInsufficientData = 4,
  kSchemaError = 5,
};

inline constexpr const char* kRequestFile = "extraction_request.json";

struct Tunables {
  double ratio_max = 0.9;
  double stop_sim = 0.85;
  std::size_t k1 = 5;
  double k2 = 5.0;
  std::size_t k3 = 1;
  std::size_t k_2kp = 100;
  double tau = 2.0;
  double inlier_tau = 2.0;
  std::size_t max_iters = 2000;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  bool always_two_branches = false;

  PipelineConfig pipeline() const {
    PipelineConfig c;
    c.ratio_max = ratio_max;
    c.stop_sim = stop_sim;
    c.twokp.k_nearest = k1;
    c.twokp.radius_scales = k2;
    c.twokp.k_cluster = k3;
    c.k_2kp = k_2kp;
    c.tau = tau;
    c.threads = threads;
    c.ransac.inlier_tau = inlier_tau;
    c.ransac.max_iters = max_iters;
    c.ransac.seed = seed;
    c.always_two_branches = always_two_branches;
    return c;
  }
};

struct Options {
  Tunables tun;
  // match
  std::string features1, features2, fixed_dir, twokp_model, kpmd_model, out_dir;
  // estimate
  std::vector<std::string> ranked;
  std::string result;
  // train
  std::string schema, data, model_out;
  std::size_t folds = 10;
  std::size_t min_leaf = 8;
  // bench / make-training / gen-scene / fulfill
  std::string manifest, scene, request;
  std::size_t count = 1;
  bool timing = false;
  bool ablation = false;
};

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

inline std::filesystem::path ensure_dir(const std::string& dir) {
  std::filesystem::path p(dir.empty() ? "." : dir);
  std::filesystem::create_directories(p);
  return p;
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline SceneConfig read_scene_config(const std::string& path) {
  return scene_config_from_json(read_json(path));
}

inline nlohmann::ordered_json request_json(const std::string& image, double angle,
                                           const std::filesystem::path& output) {
  nlohmann::ordered_json r;
  r["image"] = image;
  r["mode"] = "fixed";
  r["angle_rad"] = angle;
  r["output"] = output.string();
  return r;
}

inline Models load_models(const Options& o) {
  if (o.twokp_model.empty() || o.kpmd_model.empty()) {
    throw ParseError("both --twokp-model and --kpmd-model are required");
  }
  return {load_model(o.twokp_model, twokp_schema()), load_model(o.kpmd_model, kpmd_schema())};
}

}  // namespace detail

/// Ranked matches per branch plus the roll record. When fixed-orientation
/// files are missing, writes one request per line and returns 3.
inline int cmd_match(const Options& o, std::ostream& log) {
  const FeatureSet f1 = load_features(o.features1);
  const FeatureSet f2 = load_features(o.features2);
  const Models models = detail::load_models(o);
  const auto out_dir = detail::ensure_dir(o.out_dir);
  const std::filesystem::path fixed_dir =
      o.fixed_dir.empty() ? std::filesystem::path(o.features1).parent_path()
                          : std::filesystem::path(o.fixed_dir);
  const PipelineConfig cfg = o.tun.pipeline();

  const auto sm = standard_matches(f1, f2, cfg.ratio_max);
  const auto roll = roll_from_standard(sm, f1, f2, cfg.roll);
  std::vector<std::pair<const FeatureSet*, double>> needed = {{&f1, 0.0}};
  for (const auto& [branch, angle] : branch_angles(roll, cfg)) needed.emplace_back(&f2, angle);
  std::string requests;
  for (const auto& [fs, angle] : needed) {
    const auto path = fixed_dir / fixed_file_name(fs->image_id, angle);
    if (!std::filesystem::exists(path)) {
      requests += detail::request_json(fs->image_id, angle, path).dump() + '\n';
    }
  }
  if (!requests.empty()) {
    detail::write_text(out_dir / cli::kRequestFile, requests);
    log << "fixed-orientation features missing; requests written to "
        << (out_dir / cli::kRequestFile).string() << '\n';
    return kExtractionRequest;
  }

  const auto result = prepare_branches(
      f1, f2, directory_fixed_source(fixed_dir, f1.image_id, f2.image_id), models, cfg);
  nlohmann::ordered_json rec;
  if (result.roll) {
    rec["alpha_exp_rad"] = result.roll->alpha_exp;
    rec["alpha_exp_deg"] = rad2deg(result.roll->alpha_exp);
    rec["peak"] = result.roll->peak;
    rec["samples"] = result.roll->samples;
  } else {
    rec["alpha_exp_rad"] = nullptr;
  }
  rec["branches"] = nlohmann::ordered_json::array();
  for (const auto& b : result.branches) {
    const std::string name = branch_name(b.core.branch);
    std::ofstream csv(out_dir / ("ranked_" + name + ".csv"), std::ios::binary);
    write_ranked_csv(b.ranked, f1, f2, csv);
    std::ofstream tk(out_dir / ("twokp_" + name + ".csv"), std::ios::binary);
    write_2kp_csv(b.top_2kp, tk);
    nlohmann::ordered_json br;
    br["branch"] = name;
    br["angle_rad"] = b.core.angle;
    br["matches"] = b.ranked.size();
    br["twokp_matches"] = b.core.twokp_matches.size();
    br["candidates"] = b.candidates.matrices.size();
    rec["branches"].push_back(br);
  }
  detail::write_text(out_dir / "roll.json", rec.dump(2) + '\n');
  log << "wrote " << result.branches.size() << " ranked list(s) to " << out_dir.string() << '\n';
  return kOk;
}

/// Guided estimation on each ranked CSV; the largest support wins, earlier
/// files win ties.
inline int cmd_estimate(const Options& o, std::ostream& log) {
  if (o.ranked.empty() || o.ranked.size() > 2) {
    throw ParseError("estimate takes one or two ranked CSV files");
  }
  RansacConfig rc = o.tun.pipeline().ransac;
  std::optional<EstimationResult> best;
  std::string best_file;
  for (const auto& file : o.ranked) {
    std::ifstream in(file);
    if (!in) throw ParseError("cannot open " + file);
    const auto rows = read_ranked_csv(in);
    std::vector<PointPair> pts;
    std::vector<double> probs;
    for (const auto& r : rows) {
      pts.push_back(r.points);
      probs.push_back(r.prob);
    }
    if (pts.size() < 7) {
      log << file << ": " << pts.size() << " matches, skipped\n";
      continue;
    }
    auto res = guided_ransac(pts, probs, rc);
    if (!best || res.support > best->support) {
      best = std::move(res);
      best_file = file;
    }
  }
  if (!best) throw InsufficientData("no ranked list has at least 7 matches");

  nlohmann::ordered_json rec;
  rec["source"] = best_file;
  rec["found"] = best->found;
  const auto& m = best->F.matrix();
  rec["F"] = nlohmann::ordered_json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) rec["F"].push_back(m(r, c));
  }
  rec["support"] = best->support;
  rec["iterations"] = best->iterations;
  rec["best_iteration"] = best->best_iteration;
  rec["seed"] = best->seed;
  rec["inliers"] = best->inliers;
  const std::string text = rec.dump(2) + '\n';
  if (o.result.empty()) {
    log << text;
  } else {
    detail::write_text(o.result, text);
    log << "support " << best->support << " from " << best_file << '\n';
  }
  return kOk;
}

inline int cmd_train(const Options& o, std::ostream& log) {
  std::vector<std::string> schema;
  if (o.schema == "2kpmd") {
    schema = twokp_schema();
  } else if (o.schema == "kpmd") {
    schema = kpmd_schema();
  } else {
    throw ParseError("--schema must be 2kpmd or kpmd");
  }
  std::ifstream in(o.data);
  if (!in) throw ParseError("cannot open " + o.data);
  const auto data = read_dataset_csv(in, schema);
  if (data.size() == 0) throw InsufficientData("training file has no rows");
  TreeParams tp;
  tp.min_leaf = o.min_leaf;
  const auto model = train_tree(data, tp);
  save_model(model, o.model_out);
  const auto cv = cross_validate(data, o.folds, o.tun.seed, tp);
  log << "rows " << data.size() << ", nodes " << model.nodes.size() << '\n'
      << o.folds << "-fold CV: accuracy " << cv.accuracy << ", precision " << cv.precision
      << ", recall " << cv.recall << '\n';
  return kOk;
}

/// Labeled 2kpmd and kpmd CSVs (plus the models trained on them) from
/// synthetic scenes.
inline int cmd_make_training(const Options& o, std::ostream& log) {
  const SceneConfig base = detail::read_scene_config(o.scene);
  std::vector<SyntheticScene> scenes;
  for (std::size_t i = 0; i < o.count; ++i) {
    SceneConfig c = base;
    c.seed = derive_seed(base.seed, "training#" + std::to_string(i));
    scenes.push_back(gen_scene(c));
  }
  TreeParams tp;
  tp.min_leaf = o.min_leaf;
  const auto t = train_models(scenes, o.tun.pipeline(), tp);
  const auto dir = detail::ensure_dir(o.out_dir);
  std::ofstream a(dir / "twokp_training.csv", std::ios::binary);
  write_dataset_csv(t.twokp, a);
  std::ofstream b(dir / "kpmd_training.csv", std::ios::binary);
  write_dataset_csv(t.kpmd, b);
  save_model(t.models.twokp, dir / "twokp_model.json");
  save_model(t.models.kpmd, dir / "kpmd_model.json");
  log << "2kpmd rows " << t.twokp.size() << ", kpmd rows " << t.kpmd.size() << '\n';
  return kOk;
}

inline int cmd_bench(const Options& o, std::ostream& log) {
  const Manifest manifest = load_manifest(o.manifest);
  Models models;
  const bool from_flags = !o.twokp_model.empty() || !o.kpmd_model.empty();
  if (from_flags) {
    models = detail::load_models(o);
  } else if (manifest.twokp_model && manifest.kpmd_model) {
    models = {load_model(*manifest.twokp_model, twokp_schema()),
              load_model(*manifest.kpmd_model, kpmd_schema())};
  } else if (!manifest.training.empty()) {
    std::vector<SyntheticScene> scenes;
    for (const auto& c : manifest.training) scenes.push_back(gen_scene(c));
    models = train_models(scenes, o.tun.pipeline()).models;
  } else {
    throw ParseError("manifest names neither models nor training scenes");
  }
  BenchOptions bo;
  bo.pipeline = o.tun.pipeline();
  bo.timing = o.timing;
  bo.include_ablation = o.ablation;
  const auto report = run_benchmark(manifest, models, bo);
  const auto dir = detail::ensure_dir(o.out_dir);
  std::ostringstream csv, ranking, summary;
  write_report_csv(report, csv);
  write_ranking_csv(report, ranking);
  write_summary(report, summary);
  detail::write_text(dir / "report.csv", csv.str());
  detail::write_text(dir / "ranking.csv", ranking.str());
  detail::write_text(dir / "summary.txt", summary.str());
  log << summary.str();
  return kOk;
}

/// Writes a synthetic pair as feature files: image1.epf, image2.epf, the
/// ground-truth correspondences and F, and the true index pairs.
inline int cmd_gen_scene(const Options& o, std::ostream& log) {
  const auto scene = gen_scene(detail::read_scene_config(o.scene));
  const auto dir = detail::ensure_dir(o.out_dir);
  save_features(scene.f1, dir / "image1.epf");
  save_features(scene.f2, dir / "image2.epf");
  std::ofstream gt(dir / "gt.txt", std::ios::binary);
  write_gt_pairs(scene.gt_pairs, gt);
  nlohmann::ordered_json f;
  f["F"] = nlohmann::ordered_json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) f["F"].push_back(scene.F.matrix()(r, c));
  }
  f["roll"] = scene.config.roll;
  detail::write_text(dir / "truth.json", f.dump(2) + '\n');
  std::ofstream pairs(dir / "correspondences.txt", std::ios::binary);
  for (const auto& [i1, i2] : scene.true_correspondences()) pairs << i1 << ' ' << i2 << '\n';
  log << "image1 " << scene.f1.size() << " features, image2 " << scene.f2.size()
      << " features\n";
  return kOk;
}

/// Answers extraction requests for a synthetic scene (a stand-in for the
/// detector adapter).
inline int cmd_fulfill(const Options& o, std::ostream& log) {
  const auto scene = gen_scene(detail::read_scene_config(o.scene));
  std::ifstream in(o.request);
  if (!in) throw ParseError("cannot open " + o.request);
  std::string line;
  long record = 0;
  while (std::getline(in, line)) {
    ++record;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json r;
    try {
      r = nlohmann::json::parse(line);
      if (r.at("mode").get<std::string>() != "fixed") throw ParseError("mode must be fixed", record);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed request: ") + e.what(), record);
    }
    const std::string image = r.at("image").get<std::string>();
    const double angle = r.at("angle_rad").get<double>();
    int which = 0;
    if (image == scene.f1.image_id) which = 1;
    if (image == scene.f2.image_id) which = 2;
    if (which == 0) throw ParseError("request names unknown image '" + image + "'", record);
    std::filesystem::path out = r.contains("output")
                                    ? std::filesystem::path(r.at("output").get<std::string>())
                                    : std::filesystem::path(fixed_file_name(image, angle));
    if (!o.out_dir.empty()) out = detail::ensure_dir(o.out_dir) / out.filename();
    save_features(scene.fixed(which, angle), out);
    log << "wrote " << out.string() << '\n';
  }
  return kOk;
}

namespace detail {

inline void add_pipeline_flags(CLI::App* sub, Tunables& t) {
  sub->add_option("--ratio-max", t.ratio_max, "Lowe ratio-test threshold")
      ->capture_default_str();
  sub->add_option("--stop-sim", t.stop_sim, "clustering stop similarity")
      ->capture_default_str();
  sub->add_option("--k1", t.k1, "nearest neighbours per 2keypoint")->capture_default_str();
  sub->add_option("--k2", t.k2, "2keypoint radius in feature scales")->capture_default_str();
  sub->add_option("--k3", t.k3, "same-cluster neighbours per 2keypoint")
      ->capture_default_str();
  sub->add_option("--k-2kp", t.k_2kp, "top 2keypoint matches kept")->capture_default_str();
  sub->add_option("--tau", t.tau, "sfm support threshold (px)")->capture_default_str();
  sub->add_option("--threads", t.threads, "threads for sfm counting")->capture_default_str();
  sub->add_flag("--always-two-branches", t.always_two_branches,
                "run the zero branch even when alpha_exp is near zero");
}

inline void add_ransac_flags(CLI::App* sub, Tunables& t) {
  sub->add_option("--inlier-tau", t.inlier_tau, "estimator inlier threshold (px)")
      ->capture_default_str();
  sub->add_option("--max-iters", t.max_iters, "estimator iterations")->capture_default_str();
  sub->add_option("--seed", t.seed, "random seed")->capture_default_str();
}

inline void add_model_flags(CLI::App* sub, Options& o) {
  sub->add_option("--twokp-model", o.twokp_model, "2kpmd classifier model");
  sub->add_option("--kpmd-model", o.kpmd_model, "kpmd classifier model");
}

}  // namespace detail

/// Parses `args` (args[0] is the program name) and runs one subcommand.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out,
                   std::ostream& err) {
  CLI::App app{"Putative-match preprocessing for fundamental matrix estimation", "epipre"};
  app.set_config("--config", "", "INI/TOML file setting any option");
  app.require_subcommand(1);
  Options o;
  int (*command)(const Options&, std::ostream&) = nullptr;
  auto bind = [&](CLI::App* sub, int (*fn)(const Options&, std::ostream&)) {
    sub->callback([&command, fn] { command = fn; });
  };

  auto* match = app.add_subcommand("match", "rank putative matches of an image pair");
  match->add_option("--features1", o.features1, "natural features of image 1")->required();
  match->add_option("--features2", o.features2, "natural features of image 2")->required();
  match->add_option("--fixed-dir", o.fixed_dir,
                    "directory of fixed-orientation files (default: next to features1)");
  match->add_option("--out", o.out_dir, "output directory")->required();
  detail::add_model_flags(match, o);
  detail::add_pipeline_flags(match, o.tun);
  bind(match, cmd_match);

  auto* estimate = app.add_subcommand("estimate", "estimate F from ranked match lists");
  estimate->add_option("--ranked", o.ranked, "ranked CSV per branch")->required();
  estimate->add_option("--out", o.result, "result record (default: stdout)");
  detail::add_ransac_flags(estimate, o.tun);
  bind(estimate, cmd_estimate);

  auto* train = app.add_subcommand("train", "train a classifier from a labeled CSV");
  train->add_option("--schema", o.schema, "2kpmd or kpmd")->required();
  train->add_option("--data", o.data, "labeled CSV")->required();
  train->add_option("--out", o.model_out, "model file")->required();
  train->add_option("--folds", o.folds, "cross-validation folds")->capture_default_str();
  train->add_option("--min-leaf", o.min_leaf, "minimum rows per leaf")->capture_default_str();
  train->add_option("--seed", o.tun.seed, "fold shuffling seed")->capture_default_str();
  bind(train, cmd_train);

  auto* make = app.add_subcommand("make-training", "labeled training CSVs from synthetic scenes");
  make->add_option("--scene", o.scene, "scene config (JSON)")->required();
  make->add_option("--count", o.count, "number of scenes")->capture_default_str();
  make->add_option("--out", o.out_dir, "output directory")->required();
  make->add_option("--min-leaf", o.min_leaf, "minimum rows per leaf")->capture_default_str();
  detail::add_pipeline_flags(make, o.tun);
  bind(make, cmd_make_training);

  auto* bench = app.add_subcommand("bench", "run a benchmark manifest");
  bench->add_option("--manifest", o.manifest, "manifest (JSON)")->required();
  bench->add_option("--out", o.out_dir, "output directory")->required();
  bench->add_flag("--timing", o.timing, "record wall-clock times (makes reports non-reproducible)");
  bench->add_flag("--ablation", o.ablation, "also report the largest-support candidate");
  detail::add_model_flags(bench, o);
  detail::add_pipeline_flags(bench, o.tun);
  detail::add_ransac_flags(bench, o.tun);
  bind(bench, cmd_bench);

  auto* gen = app.add_subcommand("gen-scene", "write a synthetic pair as feature files");
  gen->add_option("--scene", o.scene, "scene config (JSON)")->required();
  gen->add_option("--out", o.out_dir, "output directory")->required();
  bind(gen, cmd_gen_scene);

  auto* fulfill = app.add_subcommand("fulfill", "answer extraction requests for a synthetic pair");
  fulfill->add_option("--scene", o.scene, "scene config (JSON)")->required();
  fulfill->add_option("--request", o.request, "extraction request file")->required();
  fulfill->add_option("--out", o.out_dir, "output directory (default: request paths)");
  bind(fulfill, cmd_fulfill);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kParseError;
  }

  try {
    return command(o, out);
  } catch (const ExtractionRequired& e) {
    err << "error: " << e.what() << '\n';
    return kExtractionRequest;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << '\n';
    return kParseError;
  } catch (const ModelLoadError& e) {
    err << "parse error: " << e.what() << '\n';
    return kParseError;
  } catch (const InsufficientData& e) {
    err << "insufficient data: " << e.what() << '\n';
    return kInsufficientData;
  } catch (const ModelSchemaError& e) {
    err << "schema error: " << e.what() << '\n';
    return kSchemaError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace epipre::cli
