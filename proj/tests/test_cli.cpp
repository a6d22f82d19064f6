#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "epipre/bench.hpp"
#include "epipre/cli.hpp"

using namespace epipre;
namespace fs = std::filesystem;

namespace {

const char* kHard =
    R"({"num_points":150,"pixel_noise":0.5,"orientation_noise_deg":3,"view_noise":0.18,)"
    R"("obs_noise":0.03,"prototype_noise":0.03,"outlier_features":1500,"repeat_groups":25,)"
    R"("repeat_size":8,"rotated_variants":4,"dropout":0.2,"roll":0.5,"baseline":3)";

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "epipre");
  std::ostringstream out, err;
  const int code = cli::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

fs::path fresh(const std::string& name) {
  const auto d = fs::temp_directory_path() / "epipre_cli_test" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// Shared inputs, built on first use: a hard scene as feature files, models
// trained from two other hard scenes, and the completed match outputs.
struct Workspace {
  fs::path root, scene_json, pair, models, matched;

  static const Workspace& get() {
    static const Workspace w = build();
    return w;
  }

  std::string twokp() const { return (models / "twokp_model.json").string(); }
  std::string kpmd() const { return (models / "kpmd_model.json").string(); }

 private:
  static Workspace build() {
    Workspace w;
    w.root = fs::temp_directory_path() / "epipre_cli_test" / "workspace";
    w.scene_json = w.root / "scene.json";
    w.pair = w.root / "pair";
    w.models = w.root / "models";
    w.matched = w.root / "matched";
    // Reused across test processes of the same build only.
    const std::string stamp = __DATE__ " " __TIME__;
    if (fs::exists(w.root / "complete") && slurp(w.root / "complete") == stamp) return w;
    fs::remove_all(w.root);
    fs::create_directories(w.root);
    write(w.scene_json, std::string(kHard) + ",\"seed\":808}");
    write(w.root / "training.json", std::string(kHard) + ",\"seed\":909}");
    expect_ok(run({"gen-scene", "--scene", w.scene_json.string(), "--out", w.pair.string()}));
    expect_ok(run({"make-training", "--scene", (w.root / "training.json").string(), "--count", "2",
                   "--out", w.models.string()}));
    const std::vector<std::string> match = {
        "match", "--features1", (w.pair / "image1.epf").string(), "--features2",
        (w.pair / "image2.epf").string(), "--twokp-model", w.twokp(), "--kpmd-model", w.kpmd(),
        "--out", w.matched.string()};
    if (run(match).code == cli::kExtractionRequest) {
      expect_ok(run({"fulfill", "--scene", w.scene_json.string(), "--request",
                     (w.matched / cli::kRequestFile).string()}));
    }
    expect_ok(run(match));
    write(w.root / "complete", stamp);
    return w;
  }

  static void expect_ok(const Run& r) {
    if (r.code != 0) throw std::runtime_error("workspace step failed: " + r.err);
  }
};

std::set<IndexPair> truth_pairs(const fs::path& file) {
  std::set<IndexPair> out;
  std::ifstream in(file);
  std::uint32_t a, b;
  while (in >> a >> b) out.emplace(a, b);
  return out;
}

double p_at_100(const std::vector<IndexPair>& ranked, const std::set<IndexPair>& truth) {
  std::vector<bool> labels;
  for (const auto& p : ranked) labels.push_back(truth.count(p) > 0);
  return precision_at(labels, 100);
}

std::vector<IndexPair> csv_pairs(const fs::path& file) {
  std::ifstream in(file);
  std::vector<IndexPair> out;
  for (const auto& r : read_ranked_csv(in)) out.emplace_back(r.i1, r.i2);
  return out;
}

}  // namespace

TEST(Cli, ArgumentErrorsExit2) {
  EXPECT_EQ(run({}).code, cli::kParseError);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kParseError);
  EXPECT_EQ(run({"estimate"}).code, cli::kParseError);
  EXPECT_EQ(run({"train", "--schema", "2kpmd", "--data", "x", "--out", "y", "--folds", "ten"}).code,
            cli::kParseError);
  const auto help = run({"--help"});
  EXPECT_EQ(help.code, 0);
  EXPECT_NE(help.out.find("match"), std::string::npos);
}

TEST(Cli, GenSceneMatchesLibraryScene) {
  const auto& w = Workspace::get();
  auto cfg = scene_config_from_json(nlohmann::json::parse(slurp(w.scene_json)));
  const auto scene = gen_scene(cfg);
  EXPECT_EQ(slurp(w.pair / "image1.epf"), format_features(scene.f1));
  EXPECT_EQ(slurp(w.pair / "image2.epf"), format_features(scene.f2));
  std::ifstream gt(w.pair / "gt.txt");
  EXPECT_EQ(read_gt_pairs(gt).size(), cfg.gt_points);
  const auto truth = truth_pairs(w.pair / "correspondences.txt");
  EXPECT_EQ(truth.size(), scene.true_correspondences().size());
  const auto j = nlohmann::json::parse(slurp(w.pair / "truth.json"));
  EXPECT_EQ(j.at("F").size(), 9u);
}

TEST(Cli, MissingExtractionExits3WithRequestFile) {
  const auto& w = Workspace::get();
  const auto dir = fresh("request");
  fs::copy_file(w.pair / "image1.epf", dir / "image1.epf");
  fs::copy_file(w.pair / "image2.epf", dir / "image2.epf");
  const std::vector<std::string> match = {
      "match", "--features1", (dir / "image1.epf").string(), "--features2",
      (dir / "image2.epf").string(), "--twokp-model", w.twokp(), "--kpmd-model", w.kpmd(),
      "--out", (dir / "out").string()};
  ASSERT_EQ(run(match).code, cli::kExtractionRequest);

  std::ifstream in(dir / "out" / cli::kRequestFile);
  std::vector<nlohmann::json> reqs;
  for (std::string line; std::getline(in, line);) reqs.push_back(nlohmann::json::parse(line));
  ASSERT_EQ(reqs.size(), 3u);
  for (const auto& r : reqs) EXPECT_EQ(r.at("mode"), "fixed");
  EXPECT_EQ(reqs[0].at("image"), "image1");
  EXPECT_EQ(reqs[0].at("angle_rad"), 0.0);
  EXPECT_EQ(reqs[1].at("image"), "image2");
  EXPECT_NEAR(reqs[1].at("angle_rad").get<double>(), 0.5, deg2rad(5.0));
  EXPECT_EQ(reqs[2].at("image"), "image2");
  EXPECT_EQ(reqs[2].at("angle_rad"), 0.0);

  // Answer the requests and match again.
  ASSERT_EQ(run({"fulfill", "--scene", w.scene_json.string(), "--request",
                 (dir / "out" / cli::kRequestFile).string()})
                .code,
            0);
  for (const auto& r : reqs) {
    const auto f = load_features(r.at("output").get<std::string>());
    EXPECT_EQ(f.mode, OrientationMode::kFixed);
    EXPECT_EQ(f.fixed_angle, r.at("angle_rad").get<double>());
    EXPECT_EQ(slurp(r.at("output").get<std::string>()).rfind("EPF1 ", 0), 0u);
  }
  EXPECT_EQ(run(match).code, 0);
  EXPECT_EQ(slurp(dir / "out" / "ranked_alpha_exp.csv"),
            slurp(w.matched / "ranked_alpha_exp.csv"));
}

TEST(Cli, MatchWritesRankedListsAndRoll) {
  const auto& w = Workspace::get();
  const auto roll = nlohmann::json::parse(slurp(w.matched / "roll.json"));
  EXPECT_NEAR(roll.at("alpha_exp_deg").get<double>(), rad2deg(0.5), 5.0);
  ASSERT_EQ(roll.at("branches").size(), 2u);
  EXPECT_EQ(roll["branches"][0]["branch"], "alpha_exp");
  EXPECT_EQ(roll["branches"][1]["branch"], "zero");
  for (const char* b : {"alpha_exp", "zero"}) {
    EXPECT_TRUE(fs::exists(w.matched / (std::string("ranked_") + b + ".csv")));
    EXPECT_TRUE(fs::exists(w.matched / (std::string("twokp_") + b + ".csv")));
  }
}

TEST(Cli, RankedListBeatsDistanceRatioBaseline) {
  const auto& w = Workspace::get();
  const auto truth = truth_pairs(w.pair / "correspondences.txt");
  const auto f1 = load_features(w.pair / "image1.epf"), f2 = load_features(w.pair / "image2.epf");
  std::vector<IndexPair> baseline;
  for (const auto& m : rank_by_distance_ratio(standard_matches(f1, f2).xl)) {
    baseline.emplace_back(m.i1, m.i2);
  }
  const double ours = p_at_100(csv_pairs(w.matched / "ranked_alpha_exp.csv"), truth);
  const double dr = p_at_100(baseline, truth);
  EXPECT_GT(ours, dr);
}

TEST(Cli, EstimateRecoversGeometryAndIsDeterministic) {
  const auto& w = Workspace::get();
  const auto dir = fresh("estimate");
  const std::vector<std::string> args = {
      "estimate", "--ranked", (w.matched / "ranked_alpha_exp.csv").string(), "--ranked",
      (w.matched / "ranked_zero.csv").string(), "--seed", "3"};
  auto a = args, b = args;
  a.insert(a.end(), {"--out", (dir / "a.json").string()});
  b.insert(b.end(), {"--out", (dir / "b.json").string()});
  ASSERT_EQ(run(a).code, 0);
  ASSERT_EQ(run(b).code, 0);
  EXPECT_EQ(slurp(dir / "a.json"), slurp(dir / "b.json"));

  const auto rec = nlohmann::json::parse(slurp(dir / "a.json"));
  Eigen::Matrix3d F;
  for (int k = 0; k < 9; ++k) F(k / 3, k % 3) = rec.at("F")[static_cast<std::size_t>(k)].get<double>();
  std::ifstream gt(w.pair / "gt.txt");
  EXPECT_LT(evaluate(FundamentalMatrix(F), read_gt_pairs(gt)).mean_root_sampson, kSuccessThresholdPx);
  EXPECT_EQ(rec.at("inliers").size(), rec.at("support").get<std::size_t>());
  EXPECT_LE(rec.at("best_iteration").get<std::size_t>(), rec.at("iterations").get<std::size_t>());

  // Inliers re-verify against the reported F.
  std::ifstream in(rec.at("source").get<std::string>());
  const auto rows = read_ranked_csv(in);
  for (const auto& i : rec.at("inliers")) {
    EXPECT_LT(sampson_distance(FundamentalMatrix(F), rows.at(i.get<std::size_t>()).points), 2.0);
  }
}

TEST(Cli, EstimateWithTooFewMatchesExits4) {
  const auto& w = Workspace::get();
  const auto dir = fresh("few");
  std::ifstream in(w.matched / "ranked_zero.csv");
  std::string text, line;
  for (int k = 0; k < 7 && std::getline(in, line); ++k) text += line + '\n';  // header + 6
  write(dir / "six.csv", text);
  EXPECT_EQ(run({"estimate", "--ranked", (dir / "six.csv").string()}).code,
            cli::kInsufficientData);
  write(dir / "bad.csv", "i1,i2,x1,y1,x2,y2,sfm,d_r,t_k,prob,sources\n1,2,three\n");
  EXPECT_EQ(run({"estimate", "--ranked", (dir / "bad.csv").string()}).code, cli::kParseError);
  EXPECT_EQ(run({"estimate", "--ranked", (dir / "absent.csv").string()}).code, cli::kParseError);
}

TEST(Cli, TrainChecksSchemaAndIsDeterministic) {
  const auto& w = Workspace::get();
  const auto dir = fresh("train");
  const auto data = (w.models / "twokp_training.csv").string();
  EXPECT_EQ(run({"train", "--schema", "kpmd", "--data", data, "--out", (dir / "x.json").string()})
                .code,
            cli::kSchemaError);
  EXPECT_EQ(run({"train", "--schema", "3kpmd", "--data", data, "--out", (dir / "x.json").string()})
                .code,
            cli::kParseError);
  const auto a = run({"train", "--schema", "2kpmd", "--data", data, "--out",
                      (dir / "a.json").string(), "--seed", "4"});
  const auto b = run({"train", "--schema", "2kpmd", "--data", data, "--out",
                      (dir / "b.json").string(), "--seed", "4"});
  ASSERT_EQ(a.code, 0);
  ASSERT_EQ(b.code, 0);
  EXPECT_EQ(slurp(dir / "a.json"), slurp(dir / "b.json"));
  EXPECT_EQ(a.out, b.out);
  EXPECT_NE(a.out.find("10-fold CV: accuracy"), std::string::npos);
  // The CLI model equals the one make-training wrote from the same rows.
  EXPECT_EQ(load_model(dir / "a.json"), load_model(w.twokp()));

  write(dir / "empty.csv", "N1,N2,dist_r,angle_d,cluster_t,min_d,label\n");
  EXPECT_EQ(run({"train", "--schema", "2kpmd", "--data", (dir / "empty.csv").string(), "--out",
                 (dir / "e.json").string()})
                .code,
            cli::kInsufficientData);
}

TEST(Cli, ModelAndFeatureFileErrors) {
  const auto& w = Workspace::get();
  const auto dir = fresh("models");
  auto match = [&](const std::string& f1, const std::string& tk, const std::string& kp) {
    return run({"match", "--features1", f1, "--features2", (w.pair / "image2.epf").string(),
                "--twokp-model", tk, "--kpmd-model", kp, "--out", (dir / "out").string()})
        .code;
  };
  const auto img1 = (w.pair / "image1.epf").string();
  EXPECT_EQ(match(img1, w.kpmd(), w.kpmd()), cli::kSchemaError);
  EXPECT_EQ(match(img1, (dir / "none.json").string(), w.kpmd()), cli::kParseError);
  write(dir / "bad.epf", "EPF1 1 2 natural\n1 2 3 0 0.5 0\n");
  EXPECT_EQ(match((dir / "bad.epf").string(), w.twokp(), w.kpmd()), cli::kParseError);
  EXPECT_EQ(run({"match", "--features1", img1, "--features2", (w.pair / "image2.epf").string(),
                 "--twokp-model", w.twokp(), "--out", (dir / "out").string()})
                .code,
            cli::kParseError);
}

TEST(Cli, FulfillRejectsBadRequests) {
  const auto& w = Workspace::get();
  const auto dir = fresh("fulfill");
  write(dir / "unknown.json", R"({"image":"image9","mode":"fixed","angle_rad":0.0})" "\n");
  write(dir / "natural.json", R"({"image":"image1","mode":"natural","angle_rad":0.0})" "\n");
  write(dir / "junk.json", "{image: 1\n");
  for (const char* f : {"unknown.json", "natural.json", "junk.json", "absent.json"}) {
    EXPECT_EQ(run({"fulfill", "--scene", w.scene_json.string(), "--request",
                   (dir / f).string(), "--out", dir.string()})
                  .code,
              cli::kParseError)
        << f;
  }
  write(dir / "ok.json", R"({"image":"image2","mode":"fixed","angle_rad":1.3613568165555772})" "\n");
  ASSERT_EQ(run({"fulfill", "--scene", w.scene_json.string(), "--request",
                 (dir / "ok.json").string(), "--out", dir.string()})
                .code,
            0);
  const auto name = fixed_file_name("image2", 1.3613568165555772);
  EXPECT_EQ(name, "image2.fixed_78000.epf");
  const auto text = slurp(dir / name);
  EXPECT_EQ(text.substr(0, text.find('\n')).substr(text.find(" fixed ")), " fixed 1.3613568165555772");
}

TEST(Cli, BenchReportsAreByteIdentical) {
  const auto& w = Workspace::get();
  const auto dir = fresh("bench");
  nlohmann::json m;
  m["seed"] = 12;
  m["seeds_per_scene"] = 2;
  m["models"] = {{"twokp", w.twokp()}, {"kpmd", w.kpmd()}};
  m["scenes"] = nlohmann::json::array(
      {{{"name", "easy"}, {"config", {{"num_points", 200}, {"outlier_features", 100}, {"roll", 0.3}}}},
       {{"name", "broken"}, {"config", {{"baseline", -1}}}}});
  write(dir / "manifest.json", m.dump());
  for (const char* out : {"a", "b"}) {
    const auto r = run({"bench", "--manifest", (dir / "manifest.json").string(), "--out",
                        (dir / out).string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  for (const char* f : {"report.csv", "ranking.csv", "summary.txt"}) {
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
  const auto report = slurp(dir / "a" / "report.csv");
  EXPECT_EQ(report.substr(0, report.find('\n')),
            "scene,method,seed,mean_root_sampson,success,iterations,wall_ms");
  EXPECT_EQ(std::count(report.begin(), report.end(), '\n'), 1 + 2 * 3);
  EXPECT_NE(slurp(dir / "a" / "summary.txt").find("scenes[1]"), std::string::npos);

  write(dir / "bad.json", "{\"scenes\": [");
  EXPECT_EQ(run({"bench", "--manifest", (dir / "bad.json").string(), "--out", dir.string()}).code,
            cli::kParseError);
}

TEST(Cli, ConfigFileSetsOptions) {
  const auto& w = Workspace::get();
  const auto dir = fresh("config");
  const auto ranked = (w.matched / "ranked_zero.csv").string();
  write(dir / "run.ini", "[estimate]\nseed=9\nmax-iters=50\n");
  const auto a = run({"--config", (dir / "run.ini").string(), "estimate", "--ranked", ranked});
  const auto b = run({"estimate", "--ranked", ranked, "--seed", "9", "--max-iters", "50"});
  const auto c = run({"estimate", "--ranked", ranked});
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0);
  EXPECT_EQ(a.out, b.out);
  EXPECT_NE(a.out, c.out);
  EXPECT_EQ(nlohmann::json::parse(a.out).at("iterations"), 50);
}
