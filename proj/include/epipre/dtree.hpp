#pragma once

// Binary decision tree on numeric attributes with gain-ratio splits
// (C4.5-style, without error-based pruning). Leaves report Laplace-smoothed
// inlier probabilities, so predictions always lie strictly inside (0, 1).

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "epipre/errors.hpp"
#include "epipre/features.hpp"

namespace epipre {

struct LabeledDataset {
  std::vector<std::string> schema;
  std::vector<std::vector<double>> rows;
  std::vector<std::uint8_t> labels;  // 1 = inlier, 0 = outlier

  std::size_t size() const { return rows.size(); }

  void add(std::vector<double> row, bool inlier) {
    rows.push_back(std::move(row));
    labels.push_back(inlier ? 1 : 0);
  }
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;   // rows with value <= threshold
  int right = -1;
  std::uint32_t inliers = 0;
  std::uint32_t total = 0;

  bool is_leaf() const { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

struct TreeModel {
  std::vector<std::string> schema;
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  bool operator==(const TreeModel&) const = default;
};

struct TreeParams {
  // Minimum number of rows on each side of an admissible split.
  std::size_t min_leaf = 8;
};

namespace detail {

inline constexpr double kGainEps = 1e-12;

inline double entropy2(double pos, double total) {
  if (total <= 0.0) return 0.0;
  double h = 0.0;
  for (double c : {pos, total - pos}) {
    if (c > 0.0) {
      const double p = c / total;
      h -= p * std::log2(p);
    }
  }
  return h;
}

struct SplitScore {
  double gain = 0.0;
  double ratio = 0.0;
};

/// Information gain and gain ratio of a binary split given class counts.
inline SplitScore score_split(double left_pos, double left_n, double right_pos,
                              double right_n) {
  const double n = left_n + right_n;
  const double parent = entropy2(left_pos + right_pos, n);
  const double children = (left_n / n) * entropy2(left_pos, left_n) +
                          (right_n / n) * entropy2(right_pos, right_n);
  const double split_info = entropy2(left_n, n);
  SplitScore s;
  s.gain = parent - children;
  s.ratio = split_info > 0.0 ? s.gain / split_info : 0.0;
  return s;
}

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double ratio = 0.0;
};

inline Split best_split(const LabeledDataset& data,
                        const std::vector<std::uint32_t>& idx,
                        const TreeParams& params) {
  Split best;
  if (idx.size() < 2 * params.min_leaf) return best;
  const std::size_t dims = data.schema.size();
  std::vector<std::uint32_t> order(idx);
  double total_pos = 0.0;
  for (auto i : idx) total_pos += data.labels[i];
  const double n = static_cast<double>(idx.size());

  for (std::size_t f = 0; f < dims; ++f) {
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
      const double va = data.rows[a][f], vb = data.rows[b][f];
      return va < vb || (va == vb && a < b);
    });
    double left_pos = 0.0;
    for (std::size_t k = 0; k + 1 < order.size(); ++k) {
      left_pos += data.labels[order[k]];
      const double v = data.rows[order[k]][f];
      const double next = data.rows[order[k + 1]][f];
      if (v == next) continue;
      const double left_n = static_cast<double>(k + 1);
      const double right_n = n - left_n;
      if (left_n < static_cast<double>(params.min_leaf) ||
          right_n < static_cast<double>(params.min_leaf)) {
        continue;
      }
      const auto s = score_split(left_pos, left_n, total_pos - left_pos, right_n);
      if (s.gain <= kGainEps) continue;
      if (best.feature < 0 || s.ratio > best.ratio + kGainEps) {
        best.feature = static_cast<int>(f);
        best.threshold = 0.5 * (v + next);
        best.ratio = s.ratio;
      }
    }
  }
  return best;
}

inline int grow(const LabeledDataset& data, const std::vector<std::uint32_t>& idx,
                const TreeParams& params, std::vector<TreeNode>& nodes) {
  const int id = static_cast<int>(nodes.size());
  nodes.emplace_back();
  std::uint32_t pos = 0;
  for (auto i : idx) pos += data.labels[i];
  nodes[id].inliers = pos;
  nodes[id].total = static_cast<std::uint32_t>(idx.size());
  if (pos == 0 || pos == idx.size()) return id;

  const Split split = best_split(data, idx, params);
  if (split.feature < 0) return id;

  std::vector<std::uint32_t> left, right;
  for (auto i : idx) {
    (data.rows[i][split.feature] <= split.threshold ? left : right).push_back(i);
  }
  nodes[id].feature = split.feature;
  nodes[id].threshold = split.threshold;
  const int l = grow(data, left, params, nodes);
  const int r = grow(data, right, params, nodes);
  nodes[id].left = l;
  nodes[id].right = r;
  return id;
}

}  // namespace detail

inline void validate_dataset(const LabeledDataset& data) {
  if (data.rows.size() != data.labels.size()) {
    throw Error("dataset rows and labels differ in length");
  }
  for (const auto& r : data.rows) {
    if (r.size() != data.schema.size()) {
      throw ModelSchemaError("dataset row length differs from schema");
    }
  }
}

/// Greedy top-down induction. A node becomes a leaf when it is pure, when it
/// cannot be split into two children of at least `min_leaf` rows, or when no
/// split has positive information gain. Equal gain ratios resolve to the
/// lowest feature index, then the lowest threshold.
inline TreeModel train_tree(const LabeledDataset& data,
                            const TreeParams& params = {}) {
  validate_dataset(data);
  if (data.rows.empty()) throw Error("cannot train on an empty dataset");
  TreeModel model;
  model.schema = data.schema;
  std::vector<std::uint32_t> idx(data.rows.size());
  std::iota(idx.begin(), idx.end(), 0u);
  detail::grow(data, idx, params, model.nodes);
  return model;
}

inline void check_schema(const TreeModel& model,
                         const std::vector<std::string>& expected) {
  if (model.schema != expected) {
    std::string got, want;
    for (const auto& s : model.schema) got += s + ",";
    for (const auto& s : expected) want += s + ",";
    throw ModelSchemaError("model schema [" + got + "] does not match [" + want +
                           "]");
  }
}

inline const TreeNode& leaf_for(const TreeModel& model, std::span<const double> v) {
  if (v.size() != model.schema.size()) {
    throw ModelSchemaError("feature vector length does not match model schema");
  }
  if (model.nodes.empty()) throw ModelLoadError("model has no nodes");
  const TreeNode* node = &model.nodes[0];
  while (!node->is_leaf()) {
    node = &model.nodes[v[node->feature] <= node->threshold ? node->left
                                                             : node->right];
  }
  return *node;
}

/// Laplace-smoothed leaf estimate (inliers + 1) / (total + 2).
inline double predict_proba(const TreeModel& model, std::span<const double> v) {
  const auto& leaf = leaf_for(model, v);
  return (leaf.inliers + 1.0) / (leaf.total + 2.0);
}

struct CvMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

/// Stratified k-fold cross-validation; held-out rows are classified at 0.5.
inline CvMetrics cross_validate(const LabeledDataset& data, std::size_t k = 10,
                                std::uint64_t seed = 0,
                                const TreeParams& params = {}) {
  validate_dataset(data);
  if (k < 2 || k > data.rows.size()) {
    throw FoldError("fold count " + std::to_string(k) + " invalid for " +
                    std::to_string(data.rows.size()) + " rows");
  }
  std::vector<std::uint32_t> pos, neg;
  for (std::uint32_t i = 0; i < data.rows.size(); ++i) {
    (data.labels[i] ? pos : neg).push_back(i);
  }
  std::mt19937_64 rng(seed);
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  std::vector<std::size_t> fold(data.rows.size());
  std::size_t counter = 0;
  for (const auto* cls : {&pos, &neg}) {
    for (auto i : *cls) fold[i] = counter++ % k;
  }

  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t f = 0; f < k; ++f) {
    LabeledDataset train;
    train.schema = data.schema;
    std::vector<std::uint32_t> held;
    for (std::uint32_t i = 0; i < data.rows.size(); ++i) {
      if (fold[i] == f) {
        held.push_back(i);
      } else {
        train.rows.push_back(data.rows[i]);
        train.labels.push_back(data.labels[i]);
      }
    }
    if (train.rows.empty()) continue;
    const TreeModel model = train_tree(train, params);
    for (auto i : held) {
      const bool predicted = predict_proba(model, data.rows[i]) >= 0.5;
      const bool actual = data.labels[i] != 0;
      if (predicted && actual) ++tp;
      else if (predicted) ++fp;
      else if (actual) ++fn;
      else ++tn;
    }
  }
  CvMetrics m;
  const double total = static_cast<double>(tp + fp + tn + fn);
  m.accuracy = total > 0 ? static_cast<double>(tp + tn) / total : 0.0;
  m.precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  m.recall = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  return m;
}

inline constexpr const char* kModelFormat = "epipre-dtree";
inline constexpr int kModelVersion = 1;

inline nlohmann::ordered_json model_to_json(const TreeModel& model) {
  nlohmann::ordered_json j;
  j["format"] = kModelFormat;
  j["version"] = kModelVersion;
  j["schema"] = model.schema;
  auto nodes = nlohmann::ordered_json::array();
  for (const auto& n : model.nodes) {
    nlohmann::ordered_json o;
    if (!n.is_leaf()) {
      o["feature"] = n.feature;
      o["threshold"] = n.threshold;
      o["left"] = n.left;
      o["right"] = n.right;
    }
    o["inliers"] = n.inliers;
    o["total"] = n.total;
    nodes.push_back(std::move(o));
  }
  j["nodes"] = std::move(nodes);
  return j;
}

inline TreeModel model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kModelFormat) {
      throw ModelLoadError("not a decision-tree model file");
    }
    if (j.at("version").get<int>() != kModelVersion) {
      throw ModelLoadError("unsupported model version " + j.at("version").dump());
    }
    TreeModel m;
    m.schema = j.at("schema").get<std::vector<std::string>>();
    const int count = static_cast<int>(j.at("nodes").size());
    for (const auto& o : j.at("nodes")) {
      TreeNode n;
      if (o.contains("feature")) {
        n.feature = o.at("feature").get<int>();
        n.threshold = o.at("threshold").get<double>();
        n.left = o.at("left").get<int>();
        n.right = o.at("right").get<int>();
        if (n.feature < 0 || n.feature >= static_cast<int>(m.schema.size()) ||
            n.left <= 0 || n.right <= 0 || n.left >= count || n.right >= count) {
          throw ModelLoadError("model node references out of range");
        }
      }
      n.inliers = o.at("inliers").get<std::uint32_t>();
      n.total = o.at("total").get<std::uint32_t>();
      m.nodes.push_back(n);
    }
    if (m.nodes.empty()) throw ModelLoadError("model has no nodes");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ModelLoadError(std::string("malformed model: ") + e.what());
  }
}

inline void save_model(const TreeModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << model_to_json(model).dump(1) << '\n';
}

/// Loads a model; a non-empty `expected_schema` must match exactly.
inline TreeModel load_model(const std::filesystem::path& path,
                            const std::vector<std::string>& expected_schema = {}) {
  std::ifstream in(path);
  if (!in) throw ModelLoadError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ModelLoadError(std::string("malformed model: ") + e.what());
  }
  TreeModel m = model_from_json(j);
  if (!expected_schema.empty() && m.schema != expected_schema) {
    throw ModelSchemaError("model schema does not match the expected schema");
  }
  return m;
}

/// Training CSV: header `<schema...>,label`, label in {0,1}.
inline void write_dataset_csv(const LabeledDataset& data, std::ostream& out) {
  for (const auto& s : data.schema) out << s << ',';
  out << "label\n";
  std::string line;
  for (std::size_t i = 0; i < data.rows.size(); ++i) {
    line.clear();
    for (double v : data.rows[i]) {
      detail::append_double(line, v);
      line += ',';
    }
    line += data.labels[i] ? '1' : '0';
    out << line << '\n';
  }
}

inline LabeledDataset read_dataset_csv(std::istream& in,
                                       const std::vector<std::string>& schema) {
  LabeledDataset data;
  data.schema = schema;
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty training file", 0);
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      while (!tok.empty() && std::isspace(static_cast<unsigned char>(tok.back())))
        tok.pop_back();
      header.push_back(tok);
    }
  }
  std::vector<std::string> expected = schema;
  expected.push_back("label");
  if (header != expected) {
    throw ModelSchemaError("training CSV header does not match schema");
  }
  long rec = 0;
  while (std::getline(in, line)) {
    ++rec;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    std::vector<double> vals;
    while (std::getline(ss, tok, ',')) {
      double v = 0.0;
      if (!detail::parse_double(tok, v) || !std::isfinite(v)) {
        throw ParseError("malformed training value", rec);
      }
      vals.push_back(v);
    }
    if (vals.size() != expected.size()) {
      throw ParseError("wrong field count in training row", rec);
    }
    const double label = vals.back();
    if (label != 0.0 && label != 1.0) throw ParseError("label must be 0 or 1", rec);
    vals.pop_back();
    data.add(std::move(vals), label == 1.0);
  }
  return data;
}

}  // namespace epipre
