#pragma once

// Global ranking: candidate fundamental matrices from pairs of top 2keypoint
// matches, per-match support counts (sfm), fusion with d_r and t_k into the
// kpmd vector, and final probability scoring.

#include <algorithm>
#include <array>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "epipre/dtree.hpp"
#include "epipre/geometry.hpp"
#include "epipre/types.hpp"

namespace epipre {

inline const std::vector<std::string>& kpmd_schema() {
  static const std::vector<std::string> kSchema = {"sfm", "d_r", "t_k"};
  return kSchema;
}

struct KpmdVector {
  double sfm = 0.0;
  double d_r = 1.0;
  double t_k = 0.0;

  std::vector<double> as_vector() const { return {sfm, d_r, t_k}; }
};

struct CandidateSet {
  std::vector<FundamentalMatrix> matrices;
  std::size_t skipped = 0;  // pairs sharing a feature or degenerate
};

/// One F per unordered pair of the given 2keypoint matches.
inline CandidateSet generate_candidate_fs(const std::vector<TwoKeypointMatch>& top,
                                          const FeatureSet& f1,
                                          const FeatureSet& f2,
                                          double offset_scales = 5.0) {
  CandidateSet out;
  if (top.size() >= 2) out.matrices.reserve(top.size() * (top.size() - 1) / 2);
  for (std::size_t i = 0; i < top.size(); ++i) {
    for (std::size_t j = i + 1; j < top.size(); ++j) {
      try {
        out.matrices.push_back(f_from_two_2kp(top[i], top[j], f1, f2, offset_scales));
      } catch (const DegenerateConfiguration&) {
        ++out.skipped;
      }
    }
  }
  return out;
}

inline PointPair point_pair(const PutativeMatch& m, const FeatureSet& f1,
                            const FeatureSet& f2) {
  return {Eigen::Vector2d(f1[m.i1].x, f1[m.i1].y),
          Eigen::Vector2d(f2[m.i2].x, f2[m.i2].y)};
}

namespace detail {

/// Matrices stored entry-major so the inner loop over matrices vectorizes.
struct MatrixColumns {
  std::array<std::vector<double>, 9> e;
  std::size_t count = 0;

  explicit MatrixColumns(const std::vector<FundamentalMatrix>& fs) : count(fs.size()) {
    for (auto& v : e) v.resize(fs.size());
    for (std::size_t k = 0; k < fs.size(); ++k) {
      const auto& m = fs[k].matrix();
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) e[3 * r + c][k] = m(r, c);
      }
    }
  }
};

inline std::uint32_t count_support(const MatrixColumns& cols, double x1, double y1,
                                   double x2, double y2, double tau2) {
  const double* f0 = cols.e[0].data();
  const double* f1 = cols.e[1].data();
  const double* f2 = cols.e[2].data();
  const double* f3 = cols.e[3].data();
  const double* f4 = cols.e[4].data();
  const double* f5 = cols.e[5].data();
  const double* f6 = cols.e[6].data();
  const double* f7 = cols.e[7].data();
  const double* f8 = cols.e[8].data();
  std::uint32_t count = 0;
  for (std::size_t k = 0; k < cols.count; ++k) {
    const double a0 = f0[k] * x1 + f1[k] * y1 + f2[k];
    const double a1 = f3[k] * x1 + f4[k] * y1 + f5[k];
    const double a2 = f6[k] * x1 + f7[k] * y1 + f8[k];
    const double b0 = f0[k] * x2 + f3[k] * y2 + f6[k];
    const double b1 = f1[k] * x2 + f4[k] * y2 + f7[k];
    const double num = x2 * a0 + y2 * a1 + a2;
    const double den = a0 * a0 + a1 * a1 + b0 * b0 + b1 * b1;
    count += (num * num < tau2 * den) ? 1u : 0u;
  }
  return count;
}

}  // namespace detail

/// sfm(x) = number of matrices with sampson_distance(F, x) < tau. Work is
/// split over `threads` by match; counts are integers, so the result does not
/// depend on the split.
inline std::vector<std::uint32_t> count_sfm(const std::vector<PointPair>& points,
                                            const std::vector<FundamentalMatrix>& fs,
                                            double tau = 2.0, unsigned threads = 1) {
  std::vector<std::uint32_t> sfm(points.size(), 0);
  if (fs.empty() || points.empty()) return sfm;
  const detail::MatrixColumns cols(fs);
  const double tau2 = tau * tau;
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& p = points[i];
      sfm[i] = detail::count_support(cols, p.x1.x(), p.x1.y(), p.x2.x(), p.x2.y(),
                                     tau2);
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(points.size())));
  if (threads == 1) {
    work(0, points.size());
    return sfm;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (points.size() + threads - 1) / threads;
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t b = t * chunk;
    const std::size_t e = std::min(points.size(), b + chunk);
    if (b >= e) break;
    pool.emplace_back(work, b, e);
  }
  for (auto& th : pool) th.join();
  return sfm;
}

inline std::vector<std::uint32_t> count_sfm(const std::vector<PutativeMatch>& x,
                                            const FeatureSet& f1, const FeatureSet& f2,
                                            const std::vector<FundamentalMatrix>& fs,
                                            double tau = 2.0, unsigned threads = 1) {
  std::vector<PointPair> pts;
  pts.reserve(x.size());
  for (const auto& m : x) pts.push_back(point_pair(m, f1, f2));
  return count_sfm(pts, fs, tau, threads);
}

/// Index of the candidate supported by the most points (ties: lowest index).
/// Only used for the largest-support ablation.
inline std::size_t best_supported_candidate(const std::vector<PointPair>& points,
                                            const std::vector<FundamentalMatrix>& fs,
                                            double tau = 2.0) {
  if (fs.empty()) throw InsufficientData("no candidate matrices");
  std::size_t best = 0, best_support = 0;
  for (std::size_t k = 0; k < fs.size(); ++k) {
    std::size_t s = 0;
    for (const auto& p : points) s += sampson_distance(fs[k], p) < tau ? 1 : 0;
    if (s > best_support) {
      best_support = s;
      best = k;
    }
  }
  return best;
}

struct KpmdEntry {
  PutativeMatch match;
  KpmdVector kpmd;
};

/// Union of X, X_L and X_B keyed by index pair. Scores present in any source
/// are merged; absent fields fall back to sfm = 0, d_r = 1, t_k = 0.
inline std::vector<KpmdEntry> build_kpmd(const std::vector<PutativeMatch>& x,
                                         const std::vector<PutativeMatch>& xl,
                                         const std::vector<PutativeMatch>& xb,
                                         const std::vector<std::uint32_t>& sfm) {
  if (sfm.size() != x.size()) throw Error("sfm counts do not align with X");
  std::map<IndexPair, PutativeMatch> merged;
  auto merge = [&](const PutativeMatch& src) {
    auto [it, inserted] = merged.try_emplace(src.key(), src);
    if (inserted) return;
    PutativeMatch& dst = it->second;
    dst.sources |= src.sources;
    if (src.m_k) dst.m_k = src.m_k;
    if (src.m_k1) dst.m_k1 = src.m_k1;
    if (src.m_k2) dst.m_k2 = src.m_k2;
    if (src.d_r) dst.d_r = src.d_r;
    if (src.t_k) dst.t_k = src.t_k;
    if (src.sfm) dst.sfm = src.sfm;
  };
  for (std::size_t i = 0; i < x.size(); ++i) {
    PutativeMatch m = x[i];
    m.sfm = sfm[i];
    merge(m);
  }
  for (const auto& m : xl) merge(m);
  for (const auto& m : xb) merge(m);

  std::vector<KpmdEntry> out;
  out.reserve(merged.size());
  for (auto& [key, m] : merged) {
    KpmdEntry e;
    e.kpmd.sfm = m.sfm ? static_cast<double>(*m.sfm) : 0.0;
    e.kpmd.d_r = m.d_r.value_or(1.0);
    e.kpmd.t_k = m.t_k.value_or(0.0);
    e.match = std::move(m);
    out.push_back(std::move(e));
  }
  return out;
}

/// Assigns kpmd-classifier probabilities and sorts descending, ties by index
/// pair.
inline std::vector<KpmdEntry> score_matches(std::vector<KpmdEntry> entries,
                                            const TreeModel& model) {
  check_schema(model, kpmd_schema());
  for (auto& e : entries) e.match.prob = predict_proba(model, e.kpmd.as_vector());
  std::sort(entries.begin(), entries.end(), [](const KpmdEntry& a, const KpmdEntry& b) {
    if (*a.match.prob != *b.match.prob) return *a.match.prob > *b.match.prob;
    return a.match.key() < b.match.key();
  });
  return entries;
}

inline std::string format_sources(std::uint8_t s) {
  std::string out;
  auto add = [&](const char* name) {
    if (!out.empty()) out += '|';
    out += name;
  };
  if (s & kInX) add("X");
  if (s & kInXL) add("XL");
  if (s & kInXB) add("XB");
  return out;
}

inline std::uint8_t parse_sources(const std::string& s) {
  std::uint8_t out = 0;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, '|')) {
    if (tok == "X") out |= kInX;
    else if (tok == "XL") out |= kInXL;
    else if (tok == "XB") out |= kInXB;
    else if (!tok.empty()) throw ParseError("unknown match source '" + tok + "'");
  }
  return out;
}

/// Ranked match CSV: i1,i2,x1,y1,x2,y2,sfm,d_r,t_k,prob,sources
inline void write_ranked_csv(const std::vector<KpmdEntry>& ranked, const FeatureSet& f1,
                             const FeatureSet& f2, std::ostream& out) {
  out << "i1,i2,x1,y1,x2,y2,sfm,d_r,t_k,prob,sources\n";
  std::string line;
  for (const auto& e : ranked) {
    const auto& m = e.match;
    line = std::to_string(m.i1) + ',' + std::to_string(m.i2);
    for (double v : {f1[m.i1].x, f1[m.i1].y, f2[m.i2].x, f2[m.i2].y, e.kpmd.sfm,
                     e.kpmd.d_r, e.kpmd.t_k, m.prob.value_or(0.0)}) {
      line += ',';
      detail::append_double(line, v);
    }
    line += ',' + format_sources(m.sources);
    out << line << '\n';
  }
}

struct RankedRow {
  std::uint32_t i1 = 0;
  std::uint32_t i2 = 0;
  PointPair points;
  KpmdVector kpmd;
  double prob = 0.0;
  std::uint8_t sources = 0;
};

inline std::vector<RankedRow> read_ranked_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) ||
      line.rfind("i1,i2,x1,y1,x2,y2,sfm,d_r,t_k,prob,sources", 0) != 0) {
    throw ParseError("ranked CSV header missing", 0);
  }
  std::vector<RankedRow> rows;
  long rec = 0;
  while (std::getline(in, line)) {
    ++rec;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string tok;
    std::vector<std::string> toks;
    while (std::getline(ss, tok, ',')) toks.push_back(tok);
    if (toks.size() == 10) toks.emplace_back();
    if (toks.size() != 11) throw ParseError("wrong field count", rec);
    std::array<double, 10> v{};
    for (int k = 0; k < 10; ++k) {
      if (!detail::parse_double(toks[k], v[k]) || !std::isfinite(v[k])) {
        throw ParseError("malformed ranked value", rec);
      }
    }
    RankedRow r;
    r.i1 = static_cast<std::uint32_t>(v[0]);
    r.i2 = static_cast<std::uint32_t>(v[1]);
    r.points = {Eigen::Vector2d(v[2], v[3]), Eigen::Vector2d(v[4], v[5])};
    r.kpmd = {v[6], v[7], v[8]};
    r.prob = v[9];
    r.sources = parse_sources(toks[10]);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace epipre
