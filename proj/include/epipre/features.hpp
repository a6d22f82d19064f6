#pragma once

// Feature data model: descriptor similarity, exhaustive nearest-neighbour
// search and the canonical text feature file.
//
// File layout:
//   EPF1 <count> <descriptor_dim> natural
//   EPF1 <count> <descriptor_dim> fixed <angle_rad>
// followed by one line per feature: x y scale orientation d_1 ... d_D

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "epipre/errors.hpp"
#include "epipre/types.hpp"

namespace epipre {

/// Normalized cross-correlation of two unit descriptors (their dot product).
inline double ncc(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("descriptor length mismatch: " +
                         std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return std::clamp(s, -1.0, 1.0);
}

struct NearestTwo {
  std::uint32_t index = 0;
  double best = -1.0;
  double second = -1.0;
  // False for singleton sets, where `second` is the worst case -1.
  bool has_second = false;
};

/// Best and second-best similarity of `q` over `set`. Ties go to the lower
/// index.
inline NearestTwo nearest_two(std::span<const double> q, const FeatureSet& set) {
  if (set.empty()) throw Error("nearest_two on an empty feature set");
  NearestTwo r;
  r.best = -std::numeric_limits<double>::infinity();
  r.second = -std::numeric_limits<double>::infinity();
  for (std::uint32_t i = 0; i < set.size(); ++i) {
    const double s = ncc(q, set[i].descriptor);
    if (s > r.best) {
      r.second = r.best;
      r.best = s;
      r.index = i;
    } else if (s > r.second) {
      r.second = s;
    }
  }
  r.has_second = set.size() > 1;
  if (!r.has_second) r.second = -1.0;
  return r;
}

inline double descriptor_norm(std::span<const double> d) {
  double s = 0.0;
  for (double v : d) s += v * v;
  return std::sqrt(s);
}

/// Scales `d` to unit length in place.
inline void normalize_descriptor(Descriptor& d) {
  const double n = descriptor_norm(d);
  if (n > 0.0) {
    for (double& v : d) v /= n;
  }
}

namespace detail {

inline void append_double(std::string& out, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

inline bool parse_double(std::string_view tok, double& out) {
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return res.ec == std::errc() && res.ptr == tok.data() + tok.size();
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> toks;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i])))
      ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j])))
      ++j;
    if (j > i) toks.push_back(line.substr(i, j - i));
    i = j;
  }
  return toks;
}

}  // namespace detail

/// Serializes a feature set in the canonical text form, shortest round-trip
/// decimal for every value.
inline std::string format_features(const FeatureSet& set) {
  const std::size_t dim = set.descriptor_dim();
  std::string out = "EPF1 " + std::to_string(set.size()) + " " +
                    std::to_string(dim);
  if (set.mode == OrientationMode::kFixed) {
    out += " fixed ";
    detail::append_double(out, set.fixed_angle);
  } else {
    out += " natural";
  }
  out += '\n';
  for (const auto& f : set.features) {
    if (f.descriptor.size() != dim) {
      throw DimensionError("inconsistent descriptor length in feature set");
    }
    detail::append_double(out, f.x);
    for (double v : {f.y, f.scale, f.orientation}) {
      out += ' ';
      detail::append_double(out, v);
    }
    for (double v : f.descriptor) {
      out += ' ';
      detail::append_double(out, v);
    }
    out += '\n';
  }
  return out;
}

/// Parses the canonical text form. `image_id` names the resulting set.
inline FeatureSet parse_features(std::istream& in, std::string image_id = {}) {
  FeatureSet set;
  set.image_id = std::move(image_id);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("missing header", 0);
  const auto head = detail::split_ws(line);
  if (head.size() < 4 || head[0] != "EPF1") {
    throw ParseError("malformed header", 0);
  }
  std::size_t count = 0, dim = 0;
  auto parse_size = [](std::string_view tok, std::size_t& out) {
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), out);
    return res.ec == std::errc() && res.ptr == tok.data() + tok.size();
  };
  if (!parse_size(head[1], count) || !parse_size(head[2], dim)) {
    throw ParseError("malformed header counts", 0);
  }
  if (head[3] == "natural" && head.size() == 4) {
    set.mode = OrientationMode::kNatural;
  } else if (head[3] == "fixed" && head.size() == 5) {
    set.mode = OrientationMode::kFixed;
    if (!detail::parse_double(head[4], set.fixed_angle) ||
        !std::isfinite(set.fixed_angle)) {
      throw ParseError("malformed fixed angle", 0);
    }
  } else {
    throw ParseError("unknown orientation mode", 0);
  }

  set.features.reserve(count);
  for (std::size_t rec = 0; rec < count; ++rec) {
    const long rec_no = static_cast<long>(rec + 1);
    if (!std::getline(in, line)) throw ParseError("truncated file", rec_no);
    const auto toks = detail::split_ws(line);
    if (toks.size() != 4 + dim) {
      throw ParseError("wrong descriptor length", rec_no);
    }
    std::vector<double> vals(toks.size());
    for (std::size_t k = 0; k < toks.size(); ++k) {
      if (!detail::parse_double(toks[k], vals[k]) || !std::isfinite(vals[k])) {
        throw ParseError("non-finite or malformed value", rec_no);
      }
    }
    Feature f;
    f.x = vals[0];
    f.y = vals[1];
    f.scale = vals[2];
    f.orientation = vals[3];
    if (!(f.scale > 0.0)) throw ParseError("non-positive scale", rec_no);
    f.descriptor.assign(vals.begin() + 4, vals.end());
    const double n = descriptor_norm(f.descriptor);
    if (n < 0.99 || n > 1.01) {
      throw ParseError("descriptor norm outside [0.99, 1.01]", rec_no);
    }
    // Already-unit descriptors are kept bit-exact so load/save is idempotent.
    if (std::abs(n - 1.0) > 1e-12) normalize_descriptor(f.descriptor);
    set.features.push_back(std::move(f));
  }
  while (std::getline(in, line)) {
    if (!detail::split_ws(line).empty()) {
      throw ParseError("trailing records beyond header count",
                       static_cast<long>(count + 1));
    }
  }
  return set;
}

inline FeatureSet load_features(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  return parse_features(in, path.stem().string());
}

inline void save_features(const FeatureSet& set,
                          const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << format_features(set);
}

}  // namespace epipre
