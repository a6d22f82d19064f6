#pragma once

// Synthetic two-view scenes with known geometry and feature identities.
//
// Points are back-projected from random pixels of camera 1. Each point has a
// tangent direction in a plane parallel to image 1 at angle `offset`, a patch
// size and a base descriptor. A feature's orientation and scale are the angle
// and length of the projected segment X -> X + patch * tangent, so image 2
// sees offset + roll plus the viewpoint's own distortion. Repeated groups share a prototype; with several rotated
// variants every instance is a small planar element whose parts carry the
// same natural descriptor at orientations 2*pi*k/variants apart.
//
// Observed descriptor = normalize(base + view_noise * g[image][appearance]
// + obs_noise * g). The view term is shared by all instances of a group in
// one image, so repeats stay alike within an image while both images of a
// point may differ.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "epipre/errors.hpp"
#include "epipre/features.hpp"
#include "epipre/geometry.hpp"
#include "epipre/types.hpp"

namespace epipre {

/// splitmix64 finalizer; used to derive named sub-seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return mix_seed(seed ^ mix_seed(tag));
}

inline std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : tag) h = (h ^ c) * 0x100000001b3ULL;
  return derive_seed(seed, h);
}

struct SceneConfig {
  std::uint64_t num_points = 300;
  std::uint64_t repeat_groups = 0;
  std::uint64_t repeat_size = 8;
  std::uint64_t rotated_variants = 1;
  double prototype_noise = 0.02;
  double view_noise = 0.0;
  double obs_noise = 0.0;
  double dropout = 0.0;
  std::uint64_t outlier_features = 0;
  double baseline = 2.0;
  double roll = 0.0;
  double pixel_noise = 0.0;
  double orientation_noise_deg = 0.0;
  double scale_noise = 0.0;
  std::uint64_t descriptor_dim = 32;
  std::uint64_t gt_points = 20;
  double focal = 800.0;
  std::uint64_t width = 1024;
  std::uint64_t height = 768;
  double depth_min = 8.0;
  double depth_max = 16.0;
  double patch_min = 0.03;
  double patch_max = 0.09;
  double element_size = 0.5;
  std::uint64_t seed = 0;
};

namespace detail {

template <class C, class F>
void visit_scene_fields(C& c, F&& f) {
  f("num_points", c.num_points);
  f("repeat_groups", c.repeat_groups);
  f("repeat_size", c.repeat_size);
  f("rotated_variants", c.rotated_variants);
  f("prototype_noise", c.prototype_noise);
  f("view_noise", c.view_noise);
  f("obs_noise", c.obs_noise);
  f("dropout", c.dropout);
  f("outlier_features", c.outlier_features);
  f("baseline", c.baseline);
  f("roll", c.roll);
  f("pixel_noise", c.pixel_noise);
  f("orientation_noise_deg", c.orientation_noise_deg);
  f("scale_noise", c.scale_noise);
  f("descriptor_dim", c.descriptor_dim);
  f("gt_points", c.gt_points);
  f("focal", c.focal);
  f("width", c.width);
  f("height", c.height);
  f("depth_min", c.depth_min);
  f("depth_max", c.depth_max);
  f("patch_min", c.patch_min);
  f("patch_max", c.patch_max);
  f("element_size", c.element_size);
  f("seed", c.seed);
}

}  // namespace detail

inline void validate(const SceneConfig& c) {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw ParseError(std::string("invalid scene config: ") + what);
  };
  need(c.dropout >= 0.0 && c.dropout <= 1.0, "dropout must be in [0,1]");
  for (double v : {c.prototype_noise, c.view_noise, c.obs_noise, c.pixel_noise,
                   c.orientation_noise_deg, c.scale_noise}) {
    need(std::isfinite(v) && v >= 0.0, "noise levels must be finite and >= 0");
  }
  need(std::isfinite(c.roll), "roll must be finite");
  need(std::isfinite(c.baseline) && c.baseline > 0.0, "baseline must be > 0");
  need(c.descriptor_dim >= 2, "descriptor_dim must be >= 2");
  need(c.rotated_variants >= 1, "rotated_variants must be >= 1");
  need(c.focal > 0.0 && c.width > 0 && c.height > 0, "bad intrinsics");
  need(c.depth_min > 0.0 && c.depth_max >= c.depth_min, "bad depth range");
  need(c.patch_min > 0.0 && c.patch_max >= c.patch_min, "bad patch range");
  need(c.element_size >= 0.0, "element_size must be >= 0");
}

inline nlohmann::json scene_config_to_json(const SceneConfig& c) {
  nlohmann::json j = nlohmann::json::object();
  detail::visit_scene_fields(c, [&](const char* name, const auto& v) { j[name] = v; });
  return j;
}

/// Fields absent from `j` keep their defaults; unknown keys are rejected.
inline SceneConfig scene_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("scene config must be an object");
  SceneConfig c;
  std::size_t used = 0;
  detail::visit_scene_fields(c, [&](const char* name, auto& v) {
    const auto it = j.find(name);
    if (it == j.end()) return;
    ++used;
    using T = std::decay_t<decltype(v)>;
    if constexpr (std::is_same_v<T, double>) {
      if (!it->is_number()) throw ParseError(std::string("'") + name + "' must be a number");
      v = it->template get<double>();
    } else {
      if (!it->is_number_unsigned() && !(it->is_number_integer() && *it >= 0)) {
        throw ParseError(std::string("'") + name + "' must be a non-negative integer");
      }
      v = it->template get<T>();
    }
  });
  if (used != j.size()) {
    for (const auto& [key, value] : j.items()) {
      bool known = false;
      detail::visit_scene_fields(c, [&](const char* name, auto&) { known |= key == name; });
      if (!known) throw ParseError("unknown scene config field '" + key + "'");
    }
  }
  validate(c);
  return c;
}

/// Descriptor of the same patch described at a frame rotated by `angle`.
/// The descriptor is read as cells x bins orientation histograms (8 bins when
/// the length allows it); bins shift circularly with linear interpolation.
inline Descriptor rotate_descriptor(const Descriptor& d, double angle) {
  const std::size_t bins = d.size() % 8 == 0 ? 8 : d.size();
  const std::size_t cells = d.size() / bins;
  const double shift = wrap_angle(angle) / (2.0 * std::numbers::pi) * bins;
  const double fl = std::floor(shift);
  const double frac = shift - fl;
  const auto k = static_cast<long>(fl);
  const auto nb = static_cast<long>(bins);
  Descriptor out(d.size(), 0.0);
  for (std::size_t c = 0; c < cells; ++c) {
    for (long b = 0; b < nb; ++b) {
      const long s0 = ((b - k) % nb + nb) % nb;
      const long s1 = ((b - k - 1) % nb + nb) % nb;
      out[c * bins + b] = (1.0 - frac) * d[c * bins + s0] + frac * d[c * bins + s1];
    }
  }
  if (descriptor_norm(out) == 0.0) return d;
  normalize_descriptor(out);
  return out;
}

struct ScenePoint {
  Eigen::Vector3d X;
  double offset = 0.0;  // tangent angle; the orientation seen by camera 1
  double patch = 0.0;
  std::int64_t group = -1;  // repeated group, -1 for unique points
  std::uint32_t part = 0;
  std::uint32_t appearance = 0;  // key of the shared view distortion
  Descriptor base;
};

struct SyntheticScene {
  SceneConfig config;
  CameraModel cam1;
  CameraModel cam2;
  std::vector<ScenePoint> points;
  FundamentalMatrix F;
  FeatureSet f1;
  FeatureSet f2;
  // Source point per feature, -1 for outlier features.
  std::vector<std::int64_t> point_of1;
  std::vector<std::int64_t> point_of2;
  // Noiseless correspondences of extra points, for evaluation only.
  std::vector<PointPair> gt_pairs;

  const FeatureSet& natural(int image) const { return image == 1 ? f1 : f2; }

  /// Fixed-orientation variant: same detections, descriptors recomputed with
  /// every orientation forced to `angle`.
  FeatureSet fixed(int image, double angle) const {
    FeatureSet out = natural(image);
    out.mode = OrientationMode::kFixed;
    out.fixed_angle = wrap_angle(angle);
    for (auto& f : out.features) {
      f.descriptor = rotate_descriptor(f.descriptor, f.orientation - angle);
      f.orientation = out.fixed_angle;
    }
    return out;
  }

  bool is_inlier(std::uint32_t i1, std::uint32_t i2) const {
    const auto a = point_of1.at(i1);
    return a >= 0 && a == point_of2.at(i2);
  }

  /// Every (i1, i2) observing the same point, ordered by i1.
  std::vector<IndexPair> true_correspondences() const {
    std::vector<std::int64_t> where2(points.size(), -1);
    for (std::uint32_t j = 0; j < point_of2.size(); ++j) {
      if (point_of2[j] >= 0) where2[static_cast<std::size_t>(point_of2[j])] = j;
    }
    std::vector<IndexPair> out;
    for (std::uint32_t i = 0; i < point_of1.size(); ++i) {
      if (point_of1[i] < 0) continue;
      const auto j = where2[static_cast<std::size_t>(point_of1[i])];
      if (j >= 0) out.emplace_back(i, static_cast<std::uint32_t>(j));
    }
    return out;
  }
};

namespace detail {

inline Descriptor gaussian_vector(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Descriptor v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

inline Descriptor random_unit(std::size_t n, std::mt19937_64& rng) {
  Descriptor v = gaussian_vector(n, rng);
  normalize_descriptor(v);
  return v;
}

inline Eigen::Matrix3d look_at(const Eigen::Vector3d& center, const Eigen::Vector3d& target) {
  const Eigen::Vector3d z = (target - center).normalized();
  const Eigen::Vector3d x = Eigen::Vector3d::UnitY().cross(z).normalized();
  const Eigen::Vector3d y = z.cross(x);
  Eigen::Matrix3d r;
  r.row(0) = x.transpose();
  r.row(1) = y.transpose();
  r.row(2) = z.transpose();
  return r;
}

inline bool in_view(const CameraModel& cam, const Eigen::Vector3d& X, const SceneConfig& c,
                    Eigen::Vector2d& px) {
  if (cam.depth(X) <= 1e-6) return false;
  px = cam.project(X);
  return px.x() >= 0.0 && px.y() >= 0.0 && px.x() < static_cast<double>(c.width) &&
         px.y() < static_cast<double>(c.height);
}

}  // namespace detail

inline SyntheticScene gen_scene(const SceneConfig& cfg) {
  validate(cfg);
  using detail::random_unit;
  const std::size_t D = cfg.descriptor_dim;
  const double two_pi = 2.0 * std::numbers::pi;
  std::mt19937_64 geo(derive_seed(cfg.seed, "geometry"));
  std::mt19937_64 desc(derive_seed(cfg.seed, "descriptors"));
  std::mt19937_64 obs(derive_seed(cfg.seed, "observations"));
  std::mt19937_64 clutter(derive_seed(cfg.seed, "clutter"));
  std::mt19937_64 order(derive_seed(cfg.seed, "order"));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  SyntheticScene s;
  s.config = cfg;
  Eigen::Matrix3d K;
  K << cfg.focal, 0.0, 0.5 * static_cast<double>(cfg.width), 0.0, cfg.focal,
      0.5 * static_cast<double>(cfg.height), 0.0, 0.0, 1.0;
  s.cam1.K = K;
  s.cam2.K = K;
  const double mid_depth = 0.5 * (cfg.depth_min + cfg.depth_max);
  const Eigen::Vector3d c2(cfg.baseline, 0.15 * cfg.baseline, 0.0);
  const Eigen::Matrix3d rz =
      Eigen::AngleAxisd(cfg.roll, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  s.cam2.R = rz * detail::look_at(c2, Eigen::Vector3d(0.0, 0.0, mid_depth));
  s.cam2.t = -s.cam2.R * c2;
  s.F = fundamental_from_cameras(s.cam1, s.cam2);

  const Eigen::Matrix3d Kinv = K.inverse();
  auto random_point = [&](std::mt19937_64& rng) {
    const double u = unit(rng) * static_cast<double>(cfg.width);
    const double v = unit(rng) * static_cast<double>(cfg.height);
    const double z = cfg.depth_min + unit(rng) * (cfg.depth_max - cfg.depth_min);
    return Eigen::Vector3d(z * (Kinv * Eigen::Vector3d(u, v, 1.0)));
  };
  auto random_patch = [&](std::mt19937_64& rng) {
    return cfg.patch_min * std::pow(cfg.patch_max / cfg.patch_min, unit(rng));
  };

  std::uint32_t appearance = 0;
  for (std::uint64_t i = 0; i < cfg.num_points; ++i) {
    ScenePoint p;
    p.X = random_point(geo);
    p.offset = wrap_angle(two_pi * unit(geo));
    p.patch = random_patch(geo);
    p.appearance = appearance++;
    p.base = random_unit(D, desc);
    s.points.push_back(std::move(p));
  }
  for (std::uint64_t g = 0; g < cfg.repeat_groups; ++g) {
    const Descriptor proto = random_unit(D, desc);
    const double offset = two_pi * unit(geo);
    const double patch = random_patch(geo);
    const std::uint32_t key = appearance++;
    for (std::uint64_t inst = 0; inst < cfg.repeat_size; ++inst) {
      const Eigen::Vector3d center = random_point(geo);
      for (std::uint64_t k = 0; k < cfg.rotated_variants; ++k) {
        const double phi = offset + two_pi * static_cast<double>(k) /
                                        static_cast<double>(cfg.rotated_variants);
        ScenePoint p;
        p.X = center;
        if (cfg.rotated_variants > 1) {
          p.X += 0.5 * cfg.element_size *
                 Eigen::Vector3d(std::cos(phi + 0.25 * std::numbers::pi),
                                 std::sin(phi + 0.25 * std::numbers::pi), 0.0);
        }
        p.offset = wrap_angle(phi);
        p.patch = patch;
        p.group = static_cast<std::int64_t>(g);
        p.part = static_cast<std::uint32_t>(k);
        p.appearance = key;
        p.base = proto;
        for (auto& x : p.base) x += cfg.prototype_noise * gauss(desc);
        normalize_descriptor(p.base);
        s.points.push_back(std::move(p));
      }
    }
  }

  std::vector<Descriptor> view[2];
  for (auto& v : view) {
    for (std::uint32_t a = 0; a < appearance; ++a) v.push_back(detail::gaussian_vector(D, obs));
  }

  const double sigma_o = deg2rad(cfg.orientation_noise_deg);
  bool any_shared = false;
  std::vector<std::uint8_t> seen1(s.points.size(), 0);
  for (int img = 0; img < 2; ++img) {
    const CameraModel& cam = img == 0 ? s.cam1 : s.cam2;
    FeatureSet& fs = img == 0 ? s.f1 : s.f2;
    auto& point_of = img == 0 ? s.point_of1 : s.point_of2;
    fs.image_id = img == 0 ? "image1" : "image2";
    for (std::size_t i = 0; i < s.points.size(); ++i) {
      const ScenePoint& p = s.points[i];
      Eigen::Vector2d px;
      // Draw every random number regardless of visibility so that one
      // point's fate does not shift the streams of the others.
      const double drop = unit(obs);
      const double nx = gauss(obs), ny = gauss(obs), ns = gauss(obs), no = gauss(obs);
      const Eigen::Vector3d tangent(std::cos(p.offset), std::sin(p.offset), 0.0);
      Descriptor d = p.base;
      for (std::size_t k = 0; k < D; ++k) {
        d[k] += cfg.view_noise * view[img][p.appearance][k] + cfg.obs_noise * gauss(obs);
      }
      if (!detail::in_view(cam, p.X, cfg, px) || drop < cfg.dropout) continue;
      const Eigen::Vector3d tip = p.X + p.patch * tangent;
      if (cam.depth(tip) <= 1e-6) continue;
      const Eigen::Vector2d seg = cam.project(tip) - px;
      normalize_descriptor(d);
      Feature f;
      f.x = px.x() + cfg.pixel_noise * nx;
      f.y = px.y() + cfg.pixel_noise * ny;
      f.scale = std::max(0.5, seg.norm() * (1.0 + cfg.scale_noise * ns));
      f.orientation = wrap_angle(std::atan2(seg.y(), seg.x()) + sigma_o * no);
      f.descriptor = std::move(d);
      fs.features.push_back(std::move(f));
      point_of.push_back(static_cast<std::int64_t>(i));
      if (img == 0) seen1[i] = 1;
      if (img == 1 && seen1[i]) any_shared = true;
    }
    for (std::uint64_t k = 0; k < cfg.outlier_features; ++k) {
      Feature f;
      f.x = unit(clutter) * static_cast<double>(cfg.width);
      f.y = unit(clutter) * static_cast<double>(cfg.height);
      const double z = cfg.depth_min + unit(clutter) * (cfg.depth_max - cfg.depth_min);
      f.scale = random_patch(clutter) * cfg.focal / z;
      f.orientation = wrap_angle(two_pi * unit(clutter));
      f.descriptor = random_unit(D, clutter);
      fs.features.push_back(std::move(f));
      point_of.push_back(-1);
    }
    // Shuffle so indices carry no information about correspondence.
    std::vector<std::size_t> perm(fs.size());
    for (std::size_t k = 0; k < perm.size(); ++k) perm[k] = k;
    for (std::size_t k = perm.size(); k > 1; --k) {
      std::uniform_int_distribution<std::size_t> pick(0, k - 1);
      std::swap(perm[k - 1], perm[pick(order)]);
    }
    std::vector<Feature> feats;
    std::vector<std::int64_t> ids;
    for (auto k : perm) {
      feats.push_back(std::move(fs.features[k]));
      ids.push_back(point_of[k]);
    }
    fs.features = std::move(feats);
    point_of = std::move(ids);
  }
  if (!any_shared) throw EmptyScene("no point is visible in both cameras");

  std::mt19937_64 gt(derive_seed(cfg.seed, "ground-truth"));
  for (std::uint64_t tries = 0; s.gt_pairs.size() < cfg.gt_points && tries < 1000 * cfg.gt_points;
       ++tries) {
    const Eigen::Vector3d X = random_point(gt);
    Eigen::Vector2d a, b;
    if (detail::in_view(s.cam1, X, cfg, a) && detail::in_view(s.cam2, X, cfg, b)) {
      s.gt_pairs.push_back({a, b});
    }
  }
  return s;
}

}  // namespace epipre
