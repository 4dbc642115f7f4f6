#pragma once

// Procedural image + ground-truth scenes in three difficulty profiles, and
// their on-disk dataset form (PGM pairs + manifest.json).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <queue>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "raster.hpp"
#include "rng.hpp"

namespace segrl {

enum class Profile { Salient, Camouflaged, FineStructure };

inline const char* to_string(Profile p) {
  switch (p) {
    case Profile::Salient: return "salient";
    case Profile::Camouflaged: return "camouflaged";
    case Profile::FineStructure: return "fine_structure";
  }
  return "unknown";
}

inline Profile profile_from_string(const std::string& s) {
  if (s == "salient") return Profile::Salient;
  if (s == "camouflaged") return Profile::Camouflaged;
  if (s == "fine_structure" || s == "finestructure" || s == "fine") return Profile::FineStructure;
  throw std::invalid_argument("unknown profile: " + s);
}

struct Scene {
  GrayImage image;
  BinaryMask gt;
  Profile profile;
  std::uint64_t seed;

  friend bool operator==(const Scene&, const Scene&) = default;
};

inline constexpr int kMinSceneDim = 16;
inline constexpr int kMaxSceneDim = 128;
inline constexpr double kMinForegroundFraction = 0.02;
inline constexpr double kMaxForegroundFraction = 0.6;

/// Intensity model per profile. Gap is foreground minus background level.
struct ProfileParams {
  int bg_lo, bg_hi;
  int gap_lo, gap_hi;
  double noise_sigma;
  double radius_lo, radius_hi;  // fraction of min(width, height)
};

inline ProfileParams profile_params(Profile p) {
  switch (p) {
    case Profile::Salient: return {20, 90, 70, 130, 4.0, 0.12, 0.26};
    case Profile::Camouflaged: return {90, 150, 8, 12, 10.0, 0.15, 0.28};
    case Profile::FineStructure: return {20, 90, 70, 130, 4.0, 0.12, 0.22};
  }
  return {};
}

namespace detail {

struct Vec2 {
  double x, y;
};

inline double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Andrew's monotone chain, counter-clockwise.
inline std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  std::vector<Vec2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

// Draw order: vertex count, then per vertex (angle, radius scale).
inline std::vector<Vec2> random_convex_polygon(Rng& rng, double cx, double cy, double radius) {
  const int n = rng.uniform_int(5, 9);
  std::vector<Vec2> pts;
  pts.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double a = rng.uniform(0.0, 2.0 * M_PI);
    const double r = radius * rng.uniform(0.75, 1.0);
    pts.push_back({cx + r * std::cos(a), cy + r * std::sin(a)});
  }
  return convex_hull(std::move(pts));
}

// Fills pixels whose centers fall inside the polygon, row by row.
inline void fill_convex(BinaryMask& mask, const std::vector<Vec2>& poly) {
  if (poly.size() < 3) return;
  for (int y = 0; y < mask.height(); ++y) {
    const double py = y + 0.5;
    double lo = 1e300, hi = -1e300;
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const Vec2& a = poly[i];
      const Vec2& b = poly[(i + 1) % poly.size()];
      if ((a.y <= py && b.y >= py) || (b.y <= py && a.y >= py)) {
        if (a.y == b.y) {
          lo = std::min({lo, a.x, b.x});
          hi = std::max({hi, a.x, b.x});
        } else {
          const double x = a.x + (py - a.y) / (b.y - a.y) * (b.x - a.x);
          lo = std::min(lo, x);
          hi = std::max(hi, x);
        }
      }
    }
    if (lo > hi) continue;
    for (int x = 0; x < mask.width(); ++x) {
      const double px = x + 0.5;
      if (px >= lo && px <= hi) mask.set(x, y);
    }
  }
}

// 4-connected component of `mask` containing (sx, sy).
inline BinaryMask component_at(const BinaryMask& mask, int sx, int sy) {
  BinaryMask out(mask.width(), mask.height());
  if (!mask.contains(sx, sy) || !mask.at(sx, sy)) return out;
  std::queue<std::pair<int, int>> q;
  q.push({sx, sy});
  out.set(sx, sy);
  constexpr int dx[4] = {0, -1, 1, 0};
  constexpr int dy[4] = {-1, 0, 0, 1};
  while (!q.empty()) {
    auto [x, y] = q.front();
    q.pop();
    for (int k = 0; k < 4; ++k) {
      const int nx = x + dx[k];
      const int ny = y + dy[k];
      if (mask.contains(nx, ny) && mask.at(nx, ny) && !out.at(nx, ny)) {
        out.set(nx, ny);
        q.push({nx, ny});
      }
    }
  }
  return out;
}

// Thin random-walk stroke leaving the blob at `angle`, dilated by a 2x2 element.
// Draw order: length, then per step one uniform.
inline void add_protrusion(Rng& rng, BinaryMask& mask, double cx, double cy, double angle) {
  const double ca = std::cos(angle);
  const double sa = std::sin(angle);
  int x = static_cast<int>(cx);
  int y = static_cast<int>(cy);
  // march to the blob boundary
  for (double t = 0;; t += 0.5) {
    const int nx = static_cast<int>(cx + t * ca);
    const int ny = static_cast<int>(cy + t * sa);
    if (!mask.contains(nx, ny) || !mask.at(nx, ny)) break;
    x = nx;
    y = ny;
  }
  const int len = rng.uniform_int(6, 14);
  const double px = std::abs(ca) / (std::abs(ca) + std::abs(sa));
  std::vector<std::pair<int, int>> stroke{{x, y}};
  for (int i = 0; i < len; ++i) {
    const double u = rng.uniform();
    int nx = x;
    int ny = y;
    if (u < 0.85 * px) {
      nx += ca >= 0 ? 1 : -1;
    } else if (u < 0.85) {
      ny += sa >= 0 ? 1 : -1;
    } else if (u < 0.925) {
      if (px >= 0.5) ny += 1; else nx += 1;
    } else {
      if (px >= 0.5) ny -= 1; else nx -= 1;
    }
    if (nx < 1 || ny < 1 || nx >= mask.width() - 2 || ny >= mask.height() - 2) break;
    x = nx;
    y = ny;
    stroke.push_back({x, y});
  }
  for (auto [sx, sy] : stroke)
    for (int oy = 0; oy <= 1; ++oy)
      for (int ox = 0; ox <= 1; ++ox)
        if (mask.contains(sx + ox, sy + oy)) mask.set(sx + ox, sy + oy);
}

}  // namespace detail

/// Deterministic scene for (seed, profile, width, height).
///
/// Draw order per attempt: background level, gap, ramp slope, blob center
/// (x, y), radius, polygon; Salient then draws a blob count and optionally a
/// second blob offset/radius/polygon; FineStructure draws a protrusion count
/// then per protrusion an angle and its walk. Rejected attempts (foreground
/// fraction outside [0.02, 0.6]) simply continue the stream. Noise is drawn
/// last, one normal per pixel in row-major order.
inline Scene generate_scene(std::uint64_t seed, Profile profile, int width, int height) {
  if (width < kMinSceneDim || width > kMaxSceneDim || height < kMinSceneDim || height > kMaxSceneDim)
    throw std::invalid_argument("generate_scene: dimensions must lie in [16, 128], got " +
                                std::to_string(width) + "x" + std::to_string(height));
  Rng rng(derive_seed({seed, static_cast<std::uint64_t>(profile), static_cast<std::uint64_t>(width),
                       static_cast<std::uint64_t>(height)}));
  const ProfileParams pp = profile_params(profile);
  const double min_dim = std::min(width, height);

  for (int attempt = 0; attempt < 1000; ++attempt) {
    const int bg = rng.uniform_int(pp.bg_lo, pp.bg_hi);
    const int gap = rng.uniform_int(pp.gap_lo, pp.gap_hi);
    const double ramp = rng.uniform(-3.0, 3.0);
    const double cx = rng.uniform(0.3, 0.7) * width;
    const double cy = rng.uniform(0.3, 0.7) * height;
    const double radius = rng.uniform(pp.radius_lo, pp.radius_hi) * min_dim;

    BinaryMask shape(width, height);
    detail::fill_convex(shape, detail::random_convex_polygon(rng, cx, cy, radius));
    if (profile == Profile::Salient && rng.uniform_int(1, 2) == 2) {
      const double ox = cx + rng.uniform(-0.9, 0.9) * radius;
      const double oy = cy + rng.uniform(-0.9, 0.9) * radius;
      const double r2 = rng.uniform(0.5, 0.9) * radius;
      detail::fill_convex(shape, detail::random_convex_polygon(rng, ox, oy, r2));
    }
    if (profile == Profile::FineStructure) {
      const int n = rng.uniform_int(3, 6);
      for (int i = 0; i < n; ++i) detail::add_protrusion(rng, shape, cx, cy, rng.uniform(0.0, 2.0 * M_PI));
    }
    BinaryMask gt = detail::component_at(shape, static_cast<int>(cx), static_cast<int>(cy));
    const double frac = foreground_fraction(gt);
    if (frac < kMinForegroundFraction || frac > kMaxForegroundFraction) continue;

    GrayImage image(width, height);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double level = bg + (gt.at(x, y) ? gap : 0) + ramp * (x - cx) / width;
        const double v = std::round(level + pp.noise_sigma * rng.normal());
        image.set(x, y, static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0)));
      }
    return Scene{std::move(image), std::move(gt), profile, seed};
  }
  throw std::logic_error("generate_scene: no admissible shape found");
}

/// Seed of scene `index` in a generated set.
inline std::uint64_t scene_seed(std::uint64_t base_seed, std::size_t index) {
  return derive_seed({base_seed, static_cast<std::uint64_t>(index)});
}

inline std::vector<Scene> generate_scenes(Profile profile, std::size_t count, int width, int height,
                                          std::uint64_t base_seed) {
  std::vector<Scene> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(generate_scene(scene_seed(base_seed, i), profile, width, height));
  return out;
}

// ---------------------------------------------------------------------------
// Dataset persistence.

struct ManifestEntry {
  std::string id;
  std::string image_path;  // relative to the dataset directory
  std::string mask_path;
  Profile profile;
  std::uint64_t seed;
};

struct DatasetManifest {
  int width = 0;
  int height = 0;
  std::vector<ManifestEntry> entries;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["dims"] = {{"width", width}, {"height", height}};
    j["entries"] = nlohmann::ordered_json::array();
    for (const auto& e : entries) {
      nlohmann::ordered_json je;
      je["id"] = e.id;
      je["image_path"] = e.image_path;
      je["mask_path"] = e.mask_path;
      je["profile"] = to_string(e.profile);
      je["seed"] = e.seed;
      j["entries"].push_back(std::move(je));
    }
    return j;
  }
};

inline DatasetManifest write_dataset(const std::vector<Scene>& scenes, const std::filesystem::path& dir) {
  if (scenes.empty()) throw std::invalid_argument("write_dataset: no scenes");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  DatasetManifest m;
  m.width = scenes.front().image.width();
  m.height = scenes.front().image.height();
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const Scene& s = scenes[i];
    if (s.image.width() != m.width || s.image.height() != m.height)
      throw DimensionMismatch("write_dataset: scene " + std::to_string(i), s.image.width(), s.image.height(),
                              m.width, m.height);
    char id[32];
    std::snprintf(id, sizeof id, "scene_%04zu", i);
    ManifestEntry e{id, std::string(id) + ".pgm", std::string(id) + "_mask.pgm", s.profile, s.seed};
    write_pgm(dir / e.image_path, s.image);
    write_pgm(dir / e.mask_path, s.gt);
    m.entries.push_back(std::move(e));
  }
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << m.to_json().dump(2) << '\n';
  return m;
}

inline DatasetManifest read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  DatasetManifest m;
  try {
    const auto j = nlohmann::json::parse(in);
    m.width = j.at("dims").at("width").get<int>();
    m.height = j.at("dims").at("height").get<int>();
    std::set<std::string> ids;
    for (const auto& je : j.at("entries")) {
      ManifestEntry e{je.at("id").get<std::string>(), je.at("image_path").get<std::string>(),
                      je.at("mask_path").get<std::string>(),
                      profile_from_string(je.at("profile").get<std::string>()),
                      je.at("seed").get<std::uint64_t>()};
      if (!ids.insert(e.id).second) throw IoError("duplicate id " + e.id);
      m.entries.push_back(std::move(e));
    }
  } catch (const IoError&) {
    throw;
  } catch (const std::exception& ex) {
    throw IoError("malformed manifest " + path.string() + ": " + ex.what());
  }
  return m;
}

inline std::vector<Scene> read_dataset(const std::filesystem::path& dir) {
  const DatasetManifest m = read_manifest(dir);
  std::vector<Scene> scenes;
  scenes.reserve(m.entries.size());
  for (const auto& e : m.entries) {
    const auto img_path = dir / e.image_path;
    const auto mask_path = dir / e.mask_path;
    if (!std::filesystem::exists(img_path)) throw IoError("missing file: " + img_path.string());
    if (!std::filesystem::exists(mask_path)) throw IoError("missing file: " + mask_path.string());
    GrayImage img = read_pgm_image(img_path);
    BinaryMask gt = read_pgm_mask(mask_path);
    if (img.width() != m.width || img.height() != m.height)
      throw IoError("dimension mismatch with manifest: " + img_path.string());
    if (gt.width() != m.width || gt.height() != m.height)
      throw IoError("dimension mismatch with manifest: " + mask_path.string());
    scenes.push_back(Scene{std::move(img), std::move(gt), e.profile, e.seed});
  }
  return scenes;
}

}  // namespace segrl
