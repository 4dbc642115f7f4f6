#pragma once

// Prompt-driven region growing used in place of a promptable segmenter.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "prompt.hpp"
#include "raster.hpp"

namespace segrl {

struct SegmenterConfig {
  int tolerance = 12;               // intensity units, [1, 64]
  int connectivity = 4;             // 4 or 8
  double max_region_fraction = 0.9;  // (0, 1]

  void validate() const {
    if (tolerance < 1 || tolerance > 64) throw std::invalid_argument("SegmenterConfig: tolerance must lie in [1,64]");
    if (connectivity != 4 && connectivity != 8)
      throw std::invalid_argument("SegmenterConfig: connectivity must be 4 or 8");
    if (!(max_region_fraction > 0.0 && max_region_fraction <= 1.0))
      throw std::invalid_argument("SegmenterConfig: max_region_fraction must lie in (0,1]");
  }
};

class PromptOutOfBounds : public std::out_of_range {
 public:
  PromptOutOfBounds(std::string what, Point p) : std::out_of_range(std::move(what)), point(p) {}
  Point point;
};

namespace detail {

// Row-major neighbor order.
inline constexpr int kN4[4][2] = {{0, -1}, {-1, 0}, {1, 0}, {0, 1}};
inline constexpr int kN8[8][2] = {{-1, -1}, {0, -1}, {1, -1}, {-1, 0}, {1, 0}, {-1, 1}, {0, 1}, {1, 1}};

struct Region {
  std::vector<std::size_t> pixels;
  bool discarded = false;
};

// BFS from (sx, sy) admitting pixels within `tolerance` of the running mean.
// Growth stops early once the region exceeds `limit` pixels (flood-through).
inline Region grow_region(const GrayImage& img, int sx, int sy, const Box& clip, const SegmenterConfig& cfg,
                          std::size_t limit, std::vector<std::uint8_t>& visited) {
  Region r;
  std::fill(visited.begin(), visited.end(), 0);
  const std::size_t seed = img.index(sx, sy);
  visited[seed] = 1;
  r.pixels.push_back(seed);
  long sum = img.at(sx, sy);
  const int n_neighbors = cfg.connectivity == 8 ? 8 : 4;
  for (std::size_t head = 0; head < r.pixels.size(); ++head) {
    const auto idx = r.pixels[head];
    const int x = static_cast<int>(idx % static_cast<std::size_t>(img.width()));
    const int y = static_cast<int>(idx / static_cast<std::size_t>(img.width()));
    for (int k = 0; k < n_neighbors; ++k) {
      const int nx = x + (n_neighbors == 8 ? kN8[k][0] : kN4[k][0]);
      const int ny = y + (n_neighbors == 8 ? kN8[k][1] : kN4[k][1]);
      if (!clip.contains(nx, ny)) continue;
      const std::size_t ni = img.index(nx, ny);
      if (visited[ni]) continue;
      const auto count = static_cast<long>(r.pixels.size());
      // |v - sum/count| <= tol  <=>  |v*count - sum| <= tol*count
      const long diff = static_cast<long>(img.at(nx, ny)) * count - sum;
      if (diff > cfg.tolerance * count || -diff > cfg.tolerance * count) continue;
      visited[ni] = 1;
      r.pixels.push_back(ni);
      sum += img.at(nx, ny);
      if (r.pixels.size() > limit) {
        r.discarded = true;
        return r;
      }
    }
  }
  return r;
}

}  // namespace detail

/// Union of foreground-seeded regions minus union of background-seeded
/// regions. A bbox confines growth. A region larger than max_region_fraction of
/// the (box-clipped) area is discarded.
inline BinaryMask segment(const GrayImage& image, const MaskPrompt& prompt, const SegmenterConfig& cfg = {}) {
  cfg.validate();
  if (prompt.points.size() != prompt.labels.size())
    throw std::invalid_argument("segment: points/labels length mismatch");
  const int w = image.width();
  const int h = image.height();
  auto check = [&](Point p, const char* what) {
    if (!image.contains(p.x, p.y))
      throw PromptOutOfBounds(std::string("segment: ") + what + " (" + std::to_string(p.x) + "," +
                                  std::to_string(p.y) + ") outside " + std::to_string(w) + "x" + std::to_string(h),
                              p);
  };
  for (const auto& p : prompt.points) check(p, "point");
  if (prompt.bbox) {
    check({prompt.bbox->x1, prompt.bbox->y1}, "bbox corner");
    check({prompt.bbox->x2, prompt.bbox->y2}, "bbox corner");
  }

  BinaryMask out(w, h);
  if (prompt.points.empty()) return out;

  const Box clip = prompt.bbox.value_or(Box{0, 0, w - 1, h - 1});
  const auto clip_area = static_cast<std::size_t>(clip.x2 - clip.x1 + 1) * static_cast<std::size_t>(clip.y2 - clip.y1 + 1);
  const auto limit = static_cast<std::size_t>(cfg.max_region_fraction * static_cast<double>(clip_area));

  std::vector<std::uint8_t> visited(image.size());
  std::vector<std::uint8_t> negative(image.size(), 0);
  for (std::size_t i = 0; i < prompt.points.size(); ++i) {
    const Point p = prompt.points[i];
    if (!clip.contains(p.x, p.y)) continue;  // seed outside the box grows nothing
    const auto region = detail::grow_region(image, p.x, p.y, clip, cfg, limit, visited);
    if (region.discarded) continue;
    for (auto idx : region.pixels) {
      if (prompt.labels[i] == 1)
        out.set(idx);
      else
        negative[idx] = 1;
    }
  }
  for (std::size_t i = 0; i < negative.size(); ++i)
    if (negative[i]) out.set(i, false);
  return out;
}

enum class SegmentStatus { Ok, FormatFailure, BoundsFailure };

struct SegmentOutcome {
  BinaryMask mask;
  SegmentStatus status;
  std::optional<MaskPrompt> prompt;
};

/// Parse then segment. Never throws on bad text or out-of-bounds prompts; the
/// status tells which failure occurred and the mask is then empty.
inline SegmentOutcome segment_text(const GrayImage& image, std::string_view text, PromptStage stage,
                                   const SegmenterConfig& cfg = {}) {
  auto parsed = parse(text, stage);
  if (!std::holds_alternative<MaskPrompt>(parsed))
    return {BinaryMask(image.width(), image.height()), SegmentStatus::FormatFailure, std::nullopt};
  auto& prompt = std::get<MaskPrompt>(parsed);
  try {
    BinaryMask m = segment(image, prompt, cfg);
    return {std::move(m), SegmentStatus::Ok, std::move(prompt)};
  } catch (const PromptOutOfBounds&) {
    return {BinaryMask(image.width(), image.height()), SegmentStatus::BoundsFailure, std::move(prompt)};
  }
}

}  // namespace segrl
