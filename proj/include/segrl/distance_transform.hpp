#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "raster.hpp"

namespace segrl {

/// Exact squared Euclidean distance from every pixel to the nearest
/// foreground pixel of a mask. Foreground pixels have distance 0. If the mask
/// has no foreground every entry is kNoForeground.
struct DistanceField {
  static constexpr std::int64_t kNoForeground = std::numeric_limits<std::int64_t>::max();

  int width = 0;
  int height = 0;
  std::vector<std::int64_t> sq_dist;

  std::int64_t at(int x, int y) const { return sq_dist[static_cast<std::size_t>(y) * width + x]; }
  double distance(std::size_t i) const { return std::sqrt(static_cast<double>(sq_dist[i])); }
};

namespace detail {

// Lower envelope of parabolas f(q) + (p - q)^2 over sites with finite f
// (Felzenszwalb & Huttenlocher). Intersections are kept as exact rationals.
inline void envelope_1d(const std::vector<std::int64_t>& f, std::vector<std::int64_t>& out,
                        std::vector<int>& sites, std::vector<std::int64_t>& z_num,
                        std::vector<std::int64_t>& z_den) {
  const int n = static_cast<int>(f.size());
  constexpr auto inf = DistanceField::kNoForeground;
  sites.clear();
  z_num.clear();
  z_den.clear();
  // Intersection abscissa of parabolas rooted at sites a < b.
  auto intersect = [&](int a, int b, std::int64_t& num, std::int64_t& den) {
    num = (f[b] + std::int64_t{b} * b) - (f[a] + std::int64_t{a} * a);
    den = 2 * std::int64_t{b - a};
  };
  for (int q = 0; q < n; ++q) {
    if (f[q] == inf) continue;
    while (!sites.empty()) {
      std::int64_t num = 0;
      std::int64_t den = 0;
      intersect(sites.back(), q, num, den);
      // pop while new intersection <= intersection that created the last site
      if (sites.size() > 1 && num * z_den.back() <= z_num.back() * den) {
        sites.pop_back();
        z_num.pop_back();
        z_den.pop_back();
        continue;
      }
      z_num.push_back(num);
      z_den.push_back(den);
      break;
    }
    sites.push_back(q);
  }
  if (sites.empty()) {
    out.assign(n, inf);
    return;
  }
  // z_num/z_den[k] is the boundary between sites[k] and sites[k+1].
  std::size_t k = 0;
  out.resize(n);
  for (int p = 0; p < n; ++p) {
    while (k + 1 < sites.size() && z_num[k] < std::int64_t{p} * z_den[k]) ++k;
    const std::int64_t d = p - sites[k];
    out[p] = f[sites[k]] + d * d;
  }
}

}  // namespace detail

inline DistanceField distance_transform(const BinaryMask& mask) {
  const int w = mask.width();
  const int h = mask.height();
  constexpr auto inf = DistanceField::kNoForeground;
  DistanceField df;
  df.width = w;
  df.height = h;
  df.sq_dist.assign(mask.size(), inf);

  // Columns: squared distance to nearest foreground in the same column.
  std::vector<std::int64_t> col(h);
  for (int x = 0; x < w; ++x) {
    std::int64_t last = -1;
    for (int y = 0; y < h; ++y) {
      if (mask.at(x, y)) last = y;
      col[y] = last < 0 ? inf : (y - last);
    }
    last = -1;
    for (int y = h - 1; y >= 0; --y) {
      if (mask.at(x, y)) last = y;
      if (last >= 0 && (col[y] == inf || last - y < col[y])) col[y] = last - y;
    }
    for (int y = 0; y < h; ++y)
      df.sq_dist[static_cast<std::size_t>(y) * w + x] = col[y] == inf ? inf : col[y] * col[y];
  }

  // Rows: lower envelope over the column results.
  std::vector<std::int64_t> row(w);
  std::vector<std::int64_t> out;
  std::vector<int> sites;
  std::vector<std::int64_t> z_num;
  std::vector<std::int64_t> z_den;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) row[x] = df.sq_dist[static_cast<std::size_t>(y) * w + x];
    detail::envelope_1d(row, out, sites, z_num, z_den);
    for (int x = 0; x < w; ++x) df.sq_dist[static_cast<std::size_t>(y) * w + x] = out[x];
  }
  return df;
}

/// Calls fn(index) for every foreground pixel at exactly the field's distance
/// from (x, y), in row-major order.
template <typename Fn>
void for_each_nearest_foreground(const BinaryMask& mask, const DistanceField& df, int x, int y,
                                 Fn&& fn) {
  const std::int64_t d = df.at(x, y);
  if (d == DistanceField::kNoForeground) return;
  const auto r = static_cast<int>(std::sqrt(static_cast<double>(d)) + 1.0);
  for (int dy = -r; dy <= r; ++dy) {
    const int yy = y + dy;
    const std::int64_t rem = d - std::int64_t{dy} * dy;
    if (yy < 0 || yy >= mask.height() || rem < 0) continue;
    auto dx = static_cast<std::int64_t>(std::sqrt(static_cast<double>(rem)));
    while (dx * dx > rem) --dx;
    while ((dx + 1) * (dx + 1) <= rem) ++dx;
    if (dx * dx != rem) continue;
    const int xl = x - static_cast<int>(dx);
    const int xr = x + static_cast<int>(dx);
    if (xl >= 0 && mask.at(xl, yy)) fn(mask.index(xl, yy));
    if (dx > 0 && xr < mask.width() && mask.at(xr, yy)) fn(mask.index(xr, yy));
  }
}

}  // namespace segrl
