#pragma once

// Supervised baseline: a scripted annotator that grounds the object with a
// box and refines with positive/negative clicks, and teacher-forced training
// of the policy on the resulting token trajectories.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "distance_transform.hpp"
#include "policy.hpp"
#include "prompt.hpp"
#include "scene.hpp"
#include "segmenter.hpp"

namespace segrl {

inline constexpr double kOracleTargetIou = 0.9;
inline constexpr int kOracleMaxPoints = 6;

struct AnnotationTrajectory {
  std::string scene_id;
  std::vector<int> tokens;
  double iou = 0.0;
  MaskPrompt prompt;  // decoded form of `tokens`
};

namespace detail {

// Components of `mask`, 4-connected, in row-major order of first pixel.
inline std::vector<std::vector<std::size_t>> components(const BinaryMask& mask) {
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::uint8_t> seen(mask.size(), 0);
  const int w = mask.width();
  const int h = mask.height();
  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (!mask.at(start) || seen[start]) continue;
    std::vector<std::size_t> comp{start};
    seen[start] = 1;
    for (std::size_t head = 0; head < comp.size(); ++head) {
      const int x = static_cast<int>(comp[head] % w);
      const int y = static_cast<int>(comp[head] / w);
      for (const auto& d : kN4) {
        const int nx = x + d[0];
        const int ny = y + d[1];
        if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
        const std::size_t ni = mask.index(nx, ny);
        if (mask.at(ni) && !seen[ni]) {
          seen[ni] = 1;
          comp.push_back(ni);
        }
      }
    }
    out.push_back(std::move(comp));
  }
  return out;
}

inline bool on_bin_lattice(int x, int y, int w, int h) {
  return bin_to_pixel(pixel_to_bin(x, w), w) == x && bin_to_pixel(pixel_to_bin(y, h), h) == y;
}

// Pixel of `region` farthest from the region's outside, preferring pixels that
// are exactly representable as bin centers; row-major first on ties.
inline Point interior_point(const BinaryMask& region) {
  const DistanceField df = distance_transform(region.complement());
  const int w = region.width();
  const int h = region.height();
  std::int64_t best_any = -1, best_lattice = -1;
  Point any{}, lattice{};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!region.at(x, y)) continue;
      // pixels on the image border also touch the outside
      std::int64_t d = df.at(x, y);
      const std::int64_t border = std::min({x + 1, y + 1, w - x, h - y});
      d = std::min(d, border * border);
      if (d > best_any) {
        best_any = d;
        any = {x, y};
      }
      if (d > best_lattice && on_bin_lattice(x, y, w, h)) {
        best_lattice = d;
        lattice = {x, y};
      }
    }
  if (best_lattice >= 0) return lattice;
  return {bin_to_pixel(pixel_to_bin(any.x, w), w), bin_to_pixel(pixel_to_bin(any.y, h), h)};
}

// Largest bin center <= p, else the first bin.
inline int snap_down(int p, int dim) {
  int k = tok::kNumBins - 1;
  while (k > 0 && bin_to_pixel(k, dim) > p) --k;
  return bin_to_pixel(k, dim);
}

// Smallest bin center >= p, else the last bin.
inline int snap_up(int p, int dim) {
  int k = 0;
  while (k < tok::kNumBins - 1 && bin_to_pixel(k, dim) < p) ++k;
  return bin_to_pixel(k, dim);
}

inline BinaryMask pixels_to_mask(const std::vector<std::size_t>& px, int w, int h) {
  BinaryMask m(w, h);
  for (auto i : px) m.set(i);
  return m;
}

}  // namespace detail

/// Scripted annotator: tight gt box snapped outward to bins, a first positive
/// click at the gt interior maximum, then clicks on the largest error region
/// (false negative -> positive, false positive -> negative) until IoU >= 0.9
/// or max_points. A click that does not improve IoU is dropped and the next
/// largest error region is tried.
inline AnnotationTrajectory oracle_annotate(const Scene& scene, const SegmenterConfig& cfg = {},
                                            int max_points = kOracleMaxPoints,
                                            PromptStage stage = PromptStage::BoxAndPoints,
                                            std::string scene_id = {}) {
  const BinaryMask& gt = scene.gt;
  if (gt.empty_foreground()) throw std::invalid_argument("oracle_annotate: empty ground truth");
  const int w = gt.width();
  const int h = gt.height();

  MaskPrompt prompt;
  prompt.think = kFillerWord;
  if (stage == PromptStage::BoxAndPoints) {
    int x1 = w, y1 = h, x2 = -1, y2 = -1;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (gt.at(x, y)) {
          x1 = std::min(x1, x);
          y1 = std::min(y1, y);
          x2 = std::max(x2, x);
          y2 = std::max(y2, y);
        }
    prompt.bbox = Box{detail::snap_down(x1, w), detail::snap_down(y1, h), detail::snap_up(x2, w), detail::snap_up(y2, h)};
  }
  prompt.points.push_back(detail::interior_point(gt));
  prompt.labels.push_back(1);

  BinaryMask mask = segment(scene.image, prompt, cfg);
  double score = iou(mask, gt);
  while (score < kOracleTargetIou && static_cast<int>(prompt.points.size()) < max_points) {
    BinaryMask fn(w, h), fp(w, h);
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt.at(i) && !mask.at(i)) fn.set(i);
      if (!gt.at(i) && mask.at(i)) fp.set(i);
    }
    struct Candidate {
      std::size_t size;
      int label;
      BinaryMask region;
    };
    std::vector<Candidate> cands;
    for (auto& c : detail::components(fn)) cands.push_back({c.size(), 1, detail::pixels_to_mask(c, w, h)});
    for (auto& c : detail::components(fp)) cands.push_back({c.size(), 0, detail::pixels_to_mask(c, w, h)});
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      return a.size > b.size || (a.size == b.size && a.label > b.label);
    });
    bool improved = false;
    for (const auto& c : cands) {
      const Point p = detail::interior_point(c.region);
      if (std::find(prompt.points.begin(), prompt.points.end(), p) != prompt.points.end()) continue;
      if (prompt.bbox && !prompt.bbox->contains(p.x, p.y)) continue;
      MaskPrompt trial = prompt;
      trial.points.push_back(p);
      trial.labels.push_back(c.label);
      BinaryMask trial_mask = segment(scene.image, trial, cfg);
      const double trial_score = iou(trial_mask, gt);
      if (trial_score > score) {
        prompt = std::move(trial);
        mask = std::move(trial_mask);
        score = trial_score;
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }

  AnnotationTrajectory t;
  t.scene_id = std::move(scene_id);
  t.tokens = encode(prompt, w, h);
  t.iou = score;
  t.prompt = std::move(prompt);
  return t;
}

// ---------------------------------------------------------------------------
// Teacher-forced training

struct SftExample {
  Features features;
  std::vector<int> tokens;
  std::vector<int> context;  // stage query, not scored
};

struct SftConfig {
  int epochs = 1;
  double learning_rate = 1e-3;
  int batch_size = 8;
  std::uint64_t seed = 0;
  double max_grad_norm = 0.0;  // 0 disables clipping
};

struct SftResult {
  PolicyParams policy;
  std::vector<double> losses;  // [0] before training, [e] after epoch e
};

/// Mean per-token negative log-likelihood.
inline double mean_token_nll(const PolicyParams& p, std::span<const SftExample> data) {
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const auto& ex : data) {
    nll -= log_prob(p, ex.features, ex.tokens, ex.context);
    tokens += ex.tokens.size();
  }
  return nll / static_cast<double>(tokens);
}

/// Minibatch gradient descent on the mean per-token NLL; `data` is read only.
inline SftResult sft_train(PolicyParams policy, std::span<const SftExample> data, const SftConfig& cfg) {
  if (data.empty()) throw std::invalid_argument("sft_train: no trajectories");
  if (cfg.batch_size < 1 || cfg.epochs < 0) throw std::invalid_argument("sft_train: bad config");
  SftResult res;
  res.losses.push_back(mean_token_nll(policy, data));
  std::vector<std::size_t> order(data.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed({cfg.seed, static_cast<std::uint64_t>(epoch), 0x5F7ULL}));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.uniform_int(0, static_cast<int>(i - 1))]);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::size_t tokens = 0;
      for (std::size_t k = start; k < end; ++k) tokens += data[order[k]].tokens.size();
      PolicyParams grad;
      for (std::size_t k = start; k < end; ++k) {
        const auto& ex = data[order[k]];
        accumulate_log_prob_grad(policy, ex.features, ex.tokens, 1.0 / static_cast<double>(tokens), grad, ex.context);
      }
      double step = cfg.learning_rate;
      if (cfg.max_grad_norm > 0.0) {
        double sq = 0.0;
        for (double g : grad.flat()) sq += g * g;
        const double norm = std::sqrt(sq);
        if (norm > cfg.max_grad_norm) step *= cfg.max_grad_norm / norm;
      }
      policy.axpy(step, grad);  // ascent on log-likelihood
    }
    res.losses.push_back(mean_token_nll(policy, data));
  }
  res.policy = std::move(policy);
  return res;
}

inline std::vector<SftExample> make_sft_examples(const std::vector<Scene>& scenes,
                                                 const std::vector<AnnotationTrajectory>& trajs,
                                                 PromptStage stage = PromptStage::BoxAndPoints) {
  if (scenes.size() != trajs.size()) throw std::invalid_argument("make_sft_examples: size mismatch");
  std::vector<SftExample> out;
  for (std::size_t i = 0; i < scenes.size(); ++i)
    out.push_back({scene_features(scenes[i].image), trajs[i].tokens, stage_query(stage)});
  return out;
}

inline std::vector<AnnotationTrajectory> annotate_all(const std::vector<Scene>& scenes, const SegmenterConfig& cfg = {},
                                                      PromptStage stage = PromptStage::BoxAndPoints) {
  std::vector<AnnotationTrajectory> out;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "scene_%04zu", i);
    out.push_back(oracle_annotate(scenes[i], cfg, kOracleMaxPoints, stage, id));
  }
  return out;
}

/// Grammar-conformant sequences with random content (random box, 1-2 random
/// points, random labels; either stage). Teaching these gives a policy that
/// follows the output format but knows nothing about where objects are.
inline std::vector<SftExample> format_primer_examples(const std::vector<Scene>& scenes, std::size_t count,
                                                      std::uint64_t seed) {
  if (scenes.empty()) throw std::invalid_argument("format_primer_examples: no scenes");
  Rng rng(derive_seed({seed, 0xF0A3ULL}));
  std::vector<SftExample> out;
  for (std::size_t i = 0; i < count; ++i) {
    const Scene& s = scenes[i % scenes.size()];
    const int w = s.image.width();
    const int h = s.image.height();
    MaskPrompt p;
    const bool with_box = rng.uniform_int(0, 1) == 1;
    if (with_box) {
      int a = rng.uniform_int(0, 31), b = rng.uniform_int(0, 31), c = rng.uniform_int(0, 31), d = rng.uniform_int(0, 31);
      if (a > c) std::swap(a, c);
      if (b > d) std::swap(b, d);
      p.bbox = Box{bin_to_pixel(a, w), bin_to_pixel(b, h), bin_to_pixel(c, w), bin_to_pixel(d, h)};
    }
    const int n = rng.uniform_int(1, 2);
    for (int k = 0; k < n; ++k) {
      p.points.push_back({bin_to_pixel(rng.uniform_int(0, 31), w), bin_to_pixel(rng.uniform_int(0, 31), h)});
      p.labels.push_back(rng.uniform() < 0.7 ? 1 : 0);
    }
    out.push_back({scene_features(s.image), encode(p, w, h),
                   stage_query(with_box ? PromptStage::BoxAndPoints : PromptStage::PointsOnly)});
  }
  return out;
}

/// Fraction of greedy outputs that parse under `stage`.
inline double greedy_parse_rate(const PolicyParams& p, const std::vector<Scene>& scenes, PromptStage stage) {
  if (scenes.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& s : scenes) {
    const TokenSequence seq = greedy(p, scene_features(s.image), kMaxSequenceLength, stage_query(stage));
    if (seq.terminated() && parses(decode(seq.tokens, s.image.width(), s.image.height()), stage)) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(scenes.size());
}

// ---------------------------------------------------------------------------
// JSON lines: {"scene_id":..., "tokens":[...], "iou":...}

inline void write_trajectories(const std::filesystem::path& path, const std::vector<AnnotationTrajectory>& trajs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& t : trajs) {
    nlohmann::ordered_json j;
    j["scene_id"] = t.scene_id;
    j["tokens"] = t.tokens;
    j["iou"] = t.iou;
    out << j.dump() << '\n';
  }
}

inline std::vector<AnnotationTrajectory> read_trajectories(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<AnnotationTrajectory> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      AnnotationTrajectory t;
      t.scene_id = j.at("scene_id").get<std::string>();
      t.tokens = j.at("tokens").get<std::vector<int>>();
      t.iou = j.at("iou").get<double>();
      out.push_back(std::move(t));
    } catch (const std::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace segrl
