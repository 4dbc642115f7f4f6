#pragma once

// Group relative policy optimization over the toy policy: group rollouts,
// group-normalized advantages, clipped sequence-level surrogate with a k3 KL
// penalty toward a frozen reference policy, and plain gradient ascent.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "metrics.hpp"
#include "policy.hpp"
#include "prompt.hpp"
#include "scene.hpp"
#include "segmenter.hpp"

namespace segrl {

enum class MetricMode { IoUOnly, SOnly, Combined };

inline const char* to_string(MetricMode m) {
  switch (m) {
    case MetricMode::IoUOnly: return "iou";
    case MetricMode::SOnly: return "s";
    case MetricMode::Combined: return "combined";
  }
  return "unknown";
}

inline MetricMode metric_mode_from_string(const std::string& s) {
  if (s == "iou") return MetricMode::IoUOnly;
  if (s == "s") return MetricMode::SOnly;
  if (s == "combined") return MetricMode::Combined;
  throw std::invalid_argument("unknown metric mode: " + s);
}

inline PromptStage stage_from_string(const std::string& s) {
  if (s == "points") return PromptStage::PointsOnly;
  if (s == "box") return PromptStage::BoxAndPoints;
  throw std::invalid_argument("unknown stage: " + s + " (expected points|box)");
}

struct RewardWeights {
  double iou = 0.7;
  double s = 0.3;
};

struct GrpoConfig {
  int group_size = 4;
  double clip_eps = 0.2;
  double kl_coeff = 0.04;
  double learning_rate = 1e-3;
  int inner_epochs = 2;
  int batch_scenes = 24;
  RewardWeights weights;
  PromptStage stage = PromptStage::BoxAndPoints;
  int total_steps = 0;
  std::uint64_t seed = 0;
  double max_grad_norm = 0.0;  // 0 = unclipped plain gradient ascent
  SegmenterConfig segmenter;

  void validate() const {
    if (group_size < 2) throw std::invalid_argument("GrpoConfig: group_size must be >= 2");
    if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw std::invalid_argument("GrpoConfig: clip_eps must lie in (0,1)");
    if (!(kl_coeff >= 0.0)) throw std::invalid_argument("GrpoConfig: kl_coeff must be >= 0");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("GrpoConfig: learning_rate must be > 0");
    if (inner_epochs < 1) throw std::invalid_argument("GrpoConfig: inner_epochs must be >= 1");
    if (batch_scenes < 1) throw std::invalid_argument("GrpoConfig: batch_scenes must be >= 1");
    if (!(max_grad_norm >= 0.0)) throw std::invalid_argument("GrpoConfig: max_grad_norm must be >= 0");
    if (total_steps < 0) throw std::invalid_argument("GrpoConfig: total_steps must be >= 0");
    if (std::abs(weights.iou + weights.s - 1.0) > 1e-12)
      throw std::invalid_argument("GrpoConfig: reward weights must sum to 1");
    segmenter.validate();
  }
};

inline nlohmann::ordered_json to_json(const GrpoConfig& c) {
  nlohmann::ordered_json j;
  j["group_size"] = c.group_size;
  j["clip_eps"] = c.clip_eps;
  j["kl_coeff"] = c.kl_coeff;
  j["learning_rate"] = c.learning_rate;
  j["inner_epochs"] = c.inner_epochs;
  j["batch_scenes"] = c.batch_scenes;
  j["w_iou"] = c.weights.iou;
  j["w_s"] = c.weights.s;
  j["stage"] = to_string(c.stage);
  j["total_steps"] = c.total_steps;
  j["seed"] = c.seed;
  j["max_grad_norm"] = c.max_grad_norm;
  j["tolerance"] = c.segmenter.tolerance;
  j["connectivity"] = c.segmenter.connectivity;
  j["max_region_fraction"] = c.segmenter.max_region_fraction;
  return j;
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline GrpoConfig grpo_config_from_json(const nlohmann::json& j, GrpoConfig c = {}) {
  for (const auto& [key, value] : j.items()) {
    if (key == "group_size") c.group_size = value.get<int>();
    else if (key == "clip_eps") c.clip_eps = value.get<double>();
    else if (key == "kl_coeff") c.kl_coeff = value.get<double>();
    else if (key == "learning_rate") c.learning_rate = value.get<double>();
    else if (key == "inner_epochs") c.inner_epochs = value.get<int>();
    else if (key == "batch_scenes") c.batch_scenes = value.get<int>();
    else if (key == "w_iou") c.weights.iou = value.get<double>();
    else if (key == "w_s") c.weights.s = value.get<double>();
    else if (key == "stage") c.stage = stage_from_string(value.get<std::string>());
    else if (key == "total_steps") c.total_steps = value.get<int>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else if (key == "max_grad_norm") c.max_grad_norm = value.get<double>();
    else if (key == "tolerance") c.segmenter.tolerance = value.get<int>();
    else if (key == "connectivity") c.segmenter.connectivity = value.get<int>();
    else if (key == "max_region_fraction") c.segmenter.max_region_fraction = value.get<double>();
    else throw std::invalid_argument("GrpoConfig: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Reward

struct RewardBreakdown {
  double format = 0.0;
  double segmentation = 0.0;
  double total = 0.0;
  double foreground_fraction = 0.0;  // of the predicted mask
  SegmentStatus status = SegmentStatus::FormatFailure;
};

inline double segmentation_score(const BinaryMask& pred, const BinaryMask& gt, const RewardWeights& w,
                                 MetricMode mode) {
  switch (mode) {
    case MetricMode::IoUOnly: return iou(pred, gt);
    case MetricMode::SOnly: return s_measure(pred, gt);
    case MetricMode::Combined: return w.iou * iou(pred, gt) + w.s * s_measure(pred, gt);
  }
  return 0.0;
}

/// Format reward plus segmentation reward; the latter is 0 whenever parsing or
/// the bounds check fails.
inline RewardBreakdown total_reward(std::string_view text, const Scene& scene, PromptStage stage,
                                    const RewardWeights& weights, MetricMode mode,
                                    const SegmenterConfig& seg_cfg = {}) {
  RewardBreakdown r;
  const SegmentOutcome out = segment_text(scene.image, text, stage, seg_cfg);
  r.status = out.status;
  r.format = out.status == SegmentStatus::FormatFailure ? 0.0 : 1.0;
  if (out.status == SegmentStatus::Ok) {
    r.segmentation = segmentation_score(out.mask, scene.gt, weights, mode);
    r.foreground_fraction = foreground_fraction(out.mask);
  }
  r.total = r.format + r.segmentation;
  return r;
}

/// Reward of a sampled sequence. A sequence cut off at the length cap has no
/// EOS and counts as a format failure.
inline RewardBreakdown rollout_reward(const TokenSequence& seq, const Scene& scene, PromptStage stage,
                                      const RewardWeights& weights, MetricMode mode,
                                      const SegmenterConfig& seg_cfg = {}) {
  if (!seq.terminated()) return {};
  return total_reward(decode(seq.tokens, scene.image.width(), scene.image.height()), scene, stage, weights, mode,
                      seg_cfg);
}

// ---------------------------------------------------------------------------
// Advantages and surrogate

inline constexpr double kAdvantageEps = 1e-8;

/// (r - mean) / (population std + 1e-8); all-equal rewards give zeros.
inline std::vector<double> compute_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw std::invalid_argument("compute_advantages: group size must be >= 2");
  const auto n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= n;
  std::vector<double> adv(rewards.size(), 0.0);
  if (std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards[0]; })) return adv;
  const double sd = std::sqrt(var);
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / (sd + kAdvantageEps);
  return adv;
}

/// k3 estimator of KL(new || ref) on one sample: e^d - d - 1 with d = ref - new.
inline double k3_estimate(double logp_new, double logp_ref) {
  const double d = logp_ref - logp_new;
  return std::expm1(d) - d;
}

struct SurrogateResult {
  double objective = 0.0;
  std::vector<double> weights;  // dJ/dlogp_new per sample
  double clip_fraction = 0.0;
  double kl_mean = 0.0;
};

/// J = 1/G sum min(rho A, clip(rho, 1-eps, 1+eps) A) - beta/G sum k3, with
/// sequence-level rho = exp(logp_new - logp_old).
inline SurrogateResult surrogate_objective(std::span<const double> logp_new, std::span<const double> logp_old,
                                           std::span<const double> logp_ref, std::span<const double> advantages,
                                           double eps, double beta) {
  const std::size_t n = logp_new.size();
  if (logp_old.size() != n || logp_ref.size() != n || advantages.size() != n)
    throw std::invalid_argument("surrogate_objective: length mismatch");
  if (n == 0) throw std::invalid_argument("surrogate_objective: empty group");
  auto finite = [](std::span<const double> v) { return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); }); };
  if (!finite(logp_new) || !finite(logp_old) || !finite(logp_ref) || !finite(advantages) || std::isnan(eps) ||
      !std::isfinite(beta))
    throw std::invalid_argument("surrogate_objective: non-finite input");

  SurrogateResult res;
  res.weights.resize(n);
  const double inv = 1.0 / static_cast<double>(n);
  std::size_t clipped = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double rho = std::exp(logp_new[i] - logp_old[i]);
    const double a = advantages[i];
    const double unclipped = rho * a;
    const double clipped_val = std::clamp(rho, 1.0 - eps, 1.0 + eps) * a;
    double w = 0.0;
    if (unclipped <= clipped_val) {
      res.objective += inv * unclipped;
      w = inv * unclipped;  // d(rho A)/dlogp_new = rho A
    } else {
      res.objective += inv * clipped_val;
      ++clipped;
    }
    const double kl = k3_estimate(logp_new[i], logp_ref[i]);
    res.kl_mean += inv * kl;
    res.objective -= beta * inv * kl;
    // dk3/dlogp_new = 1 - exp(ref - new)
    w -= beta * inv * (1.0 - std::exp(logp_ref[i] - logp_new[i]));
    res.weights[i] = w;
  }
  res.clip_fraction = static_cast<double>(clipped) * inv;
  return res;
}

// ---------------------------------------------------------------------------
// Training step

struct TrainStats {
  int step = 0;
  double reward_mean = 0.0;
  double reward_min = 0.0;
  double reward_max = 0.0;
  double format_mean = 0.0;
  double seg_mean = 0.0;
  double kl_mean = 0.0;        // first inner epoch, against the reference policy
  double clip_fraction = 0.0;  // mean over inner epochs
  double fg_fraction = 0.0;
  std::vector<double> epoch_clip_fractions;

  static std::string csv_header() {
    return "step,reward_mean,reward_min,reward_max,format_mean,seg_mean,kl_mean,clip_frac,fg_frac";
  }
  std::string csv_row() const {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.8f,%.6f,%.6f", step, reward_mean, reward_min,
                  reward_max, format_mean, seg_mean, kl_mean, clip_fraction, fg_fraction);
    return buf;
  }
};

/// Rollouts of one step, kept for inspection and finite-difference checks.
struct RolloutBatch {
  std::vector<int> context;                       // stage query
  std::vector<Features> features;                 // per scene
  std::vector<std::vector<TokenSequence>> groups;  // per scene, G sequences
  std::vector<std::vector<double>> rewards;
  std::vector<std::vector<double>> advantages;
  std::vector<std::vector<double>> logp_old;
  std::vector<std::vector<double>> logp_ref;
};

struct StepResult {
  PolicyParams policy;
  TrainStats stats;
};

inline RolloutBatch collect_rollouts(const PolicyParams& policy, const PolicyParams& ref,
                                     std::span<const Scene* const> scenes, const GrpoConfig& cfg, MetricMode mode,
                                     int step, TrainStats& stats) {
  RolloutBatch b;
  b.context = stage_query(cfg.stage);
  const std::size_t B = scenes.size();
  const int G = cfg.group_size;
  b.features.resize(B);
  b.groups.resize(B);
  b.rewards.resize(B);
  b.logp_old.resize(B);
  b.logp_ref.resize(B);
  double rsum = 0, fsum = 0, ssum = 0, fgsum = 0;
  stats.reward_min = std::numeric_limits<double>::infinity();
  stats.reward_max = -std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < B; ++s) {
    const Scene& scene = *scenes[s];
    b.features[s] = scene_features(scene.image);
    for (int g = 0; g < G; ++g) {
      Rng rng(derive_seed({cfg.seed, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(s),
                           static_cast<std::uint64_t>(g)}));
      TokenSequence seq = sample(policy, b.features[s], rng, kMaxSequenceLength, b.context);
      const RewardBreakdown r = rollout_reward(seq, scene, cfg.stage, cfg.weights, mode, cfg.segmenter);
      b.rewards[s].push_back(r.total);
      b.logp_old[s].push_back(seq.total_logp());
      b.logp_ref[s].push_back(log_prob(ref, b.features[s], seq.tokens, b.context));
      b.groups[s].push_back(std::move(seq));
      rsum += r.total;
      fsum += r.format;
      ssum += r.segmentation;
      fgsum += r.foreground_fraction;
      stats.reward_min = std::min(stats.reward_min, r.total);
      stats.reward_max = std::max(stats.reward_max, r.total);
    }
    b.advantages.push_back(compute_advantages(b.rewards[s]));
  }
  const double n = static_cast<double>(B) * G;
  stats.reward_mean = rsum / n;
  stats.format_mean = fsum / n;
  stats.seg_mean = ssum / n;
  stats.fg_fraction = fgsum / n;
  return b;
}

/// Batch surrogate (mean of per-scene group surrogates) at `policy`, and its
/// gradient accumulated into `grad` when non-null.
inline double batch_surrogate(const PolicyParams& policy, const RolloutBatch& b, const GrpoConfig& cfg,
                              PolicyParams* grad, double* clip_fraction = nullptr, double* kl_mean = nullptr) {
  const std::size_t B = b.groups.size();
  const double inv_b = 1.0 / static_cast<double>(B);
  double objective = 0.0, clip = 0.0, kl = 0.0;
  for (std::size_t s = 0; s < B; ++s) {
    std::vector<double> logp_new;
    for (const auto& seq : b.groups[s]) {
      logp_new.push_back(log_prob(policy, b.features[s], seq.tokens, b.context));
      if (!std::isfinite(logp_new.back()))
        throw std::runtime_error("GRPO update diverged (log-probability overflow); lower learning_rate or set max_grad_norm");
    }
    const SurrogateResult sr =
        surrogate_objective(logp_new, b.logp_old[s], b.logp_ref[s], b.advantages[s], cfg.clip_eps, cfg.kl_coeff);
    objective += inv_b * sr.objective;
    clip += inv_b * sr.clip_fraction;
    kl += inv_b * sr.kl_mean;
    if (grad) {
      for (std::size_t i = 0; i < b.groups[s].size(); ++i)
        if (sr.weights[i] != 0.0)
          accumulate_log_prob_grad(policy, b.features[s], b.groups[s][i].tokens, inv_b * sr.weights[i], *grad,
                                   b.context);
    }
  }
  if (clip_fraction) *clip_fraction = clip;
  if (kl_mean) *kl_mean = kl;
  return objective;
}

/// One GRPO step: the incoming policy is the behaviour policy for the step.
/// Each inner epoch recomputes log-probs at the current parameters and takes
/// one full-batch gradient-ascent step.
inline StepResult train_step(const PolicyParams& policy, const PolicyParams& ref, std::span<const Scene* const> scenes,
                             const GrpoConfig& cfg, MetricMode mode, int step) {
  if (scenes.empty()) throw std::invalid_argument("train_step: empty batch");
  StepResult out{policy, {}};
  out.stats.step = step;
  const RolloutBatch batch = collect_rollouts(policy, ref, scenes, cfg, mode, step, out.stats);
  double clip_total = 0.0;
  for (int epoch = 0; epoch < cfg.inner_epochs; ++epoch) {
    PolicyParams grad;
    double clip = 0.0, kl = 0.0;
    batch_surrogate(out.policy, batch, cfg, &grad, &clip, &kl);
    if (epoch == 0) out.stats.kl_mean = kl;
    out.stats.epoch_clip_fractions.push_back(clip);
    clip_total += clip;
    double step_size = cfg.learning_rate;
    if (cfg.max_grad_norm > 0.0) {
      double sq = 0.0;
      for (double g : grad.flat()) sq += g * g;
      const double norm = std::sqrt(sq);
      if (norm > cfg.max_grad_norm) step_size *= cfg.max_grad_norm / norm;
    }
    out.policy.axpy(step_size, grad);
  }
  out.stats.clip_fraction = clip_total / cfg.inner_epochs;
  if (!out.policy.all_finite()) throw std::runtime_error("train_step: parameters became non-finite");
  return out;
}

/// Deterministic batch order: each pass over the data is a fresh seeded shuffle.
class BatchSampler {
 public:
  BatchSampler(std::size_t dataset_size, std::size_t batch, std::uint64_t seed)
      : n_(dataset_size), batch_(std::min(batch, dataset_size)), seed_(seed) {
    if (n_ == 0) throw std::invalid_argument("BatchSampler: empty dataset");
  }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    while (out.size() < batch_) {
      if (cursor_ >= order_.size()) reshuffle();
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    order_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
    Rng rng(derive_seed({seed_, pass_++}));
    for (std::size_t i = n_; i > 1; --i) std::swap(order_[i - 1], order_[rng.uniform_int(0, static_cast<int>(i - 1))]);
    cursor_ = 0;
  }

  std::size_t n_;
  std::size_t batch_;
  std::uint64_t seed_;
  std::uint64_t pass_ = 0;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// Runs cfg.total_steps GRPO steps with the reference frozen at `policy`.
/// `on_step` is called after every step with (stats, current policy).
template <typename OnStep>
PolicyParams train_rl(PolicyParams policy, const std::vector<Scene>& data, const GrpoConfig& cfg, MetricMode mode,
                      OnStep&& on_step) {
  cfg.validate();
  const PolicyParams ref = policy;
  BatchSampler sampler(data.size(), static_cast<std::size_t>(cfg.batch_scenes), derive_seed({cfg.seed, 0xBA7C4ULL}));
  for (int step = 0; step < cfg.total_steps; ++step) {
    std::vector<const Scene*> batch;
    for (std::size_t i : sampler.next()) batch.push_back(&data[i]);
    StepResult r = train_step(policy, ref, batch, cfg, mode, step);
    policy = std::move(r.policy);
    on_step(r.stats, policy);
  }
  return policy;
}

inline PolicyParams train_rl(PolicyParams policy, const std::vector<Scene>& data, const GrpoConfig& cfg,
                             MetricMode mode) {
  return train_rl(std::move(policy), data, cfg, mode, [](const TrainStats&, const PolicyParams&) {});
}

}  // namespace segrl
