#pragma once

// Multi-stage training recipes and policy evaluation.

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "grpo.hpp"
#include "metrics.hpp"
#include "sft.hpp"

namespace segrl {

enum class Recipe { PureRL, RLOnly, SFTthenRL };

inline const char* to_string(Recipe r) {
  switch (r) {
    case Recipe::PureRL: return "pure_rl";
    case Recipe::RLOnly: return "rl_only";
    case Recipe::SFTthenRL: return "sft_rl";
  }
  return "unknown";
}

/// Datasets per stage. Which ones are required depends on the recipe.
struct CurriculumData {
  const std::vector<Scene>* pre_rl = nullptr;  // fine-structure scenes, points-only prompts
  const std::vector<Scene>* rl = nullptr;      // camouflaged scenes, box + points
  const std::vector<Scene>* sft = nullptr;     // scenes annotated by the oracle
};

struct CurriculumConfig {
  GrpoConfig pre_rl;  // stage forced to PointsOnly
  GrpoConfig rl;      // stage forced to BoxAndPoints
  SftConfig sft;
  MetricMode mode = MetricMode::Combined;
};

struct StageLogEntry {
  std::string stage;
  TrainStats stats;
};

struct CurriculumResult {
  PolicyParams policy;
  std::vector<StageLogEntry> log;
  std::vector<double> sft_losses;
};

using StepCallback = std::function<void(const std::string& stage, const TrainStats&, const PolicyParams&)>;

/// Runs the recipe's stages in order, carrying the policy forward. Every RL
/// stage freezes its reference policy at the stage's starting parameters.
inline CurriculumResult run_curriculum(Recipe recipe, PolicyParams init, const CurriculumConfig& cfg,
                                       const CurriculumData& data, const StepCallback& on_step = {}) {
  auto require = [&](const std::vector<Scene>* d, const char* stage) -> const std::vector<Scene>& {
    if (!d || d->empty()) throw std::invalid_argument(std::string("run_curriculum: missing dataset for stage '") + stage + "'");
    return *d;
  };
  // validate dataset presence before any work
  if (recipe == Recipe::PureRL) require(data.pre_rl, "pre_rl");
  if (recipe == Recipe::SFTthenRL) require(data.sft, "sft");
  require(data.rl, "rl");

  CurriculumResult res{std::move(init), {}, {}};
  auto rl_stage = [&](const char* name, const std::vector<Scene>& scenes, GrpoConfig gc, PromptStage stage) {
    gc.stage = stage;
    res.policy = train_rl(std::move(res.policy), scenes, gc, cfg.mode, [&](const TrainStats& s, const PolicyParams& p) {
      res.log.push_back({name, s});
      if (on_step) on_step(name, s, p);
    });
  };

  if (recipe == Recipe::PureRL) rl_stage("pre_rl", *data.pre_rl, cfg.pre_rl, PromptStage::PointsOnly);
  if (recipe == Recipe::SFTthenRL) {
    const auto& scenes = *data.sft;
    const auto trajs = annotate_all(scenes, cfg.rl.segmenter);
    const auto examples = make_sft_examples(scenes, trajs);
    SftResult sr = sft_train(std::move(res.policy), examples, cfg.sft);
    res.policy = std::move(sr.policy);
    res.sft_losses = std::move(sr.losses);
  }
  rl_stage("rl", *data.rl, cfg.rl, PromptStage::BoxAndPoints);
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation

struct PolicyEvaluation {
  MetricReport report;
  std::vector<BinaryMask> masks;
  std::vector<double> foreground_fractions;
  double format_rate = 0.0;

  double mean_foreground_fraction() const {
    double s = 0.0;
    for (double f : foreground_fractions) s += f;
    return foreground_fractions.empty() ? 0.0 : s / static_cast<double>(foreground_fractions.size());
  }
  // Share of scenes whose predicted mask covers less than `threshold` of the image.
  double share_below(double threshold) const {
    std::size_t n = 0;
    for (double f : foreground_fractions) n += f < threshold;
    return foreground_fractions.empty() ? 0.0 : static_cast<double>(n) / static_cast<double>(foreground_fractions.size());
  }
};

/// Greedy-decodes one prompt per scene and scores the resulting masks.
inline PolicyEvaluation evaluate_policy(const PolicyParams& p, const std::vector<Scene>& scenes, PromptStage stage,
                                        const SegmenterConfig& seg_cfg = {}) {
  if (scenes.empty()) throw std::invalid_argument("evaluate_policy: no scenes");
  PolicyEvaluation ev;
  std::vector<BinaryMask> gts;
  std::size_t ok = 0;
  for (const auto& s : scenes) {
    const TokenSequence seq = greedy(p, scene_features(s.image), kMaxSequenceLength, stage_query(stage));
    BinaryMask mask(s.image.width(), s.image.height());
    if (seq.terminated()) {
      SegmentOutcome out = segment_text(s.image, decode(seq.tokens, s.image.width(), s.image.height()), stage, seg_cfg);
      if (out.status != SegmentStatus::FormatFailure) ++ok;
      mask = std::move(out.mask);
    }
    ev.foreground_fractions.push_back(foreground_fraction(mask));
    ev.masks.push_back(std::move(mask));
    gts.push_back(s.gt);
  }
  ev.report = evaluate_dataset(ev.masks, gts);
  ev.format_rate = static_cast<double>(ok) / static_cast<double>(scenes.size());
  return ev;
}

}  // namespace segrl
