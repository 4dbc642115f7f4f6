#pragma once

// Seeded experiment harness: the format-primed starting checkpoint, the two
// ablations, and their on-disk outputs (<out>/<arm>/<seed>/...).

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "curriculum.hpp"
#include "grpo.hpp"
#include "scene.hpp"
#include "sft.hpp"

namespace segrl {

/// Everything an experiment needs except the scenes themselves. Defaults are
/// the desk budget: one seed of ablate-strategy takes about 2.5 min on one core.
struct ExperimentConfig {
  std::string recipe = "sft_rl";  // train-rl only; the ablations run their own arms
  GrpoConfig rl = default_rl();
  int pre_rl_steps = 100;
  SftConfig sft{60, 0.1, 8, 0, 2.0};
  SftConfig primer{30, 0.3, 8, 0, 2.0};
  std::size_t primer_examples = 512;
  std::filesystem::path pre_rl_data, rl_data, sft_data, eval_data;  // empty = not needed / supplied in memory
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::filesystem::path out_dir;  // empty = write nothing

  static GrpoConfig default_rl() {
    GrpoConfig g;
    g.learning_rate = 3e-2;
    g.max_grad_norm = 1.0;
    g.total_steps = 400;
    return g;
  }

  void validate() const {
    if (seeds.empty()) throw std::invalid_argument("ExperimentConfig: seeds must be nonempty");
    if (pre_rl_steps < 0) throw std::invalid_argument("ExperimentConfig: pre_rl_steps must be >= 0");
    if (primer_examples == 0) throw std::invalid_argument("ExperimentConfig: primer_examples must be > 0");
    for (const auto* p : {&pre_rl_data, &rl_data, &sft_data, &eval_data})
      if (!p->empty() && !std::filesystem::exists(*p))
        throw std::invalid_argument("ExperimentConfig: dataset path does not exist: " + p->string());
    rl.validate();
  }
};

/// EXPERIMENT_SEED, when set, replaces the seed list with that one seed.
inline void apply_seed_override(ExperimentConfig& cfg, const char* env = std::getenv("EXPERIMENT_SEED")) {
  if (!env || !*env) return;
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(env, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != std::string(env).size()) throw std::invalid_argument(std::string("EXPERIMENT_SEED is not an integer: ") + env);
  cfg.seeds = {static_cast<std::uint64_t>(v)};
}

struct ExperimentData {
  std::vector<Scene> pre_rl;  // FineStructure
  std::vector<Scene> rl;      // Camouflaged
  std::vector<Scene> sft;     // annotated by the oracle
  std::vector<Scene> eval;    // Camouflaged eval split

  /// Default desk splits at 64x64; `base_seed` picks the scenes.
  static ExperimentData generate(std::uint64_t base_seed = 0, std::size_t train = 256, std::size_t eval_count = 64) {
    ExperimentData d;
    d.pre_rl = generate_scenes(Profile::FineStructure, train, 64, 64, derive_seed({base_seed, 1}));
    d.rl = generate_scenes(Profile::Camouflaged, train, 64, 64, derive_seed({base_seed, 2}));
    d.sft = d.rl;
    d.eval = generate_scenes(Profile::Camouflaged, eval_count, 64, 64, derive_seed({base_seed, 3}));
    return d;
  }

  static ExperimentData load(const ExperimentConfig& cfg) {
    ExperimentData d;
    if (!cfg.pre_rl_data.empty()) d.pre_rl = read_dataset(cfg.pre_rl_data);
    if (!cfg.rl_data.empty()) d.rl = read_dataset(cfg.rl_data);
    d.sft = cfg.sft_data.empty() ? d.rl : read_dataset(cfg.sft_data);
    if (!cfg.eval_data.empty()) d.eval = read_dataset(cfg.eval_data);
    return d;
  }
};

/// The starting checkpoint every arm shares: a random policy taught the output
/// grammar on random-content sequences, so it formats but cannot locate objects.
inline PolicyParams format_primed_policy(const std::vector<Scene>& scenes, const ExperimentConfig& cfg,
                                         std::uint64_t seed) {
  const auto examples = format_primer_examples(scenes, cfg.primer_examples, derive_seed({seed, 0x9121ULL}));
  SftConfig sc = cfg.primer;
  sc.seed = derive_seed({seed, 0x9122ULL});
  return sft_train(PolicyParams::random(derive_seed({seed, 0x9123ULL})), examples, sc).policy;
}

struct ArmResult {
  std::string arm;
  std::uint64_t seed = 0;
  PolicyEvaluation eval;
  std::vector<StageLogEntry> log;
  PolicyParams policy;
};

inline std::string arm_csv_header() {
  return "arm,seed," + MetricReport::csv_header() + ",format_rate,fg_mean,fg_share_below_0.05";
}

inline std::string arm_csv_row(const ArmResult& r) {
  char tail[128];
  std::snprintf(tail, sizeof tail, ",%.6f,%.6f,%.6f", r.eval.format_rate, r.eval.mean_foreground_fraction(),
                r.eval.share_below(0.05));
  return r.arm + "," + std::to_string(r.seed) + "," + r.eval.report.csv_row() + tail;
}

inline void write_train_log(const std::filesystem::path& path, const std::vector<StageLogEntry>& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "stage," << TrainStats::csv_header() << '\n';
  for (const auto& e : log) out << e.stage << ',' << e.stats.csv_row() << '\n';
}

/// <out>/<arm>/<seed>/{train_log.csv, policy.bin, eval.csv}
inline void write_arm_outputs(const std::filesystem::path& out_dir, const ArmResult& r) {
  if (out_dir.empty()) return;
  const auto dir = out_dir / r.arm / std::to_string(r.seed);
  std::filesystem::create_directories(dir);
  write_train_log(dir / "train_log.csv", r.log);
  save_params(dir / "policy.bin", r.policy);
  std::ofstream out(dir / "eval.csv", std::ios::binary);
  if (!out) throw IoError("cannot write " + (dir / "eval.csv").string());
  out << arm_csv_header() << '\n' << arm_csv_row(r) << '\n';
}

inline void write_table(const std::filesystem::path& path, const std::vector<ArmResult>& rows) {
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << arm_csv_header() << '\n';
  for (const auto& r : rows) out << arm_csv_row(r) << '\n';
}

namespace detail {

inline void require_data(const std::vector<Scene>& d, const char* what) {
  if (d.empty()) throw std::invalid_argument(std::string("experiment: missing dataset '") + what + "'");
}

inline ArmResult finish_arm(std::string arm, std::uint64_t seed, PolicyParams policy, std::vector<StageLogEntry> log,
                            const ExperimentData& data, const ExperimentConfig& cfg) {
  ArmResult r;
  r.arm = std::move(arm);
  r.seed = seed;
  r.eval = evaluate_policy(policy, data.eval, PromptStage::BoxAndPoints, cfg.rl.segmenter);
  r.log = std::move(log);
  r.policy = std::move(policy);
  write_arm_outputs(cfg.out_dir, r);
  return r;
}

inline CurriculumConfig curriculum_config(const ExperimentConfig& cfg, std::uint64_t seed, MetricMode mode) {
  CurriculumConfig cc;
  cc.rl = cfg.rl;
  cc.rl.seed = derive_seed({seed, 0x41ULL});
  cc.pre_rl = cfg.rl;
  cc.pre_rl.total_steps = cfg.pre_rl_steps;
  cc.pre_rl.seed = derive_seed({seed, 0x42ULL});
  cc.sft = cfg.sft;
  cc.sft.seed = derive_seed({seed, 0x43ULL});
  cc.mode = mode;
  return cc;
}

}  // namespace detail

/// One recipe from the format-primed checkpoint.
inline ArmResult run_recipe(Recipe recipe, const ExperimentData& data, const ExperimentConfig& cfg, std::uint64_t seed,
                            MetricMode mode = MetricMode::Combined, const std::string& arm = {}) {
  detail::require_data(data.rl, "rl");
  detail::require_data(data.eval, "eval");
  const PolicyParams base = format_primed_policy(data.rl, cfg, seed);
  CurriculumData cd{&data.pre_rl, &data.rl, &data.sft};
  auto res = run_curriculum(recipe, base, detail::curriculum_config(cfg, seed, mode), cd);
  return detail::finish_arm(arm.empty() ? to_string(recipe) : arm, seed, std::move(res.policy), std::move(res.log),
                            data, cfg);
}

/// Reward ablation: three RL arms (IoU only, S only, combined) from one shared
/// starting checkpoint per seed.
inline std::vector<ArmResult> ablate_reward(const ExperimentData& data, const ExperimentConfig& cfg) {
  cfg.validate();
  detail::require_data(data.rl, "rl");
  detail::require_data(data.eval, "eval");
  std::vector<ArmResult> rows;
  for (std::uint64_t seed : cfg.seeds) {
    const PolicyParams base = format_primed_policy(data.rl, cfg, seed);
    for (MetricMode mode : {MetricMode::IoUOnly, MetricMode::SOnly, MetricMode::Combined}) {
      CurriculumData cd{nullptr, &data.rl, nullptr};
      auto res = run_curriculum(Recipe::RLOnly, base, detail::curriculum_config(cfg, seed, mode), cd);
      rows.push_back(detail::finish_arm(std::string("reward_") + to_string(mode), seed, std::move(res.policy),
                                        std::move(res.log), data, cfg));
    }
  }
  if (!cfg.out_dir.empty()) write_table(cfg.out_dir / "ablate_reward.csv", rows);
  return rows;
}

/// Training-strategy ablation: the untrained (format-primed) baseline,
/// RL only, SFT then RL, and pre-RL then RL.
inline std::vector<ArmResult> ablate_strategy(const ExperimentData& data, const ExperimentConfig& cfg) {
  cfg.validate();
  detail::require_data(data.pre_rl, "pre_rl");
  detail::require_data(data.rl, "rl");
  detail::require_data(data.sft, "sft");
  detail::require_data(data.eval, "eval");
  std::vector<ArmResult> rows;
  for (std::uint64_t seed : cfg.seeds) {
    const PolicyParams base = format_primed_policy(data.rl, cfg, seed);
    rows.push_back(detail::finish_arm("baseline", seed, base, {}, data, cfg));
    CurriculumData cd{&data.pre_rl, &data.rl, &data.sft};
    for (Recipe recipe : {Recipe::RLOnly, Recipe::SFTthenRL, Recipe::PureRL}) {
      auto res = run_curriculum(recipe, base, detail::curriculum_config(cfg, seed, MetricMode::Combined), cd);
      rows.push_back(detail::finish_arm(to_string(recipe), seed, std::move(res.policy), std::move(res.log), data, cfg));
    }
  }
  if (!cfg.out_dir.empty()) write_table(cfg.out_dir / "ablate_strategy.csv", rows);
  return rows;
}

/// Trailing moving average of the RL-stage reward (window clipped at the start).
inline std::vector<double> reward_moving_average(const std::vector<StageLogEntry>& log, std::size_t window = 50,
                                                 const std::string& stage = "rl") {
  std::vector<double> r;
  for (const auto& e : log)
    if (e.stage == stage) r.push_back(e.stats.reward_mean);
  std::vector<double> out(r.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    acc += r[i];
    if (i >= window) acc -= r[i - window];
    out[i] = acc / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

}  // namespace segrl
