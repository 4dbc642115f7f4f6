// segrl command-line front end. Exit codes: 0 ok, 1 usage error, 2 runtime error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "segrl/segrl.hpp"

namespace fs = std::filesystem;
using namespace segrl;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::pair<int, int> parse_dims(const std::string& s) {
  const auto x = s.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument("");
    std::size_t a = 0, b = 0;
    const int w = std::stoi(s.substr(0, x), &a);
    const int h = std::stoi(s.substr(x + 1), &b);
    if (a != x || b != s.size() - x - 1) throw std::invalid_argument("");
    return {w, h};
  } catch (const std::exception&) {
    throw UsageError("--dims expects WxH, got '" + s + "'");
  }
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

GrpoConfig load_grpo(const std::string& path, GrpoConfig base) {
  if (path.empty()) return base;
  return grpo_config_from_json(nlohmann::json::parse(read_file(path)), base);
}

// Flags left at their sentinel do not override the config file.
struct RlOverrides {
  int steps = -1;
  double lr = -1.0;
  double max_grad_norm = -1.0;
  int batch = -1;
  int group = -1;

  void add(CLI::App* c) {
    c->add_option("--steps", steps, "RL steps per stage (overrides config)");
    c->add_option("--lr", lr, "learning rate (overrides config)");
    c->add_option("--max-grad-norm", max_grad_norm, "gradient norm cap, 0 = off (overrides config)");
    c->add_option("--batch", batch, "scenes per step (overrides config)");
    c->add_option("--group", group, "samples per scene (overrides config)");
  }
  void apply(GrpoConfig& g) const {
    if (steps >= 0) g.total_steps = steps;
    if (lr > 0) g.learning_rate = lr;
    if (max_grad_norm >= 0) g.max_grad_norm = max_grad_norm;
    if (batch > 0) g.batch_scenes = batch;
    if (group > 0) g.group_size = group;
    g.validate();
  }
};

void print_rows(const std::vector<ArmResult>& rows) {
  std::cout << arm_csv_header() << '\n';
  for (const auto& r : rows) std::cout << arm_csv_row(r) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"segrl: GRPO training of a toy mask-prompt policy over simulated segmentation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  // Checked after parsing so an unknown flag is reported before a missing one.
  std::vector<std::pair<CLI::App*, CLI::Option*>> required;
  auto req = [&](CLI::App* sub, CLI::Option* opt) {
    opt->description(opt->get_description() + " (required)");
    required.emplace_back(sub, opt);
  };

  // gen
  std::string g_profile, g_dims = "64x64", g_out;
  std::size_t g_count = 0;
  std::uint64_t g_seed = 0;
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset (PGM pairs + manifest.json)");
  req(gen, gen->add_option("--profile", g_profile, "salient | camouflaged | fine_structure"));
  req(gen, gen->add_option("--count", g_count, "number of scenes"));
  gen->add_option("--dims", g_dims, "WxH, each side in [16,128]")->capture_default_str();
  gen->add_option("--seed", g_seed, "base seed")->capture_default_str();
  req(gen, gen->add_option("--out", g_out, "output directory"));

  // train-sft
  std::string s_data, s_out, s_init, s_traj, s_stage = "box";
  bool s_primer = false;
  std::size_t s_primer_count = 512;
  SftConfig s_cfg = ExperimentConfig{}.sft;
  auto* tsft = app.add_subcommand("train-sft", "supervised training on oracle trajectories (or the format primer)");
  req(tsft, tsft->add_option("--data", s_data, "dataset directory"));
  req(tsft, tsft->add_option("--out", s_out, "checkpoint to write"));
  tsft->add_option("--init", s_init, "starting checkpoint (default: random init from --seed)");
  tsft->add_option("--epochs", s_cfg.epochs, "epochs")->capture_default_str();
  tsft->add_option("--lr", s_cfg.learning_rate, "learning rate")->capture_default_str();
  tsft->add_option("--batch", s_cfg.batch_size, "minibatch size")->capture_default_str();
  tsft->add_option("--max-grad-norm", s_cfg.max_grad_norm, "gradient norm cap, 0 = off")->capture_default_str();
  tsft->add_option("--seed", s_cfg.seed, "seed")->capture_default_str();
  tsft->add_option("--stage", s_stage, "box | points (oracle prompt form)")->capture_default_str();
  tsft->add_option("--trajectories", s_traj, "also write oracle trajectories as JSON lines");
  tsft->add_flag("--format-primer", s_primer, "train on random-content grammar sequences instead of the oracle");
  tsft->add_option("--primer-examples", s_primer_count, "primer sequences")->capture_default_str();

  // train-rl
  std::string r_recipe = "rl_only", r_data, r_pre, r_sft, r_init, r_config, r_out, r_reward = "combined";
  std::uint64_t r_seed = 1;
  int r_ckpt_every = 0, r_pre_steps = -1;
  bool r_det = false;
  RlOverrides r_over;
  auto* trl = app.add_subcommand("train-rl", "GRPO training; writes <out>/<recipe>/<seed>/");
  trl->add_option("--recipe", r_recipe, "rl_only | pure_rl | sft_rl")->capture_default_str();
  req(trl, trl->add_option("--data", r_data, "Camouflaged training dataset (box stage)"));
  trl->add_option("--pre-rl-data", r_pre, "FineStructure dataset for the points-only stage (pure_rl)");
  trl->add_option("--sft-data", r_sft, "dataset annotated by the oracle (sft_rl; default --data)");
  trl->add_option("--init", r_init, "starting checkpoint (default: format-primed policy)");
  trl->add_option("--config", r_config, "GrpoConfig JSON file");
  trl->add_option("--reward", r_reward, "combined | iou | s")->capture_default_str();
  trl->add_option("--seed", r_seed, "seed (EXPERIMENT_SEED overrides)")->capture_default_str();
  trl->add_option("--pre-rl-steps", r_pre_steps, "steps of the points-only stage");
  trl->add_option("--ckpt-every", r_ckpt_every, "write ckpt_<stage>_<step>.bin every N steps, 0 = off");
  req(trl, trl->add_option("--out", r_out, "output root"));
  trl->add_flag("--deterministic", r_det, "sequential execution (the only mode; accepted for scripts)");
  r_over.add(trl);

  // eval
  std::string e_ckpt, e_data, e_stage = "box";
  bool e_header = false;
  auto* ev = app.add_subcommand("eval", "greedy-decode each scene and print one MetricReport CSV row");
  req(ev, ev->add_option("--ckpt", e_ckpt, "policy checkpoint"));
  req(ev, ev->add_option("--data", e_data, "dataset directory"));
  ev->add_option("--stage", e_stage, "box | points")->capture_default_str();
  ev->add_flag("--header", e_header, "print the column header first");

  // ablations
  std::string a_pre, a_rl, a_sft, a_eval, a_out, a_config, a_seeds;
  std::uint64_t a_data_seed = 0;
  int a_pre_steps = -1;
  bool a_det = false;
  RlOverrides a_over;
  auto add_ablation = [&](const char* name, const char* help) {
    auto* c = app.add_subcommand(name, help);
    c->add_option("--pre-rl-data", a_pre, "FineStructure dataset (generated when absent)");
    c->add_option("--rl-data", a_rl, "Camouflaged training dataset (generated when absent)");
    c->add_option("--sft-data", a_sft, "dataset annotated by the oracle (default: the RL data)");
    c->add_option("--eval-data", a_eval, "Camouflaged eval split (generated when absent)");
    c->add_option("--data-seed", a_data_seed, "seed for generated datasets")->capture_default_str();
    c->add_option("--seeds", a_seeds, "comma-separated training seeds (default 1,2,3; EXPERIMENT_SEED overrides)");
    c->add_option("--config", a_config, "GrpoConfig JSON file for the RL stages");
    c->add_option("--pre-rl-steps", a_pre_steps, "steps of the points-only stage");
    req(c, c->add_option("--out", a_out, "output root"));
    c->add_flag("--deterministic", a_det, "sequential execution (the only mode; accepted for scripts)");
    a_over.add(c);
    return c;
  };
  auto* abr = add_ablation("ablate-reward", "IoU-only vs S-only vs combined reward arms");
  auto* abs = add_ablation("ablate-strategy", "baseline vs RL-only vs SFT+RL vs pre-RL+RL");

  // parse
  std::string p_stage = "box";
  auto* prs = app.add_subcommand("parse", "parse a prompt from stdin; print JSON, or the error category (exit 1)");
  prs->add_option("--stage", p_stage, "box | points")->capture_default_str();

  // segment
  std::string sg_image, sg_prompt, sg_out;
  SegmenterConfig sg_cfg;
  auto* seg = app.add_subcommand("segment", "run the region-growing segmenter on one image");
  req(seg, seg->add_option("--image", sg_image, "P5 PGM image"));
  req(seg, seg->add_option("--prompt-json", sg_prompt, "MaskPrompt JSON file"));
  req(seg, seg->add_option("--out", sg_out, "mask PGM to write"));
  seg->add_option("--tolerance", sg_cfg.tolerance, "intensity tolerance [1,64]")->capture_default_str();
  seg->add_option("--connectivity", sg_cfg.connectivity, "4 or 8")->capture_default_str();
  seg->add_option("--max-region-fraction", sg_cfg.max_region_fraction, "flood guard (0,1]")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  for (const auto& [sub, opt] : required) {
    if (sub->parsed() && opt->count() == 0) {
      std::cerr << opt->get_name() << " is required\nRun with --help for more information.\n";
      return 1;
    }
  }

  try {
    if (*gen) {
      const auto [w, h] = parse_dims(g_dims);
      Profile profile;
      try {
        profile = profile_from_string(g_profile);
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      if (w < 16 || w > 128 || h < 16 || h > 128) throw UsageError("--dims sides must lie in [16,128]");
      const auto scenes = generate_scenes(profile, g_count, w, h, g_seed);
      write_dataset(scenes, g_out);
      return 0;
    }

    if (*tsft) {
      const auto scenes = read_dataset(s_data);
      const PromptStage stage = stage_from_string(s_stage);
      PolicyParams init = s_init.empty() ? PolicyParams::random(derive_seed({s_cfg.seed, 0x9123ULL})) : load_params(s_init);
      std::vector<SftExample> examples;
      if (s_primer) {
        examples = format_primer_examples(scenes, s_primer_count, derive_seed({s_cfg.seed, 0x9121ULL}));
      } else {
        const auto trajs = annotate_all(scenes, {}, stage);
        if (!s_traj.empty()) write_trajectories(s_traj, trajs);
        examples = make_sft_examples(scenes, trajs, stage);
      }
      const SftResult res = sft_train(std::move(init), examples, s_cfg);
      save_params(s_out, res.policy);
      std::cout << "epoch,mean_token_nll\n";
      for (std::size_t i = 0; i < res.losses.size(); ++i) std::printf("%zu,%.6f\n", i, res.losses[i]);
      return 0;
    }

    if (*trl) {
      ExperimentConfig ec;
      ec.seeds = {r_seed};
      apply_seed_override(ec);
      const std::uint64_t seed = ec.seeds.front();
      ec.rl = load_grpo(r_config, ec.rl);
      r_over.apply(ec.rl);
      if (r_pre_steps >= 0) ec.pre_rl_steps = r_pre_steps;
      Recipe recipe;
      if (r_recipe == "rl_only") recipe = Recipe::RLOnly;
      else if (r_recipe == "pure_rl") recipe = Recipe::PureRL;
      else if (r_recipe == "sft_rl") recipe = Recipe::SFTthenRL;
      else throw UsageError("--recipe must be rl_only, pure_rl or sft_rl");
      const MetricMode mode = metric_mode_from_string(r_reward);

      ExperimentData data;
      data.rl = read_dataset(r_data);
      if (!r_pre.empty()) data.pre_rl = read_dataset(r_pre);
      data.sft = r_sft.empty() ? data.rl : read_dataset(r_sft);
      const PolicyParams init = r_init.empty() ? format_primed_policy(data.rl, ec, seed) : load_params(r_init);

      const fs::path dir = fs::path(r_out) / r_recipe / std::to_string(seed);
      fs::create_directories(dir);
      {
        std::ofstream cfg_out(dir / "config.json", std::ios::binary);
        cfg_out << to_json(ec.rl).dump(2) << '\n';
      }
      std::vector<StageLogEntry> log;
      CurriculumData cd{&data.pre_rl, &data.rl, &data.sft};
      auto cc = detail::curriculum_config(ec, seed, mode);
      auto res = run_curriculum(recipe, init, cc, cd, [&](const std::string& stage, const TrainStats& s, const PolicyParams& p) {
        if (r_ckpt_every > 0 && (s.step + 1) % r_ckpt_every == 0) {
          char name[64];
          std::snprintf(name, sizeof name, "ckpt_%s_%05d.bin", stage.c_str(), s.step + 1);
          save_params(dir / name, p);
        }
      });
      write_train_log(dir / "train_log.csv", res.log);
      save_params(dir / "policy.bin", res.policy);
      return 0;
    }

    if (*ev) {
      const PolicyParams p = load_params(e_ckpt);
      const auto scenes = read_dataset(e_data);
      const auto result = evaluate_policy(p, scenes, stage_from_string(e_stage));
      if (e_header) std::cout << MetricReport::csv_header() << '\n';
      std::cout << result.report.csv_row() << '\n';
      return 0;
    }

    if (*abr || *abs) {
      ExperimentConfig ec;
      if (!a_seeds.empty()) {
        ec.seeds.clear();
        std::stringstream ss(a_seeds);
        std::string item;
        while (std::getline(ss, item, ',')) {
          try {
            ec.seeds.push_back(std::stoull(item));
          } catch (const std::exception&) {
            throw UsageError("--seeds expects comma-separated integers, got '" + a_seeds + "'");
          }
        }
      }
      apply_seed_override(ec);
      ec.rl = load_grpo(a_config, ec.rl);
      a_over.apply(ec.rl);
      if (a_pre_steps >= 0) ec.pre_rl_steps = a_pre_steps;
      ec.pre_rl_data = a_pre;
      ec.rl_data = a_rl;
      ec.sft_data = a_sft;
      ec.eval_data = a_eval;
      ec.out_dir = a_out;
      ec.validate();
      ExperimentData data = ExperimentData::generate(a_data_seed);
      const ExperimentData loaded = ExperimentData::load(ec);
      if (!a_pre.empty()) data.pre_rl = loaded.pre_rl;
      if (!a_rl.empty()) data.rl = loaded.rl;
      if (!a_rl.empty() || !a_sft.empty()) data.sft = loaded.sft;
      if (!a_eval.empty()) data.eval = loaded.eval;
      print_rows(*abr ? ablate_reward(data, ec) : ablate_strategy(data, ec));
      return 0;
    }

    if (*prs) {
      const PromptStage stage = stage_from_string(p_stage);
      const std::string text{std::istreambuf_iterator<char>(std::cin), std::istreambuf_iterator<char>()};
      const auto r = parse(text, stage);
      if (const auto* mp = std::get_if<MaskPrompt>(&r)) {
        std::cout << to_json(*mp).dump() << '\n';
        return 0;
      }
      const auto& err = std::get<FormatError>(r);
      std::cout << to_string(err.kind) << '\n';
      return 1;
    }

    if (*seg) {
      const GrayImage img = read_pgm_image(sg_image);
      const MaskPrompt prompt = prompt_from_json(nlohmann::json::parse(read_file(sg_prompt)));
      write_pgm(sg_out, segment(img, prompt, sg_cfg));
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
