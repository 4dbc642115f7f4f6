#include <gtest/gtest.h>

#include <fstream>

#include "segrl/sft.hpp"
#include "test_util.hpp"

using namespace segrl;

namespace {

Scene square_scene() {
  Scene s{GrayImage(64, 64, 40), BinaryMask(64, 64), Profile::Salient, 0};
  // 10x10; its snapped box is 11x11, which keeps it under the flood guard
  for (int y = 21; y < 31; ++y)
    for (int x = 21; x < 31; ++x) {
      s.image.set(x, y, 200);
      s.gt.set(x, y);
    }
  return s;
}

bool same_examples(const std::vector<SftExample>& a, const std::vector<SftExample>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].features != b[i].features || a[i].tokens != b[i].tokens || a[i].context != b[i].context) return false;
  return true;
}

}  // namespace

TEST(Oracle, UniformSquareNeedsOnePoint) {
  const Scene s = square_scene();
  const auto t = oracle_annotate(s);
  EXPECT_EQ(t.iou, 1.0);
  ASSERT_TRUE(t.prompt.bbox.has_value());
  ASSERT_EQ(t.prompt.points.size(), 1u);
  EXPECT_EQ(t.prompt.labels, std::vector<int>{1});
  EXPECT_TRUE(s.gt.at(t.prompt.points[0].x, t.prompt.points[0].y));
  EXPECT_TRUE(t.prompt.bbox->contains(21, 21));
  EXPECT_TRUE(t.prompt.bbox->contains(30, 30));

  const auto p = oracle_annotate(s, {}, kOracleMaxPoints, PromptStage::PointsOnly);
  EXPECT_FALSE(p.prompt.bbox.has_value());
  EXPECT_EQ(p.iou, 1.0);
  EXPECT_TRUE(parses(decode(p.tokens, 64, 64), PromptStage::PointsOnly));
}

TEST(Oracle, RejectsEmptyGroundTruth) {
  Scene s = square_scene();
  s.gt = BinaryMask(64, 64);
  EXPECT_THROW(oracle_annotate(s), std::invalid_argument);
}

TEST(Oracle, TrajectoriesAreWellFormedOnEveryProfile) {
  for (auto profile : {Profile::Salient, Profile::Camouflaged, Profile::FineStructure}) {
    const auto scenes = generate_scenes(profile, 24, 64, 64, 21);
    const auto trajs = annotate_all(scenes);
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      const auto& t = trajs[i];
      const int w = scenes[i].image.width(), h = scenes[i].image.height();
      const std::string text = decode(t.tokens, w, h);
      const auto parsed = parse(text, PromptStage::BoxAndPoints);
      ASSERT_TRUE(std::holds_alternative<MaskPrompt>(parsed)) << text;
      const auto& q = std::get<MaskPrompt>(parsed);
      EXPECT_EQ(q.points, t.prompt.points);
      EXPECT_EQ(q.labels, t.prompt.labels);
      EXPECT_GE(q.points.size(), 1u);
      EXPECT_LE(q.points.size(), static_cast<std::size_t>(kOracleMaxPoints));
      EXPECT_EQ(q.labels[0], 1);
      EXPECT_EQ(t.tokens.back(), tok::kEos);
      EXPECT_EQ(iou(segment(scenes[i].image, q), scenes[i].gt), t.iou);
      EXPECT_EQ(t.scene_id, "scene_" + std::string(4 - std::to_string(i).size(), '0') + std::to_string(i));
    }
  }
}

TEST(FormatPrimer, ExamplesParseUnderTheirStage) {
  const auto scenes = generate_scenes(Profile::Salient, 5, 40, 56, 3);
  const auto ex = format_primer_examples(scenes, 200, 9);
  ASSERT_EQ(ex.size(), 200u);
  for (std::size_t i = 0; i < ex.size(); ++i) {
    const auto& s = scenes[i % 5];
    const auto stage = ex[i].context == stage_query(PromptStage::BoxAndPoints) ? PromptStage::BoxAndPoints
                                                                                : PromptStage::PointsOnly;
    EXPECT_TRUE(parses(decode(ex[i].tokens, s.image.width(), s.image.height()), stage));
  }
}

TEST(SftTrain, LossNonIncreasingAtSmallStep) {
  const auto scenes = generate_scenes(Profile::Salient, 16, 64, 64, 5);
  const auto ex = make_sft_examples(scenes, annotate_all(scenes));
  const auto r = sft_train(PolicyParams::random(3), ex, SftConfig{5, 1e-3, 8, 0, 0.0});
  ASSERT_EQ(r.losses.size(), 6u);
  int violations = 0;
  for (std::size_t e = 1; e < r.losses.size(); ++e) violations += r.losses[e] > r.losses[e - 1];
  EXPECT_LE(violations, 1);
  EXPECT_LT(r.losses.back(), r.losses.front());
  EXPECT_NEAR(r.losses.front(), mean_token_nll(PolicyParams::random(3), ex), 0.0);
}

TEST(SftTrain, DoesNotMutateDataAndIsDeterministic) {
  const auto scenes = generate_scenes(Profile::Camouflaged, 8, 48, 48, 6);
  const auto ex = make_sft_examples(scenes, annotate_all(scenes));
  const auto copy = ex;
  const SftConfig cfg{3, 0.1, 3, 42, 1.0};
  const auto a = sft_train(PolicyParams::random(4), ex, cfg);
  const auto b = sft_train(PolicyParams::random(4), ex, cfg);
  EXPECT_TRUE(same_examples(ex, copy));
  EXPECT_EQ(serialize_params(a.policy), serialize_params(b.policy));
  EXPECT_EQ(a.losses, b.losses);
}

TEST(SftTrain, GreedyOutputsParseAfterImitation) {
  const auto scenes = generate_scenes(Profile::Salient, 64, 64, 64, 77);
  const auto ex = make_sft_examples(scenes, annotate_all(scenes));
  const PolicyParams init = PolicyParams::random(2);
  EXPECT_EQ(greedy_parse_rate(init, scenes, PromptStage::BoxAndPoints), 0.0);
  const auto r = sft_train(init, ex, SftConfig{80, 0.3, 8, 0, 2.0});
  EXPECT_GE(greedy_parse_rate(r.policy, scenes, PromptStage::BoxAndPoints), 0.8);
  const auto held_out = generate_scenes(Profile::Salient, 32, 64, 64, 78);
  EXPECT_GE(greedy_parse_rate(r.policy, held_out, PromptStage::BoxAndPoints), 0.8);
}

TEST(SftTrain, RejectsBadInput) {
  EXPECT_THROW(sft_train(PolicyParams{}, std::vector<SftExample>{}, SftConfig{}), std::invalid_argument);
  const auto scenes = generate_scenes(Profile::Salient, 2, 32, 32, 1);
  const auto ex = make_sft_examples(scenes, annotate_all(scenes));
  EXPECT_THROW(sft_train(PolicyParams{}, ex, SftConfig{1, 0.1, 0, 0, 0}), std::invalid_argument);
  EXPECT_THROW(make_sft_examples(scenes, {}), std::invalid_argument);
}

TEST(Trajectories, JsonLinesRoundTrip) {
  const auto dir = testutil::temp_dir("traj");
  const auto scenes = generate_scenes(Profile::FineStructure, 6, 64, 64, 8);
  const auto trajs = annotate_all(scenes);
  write_trajectories(dir / "t.jsonl", trajs);
  const auto back = read_trajectories(dir / "t.jsonl");
  ASSERT_EQ(back.size(), trajs.size());
  for (std::size_t i = 0; i < trajs.size(); ++i) {
    EXPECT_EQ(back[i].scene_id, trajs[i].scene_id);
    EXPECT_EQ(back[i].tokens, trajs[i].tokens);
    EXPECT_EQ(back[i].iou, trajs[i].iou);
  }

  std::ofstream(dir / "bad.jsonl") << R"({"scene_id":"a","tokens":[1],"iou":1})" << "\n{broken\n";
  try {
    read_trajectories(dir / "bad.jsonl");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.jsonl:2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(read_trajectories(dir / "missing.jsonl"), IoError);
}
