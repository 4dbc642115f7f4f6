#include <gtest/gtest.h>

#include <fstream>

#include "oracles/metric_oracle.hpp"
#include "segrl/distance_transform.hpp"
#include "segrl/raster.hpp"
#include "test_util.hpp"

using namespace segrl;

TEST(Raster, RejectsBadDimensions) {
  EXPECT_THROW(GrayImage(0, 4), std::invalid_argument);
  EXPECT_THROW(BinaryMask(3, -1), std::invalid_argument);
  EXPECT_THROW(GrayImage(2, 2, std::vector<std::uint8_t>(3)), std::invalid_argument);
  EXPECT_THROW(SoftMap(1, 1, {1.5}), std::invalid_argument);
}

TEST(Raster, IouExamples) {
  BinaryMask a(2, 2), b(2, 2);
  a.set(0, 0);
  a.set(0, 1);
  b.set(0, 1);
  b.set(1, 1);
  EXPECT_DOUBLE_EQ(iou(a, b), 1.0 / 3.0);
  EXPECT_EQ(iou(a, a), 1.0);
  EXPECT_EQ(iou(a, a.complement()), 0.0);
  BinaryMask empty(5, 3);
  EXPECT_EQ(iou(empty, empty), 1.0);
}

TEST(Raster, IouDimensionMismatchNamesBothShapes) {
  try {
    iou(BinaryMask(2, 3), BinaryMask(3, 2));
    FAIL();
  } catch (const DimensionMismatch& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("3x2"), std::string::npos) << msg;
  }
}

TEST(Raster, MaeExamples) {
  BinaryMask gt(2, 2);
  gt.set(0, 0);
  BinaryMask pred = gt;
  EXPECT_EQ(mae(pred, gt), 0.0);
  pred.set(1, 0);
  pred.set(1, 1);
  EXPECT_DOUBLE_EQ(mae(pred, gt), 0.5);
  EXPECT_EQ(mae(BinaryMask(3, 3, true), BinaryMask(3, 3)), 1.0);
  EXPECT_THROW(mae(BinaryMask(2, 2), BinaryMask(2, 3)), DimensionMismatch);
}

TEST(Raster, ForegroundFraction) {
  EXPECT_EQ(foreground_fraction(BinaryMask(4, 4)), 0.0);
  EXPECT_EQ(foreground_fraction(BinaryMask(4, 4, true)), 1.0);
  EXPECT_EQ(foreground_fraction(testutil::rect_mask(4, 4, 1, 1, 2, 2)), 0.25);
}

TEST(Raster, IouAndMaeProperties) {
  Rng rng(11);
  for (int k = 0; k < 300; ++k) {
    const int w = rng.uniform_int(1, 12), h = rng.uniform_int(1, 12);
    const BinaryMask a = testutil::random_mask(rng, w, h);
    const BinaryMask b = testutil::random_mask(rng, w, h);
    EXPECT_EQ(iou(a, b), iou(b, a));
    EXPECT_EQ(iou(a, a), 1.0);
    EXPECT_EQ(mae(a, a), 0.0);
    EXPECT_EQ(mae(a, a.complement()), 1.0);
    EXPECT_NEAR(iou(a, b), oracle::iou(a, b), 1e-15);
    EXPECT_NEAR(mae(a, b), oracle::mae(a, b), 1e-15);
    for (double v : {iou(a, b), mae(a, b), foreground_fraction(a)}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Raster, PgmRoundTrip) {
  const auto dir = testutil::temp_dir("pgm");
  Rng rng(3);
  GrayImage img(7, 5);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 7; ++x) img.set(x, y, static_cast<std::uint8_t>(rng.uniform_int(0, 255)));
  write_pgm(dir / "i.pgm", img);
  EXPECT_EQ(read_pgm_image(dir / "i.pgm"), img);

  const BinaryMask m = testutil::random_mask(rng, 7, 5);
  write_pgm(dir / "m.pgm", m);
  EXPECT_EQ(read_pgm_mask(dir / "m.pgm"), m);

  // exact byte layout
  std::ifstream in(dir / "m.pgm", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  EXPECT_EQ(bytes.substr(0, 11), "P5\n7 5\n255\n");
  EXPECT_EQ(bytes.size(), 11u + 35u);
}

TEST(Raster, PgmErrors) {
  const auto dir = testutil::temp_dir("pgm_err");
  EXPECT_THROW(read_pgm_image(dir / "missing.pgm"), IoError);
  {
    std::ofstream(dir / "short.pgm", std::ios::binary) << "P5\n4 4\n255\nabc";
  }
  EXPECT_THROW(read_pgm_image(dir / "short.pgm"), IoError);
  {
    std::ofstream(dir / "p2.pgm", std::ios::binary) << "P2\n1 1\n255\n0";
  }
  EXPECT_THROW(read_pgm_image(dir / "p2.pgm"), IoError);
  write_pgm(dir / "gray.pgm", GrayImage(2, 2, 7));
  EXPECT_THROW(read_pgm_mask(dir / "gray.pgm"), IoError);
}

TEST(DistanceTransform, MatchesBruteForceExactly) {
  Rng rng(5);
  for (int k = 0; k < 200; ++k) {
    const int w = rng.uniform_int(1, 32), h = rng.uniform_int(1, 32);
    const double density = k % 4 == 0 ? 0.01 : rng.uniform();
    const BinaryMask m = testutil::random_mask(rng, w, h, density);
    const DistanceField df = distance_transform(m);
    const auto brute = oracle::brute_sq_distance(m);
    if (m.count() == 0) {
      for (auto v : df.sq_dist) EXPECT_EQ(v, DistanceField::kNoForeground);
    } else {
      ASSERT_EQ(df.sq_dist, brute) << "mask " << k << " " << w << "x" << h;
    }
  }
}

TEST(DistanceTransform, NearestForegroundEnumeratesAllTies) {
  Rng rng(8);
  for (int k = 0; k < 50; ++k) {
    const BinaryMask m = testutil::random_mask(rng, 12, 9, 0.1);
    if (m.count() == 0) continue;
    const DistanceField df = distance_transform(m);
    for (int y = 0; y < 9; ++y)
      for (int x = 0; x < 12; ++x) {
        std::vector<std::size_t> got;
        for_each_nearest_foreground(m, df, x, y, [&](std::size_t j) { got.push_back(j); });
        std::vector<std::size_t> want;
        for (int yy = 0; yy < 9; ++yy)
          for (int xx = 0; xx < 12; ++xx)
            if (m.at(xx, yy) && (xx - x) * (xx - x) + (yy - y) * (yy - y) == df.at(x, y))
              want.push_back(m.index(xx, yy));
        std::sort(got.begin(), got.end());
        EXPECT_EQ(got, want);
      }
  }
}
