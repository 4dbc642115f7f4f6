#include <gtest/gtest.h>

#include "oracles/metric_oracle.hpp"
#include "segrl/metrics.hpp"
#include "test_util.hpp"

using namespace segrl;

namespace {

BinaryMask mixed_mask(Rng& rng, int w, int h) {
  while (true) {
    BinaryMask m = testutil::random_mask(rng, w, h);
    if (m.count() > 0 && m.count() < m.size()) return m;
  }
}

}  // namespace

TEST(SMeasure, IdentityAndDegenerateCases) {
  Rng rng(1);
  for (int k = 0; k < 50; ++k) {
    const BinaryMask g = mixed_mask(rng, rng.uniform_int(2, 20), rng.uniform_int(2, 20));
    EXPECT_EQ(s_measure(g, g), 1.0);
  }
  BinaryMask empty(6, 6);
  EXPECT_EQ(s_measure(empty, empty), 1.0);
  EXPECT_DOUBLE_EQ(s_measure(testutil::rect_mask(6, 6, 0, 0, 2, 5), empty), 0.5);  // 1 - mean(pred)
  EXPECT_DOUBLE_EQ(s_measure(testutil::rect_mask(6, 6, 0, 0, 2, 5), BinaryMask(6, 6, true)), 0.5);
  EXPECT_THROW(s_measure(BinaryMask(3, 3), BinaryMask(3, 4)), DimensionMismatch);
}

TEST(SMeasure, ZeroPredictionOnCenteredSquare) {
  const BinaryMask gt = testutil::rect_mask(16, 16, 4, 4, 11, 11);
  const BinaryMask pred(16, 16);
  const double want = oracle::s_measure(pred, gt);
  EXPECT_NEAR(s_measure(pred, gt), want, 1e-12);
  // object term: fg similarity 0, bg similarity 2/(1+1) = 1 weighted by 0.75;
  // region term: every quadrant has a constant pred against a mixed gt -> 0
  EXPECT_NEAR(want, 0.5 * 0.75, 1e-12);
}

TEST(EMeasure, Examples) {
  Rng rng(2);
  for (int k = 0; k < 50; ++k) {
    const BinaryMask g = mixed_mask(rng, rng.uniform_int(2, 20), rng.uniform_int(2, 20));
    EXPECT_EQ(e_measure(g, g), 1.0);
  }
  BinaryMask empty(5, 5);
  EXPECT_EQ(e_measure(empty, empty), 1.0);
  const BinaryMask gt = testutil::rect_mask(8, 8, 2, 1, 5, 6);
  EXPECT_NEAR(e_measure(gt.complement(), gt), oracle::e_measure(gt.complement(), gt), 1e-12);
  EXPECT_LT(e_measure(gt.complement(), gt), 0.1);
  EXPECT_THROW(e_measure(BinaryMask(3, 3), BinaryMask(4, 3)), DimensionMismatch);
}

TEST(FMax, Examples) {
  const BinaryMask gt = testutil::rect_mask(6, 6, 2, 2, 3, 3);
  EXPECT_EQ(f_max(gt, gt).value, 1.0);
  EXPECT_EQ(f_max(BinaryMask(6, 6), gt).value, 0.0);
  // 3x3 block covering two of the four gt pixels: P = 2/9, R = 1/2
  const BinaryMask pred = testutil::rect_mask(6, 6, 2, 0, 4, 2);
  int overlap = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) overlap += pred.at(i) && gt.at(i);
  ASSERT_EQ(overlap, 2);
  const double p = 2.0 / 9.0, r = 0.5;
  EXPECT_NEAR(f_max(pred, gt).value, 1.3 * p * r / (0.3 * p + r), 1e-15);
  EXPECT_NEAR(f_max(pred, gt).value, oracle::f_max(pred, gt), 1e-15);

  const FScore undefined = f_max(pred, BinaryMask(6, 6));
  EXPECT_TRUE(undefined.gt_empty);
  EXPECT_EQ(undefined.value, 0.0);
}

TEST(FMax, BinaryEqualsSingleThreshold) {
  Rng rng(3);
  for (int k = 0; k < 100; ++k) {
    const int w = rng.uniform_int(1, 16), h = rng.uniform_int(1, 16);
    const BinaryMask g = testutil::random_mask(rng, w, h);
    const BinaryMask p = testutil::random_mask(rng, w, h);
    if (g.count() == 0) continue;
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (p.at(i)) (g.at(i) ? tp : fp) += 1;
    const double prec = tp + fp == 0 ? 0 : tp / (tp + fp);
    const double rec = tp / static_cast<double>(g.count());
    EXPECT_NEAR(f_max(p, g).value, f_beta(prec, rec, 0.3), 1e-15);
  }
}

TEST(FMax, FlippingACorrectPixelNeverHelps) {
  Rng rng(4);
  for (int k = 0; k < 100; ++k) {
    const int w = rng.uniform_int(2, 12), h = rng.uniform_int(2, 12);
    const BinaryMask g = mixed_mask(rng, w, h);
    BinaryMask p = testutil::random_mask(rng, w, h);
    std::vector<std::size_t> correct;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (p.at(i) == g.at(i)) correct.push_back(i);
    if (correct.empty()) continue;
    const double before = f_max(p, g).value;
    const std::size_t i = correct[rng.uniform_int(0, static_cast<int>(correct.size()) - 1)];
    p.set(i, !p.at(i));
    EXPECT_LE(f_max(p, g).value, before);
  }
}

TEST(FWeighted, Examples) {
  const BinaryMask gt = testutil::rect_mask(16, 16, 5, 5, 9, 9);
  EXPECT_EQ(f_weighted(gt, gt).value, 1.0);
  EXPECT_EQ(f_weighted(BinaryMask(16, 16), gt).value, 0.0);
  EXPECT_TRUE(f_weighted(gt, BinaryMask(16, 16)).gt_empty);

  BinaryMask near = gt, far = gt;
  near.set(10, 7);
  far.set(15, 0);
  const double fn = f_weighted(near, gt).value, ff = f_weighted(far, gt).value;
  EXPECT_NEAR(fn, oracle::f_weighted(near, gt), 1e-12);
  EXPECT_NEAR(ff, oracle::f_weighted(far, gt), 1e-12);
  EXPECT_GT(fn, ff);
}

TEST(Metrics, AgreeWithOracleOnRandomPairs) {
  Rng rng(5);
  for (int k = 0; k < 150; ++k) {
    const int w = rng.uniform_int(1, 24), h = rng.uniform_int(1, 24);
    const BinaryMask g = testutil::random_mask(rng, w, h, k % 5 == 0 ? 0.05 : -1.0);
    const BinaryMask pb = testutil::random_mask(rng, w, h);
    const SoftMap ps = testutil::random_soft(rng, w, h);
    EXPECT_NEAR(s_measure(ps, g), oracle::s_measure(ps, g), 1e-9) << k;
    EXPECT_NEAR(s_measure(pb, g), oracle::s_measure(pb, g), 1e-9) << k;
    EXPECT_NEAR(e_measure(pb, g), oracle::e_measure(pb, g), 1e-9) << k;
    EXPECT_NEAR(f_max(ps, g).value, oracle::f_max(ps, g), 1e-9) << k;
    EXPECT_NEAR(f_weighted(ps, g).value, oracle::f_weighted(ps, g), 1e-9) << k;
  }
}

TEST(Metrics, TransposeInvariance) {
  Rng rng(6);
  for (int k = 0; k < 150; ++k) {
    const int w = rng.uniform_int(1, 20), h = rng.uniform_int(1, 20);
    const BinaryMask g = testutil::random_mask(rng, w, h);
    const BinaryMask pb = testutil::random_mask(rng, w, h);
    const SoftMap ps = testutil::random_soft(rng, w, h);
    const BinaryMask gt_t = g.transposed();
    EXPECT_NEAR(s_measure(ps, g), s_measure(ps.transposed(), gt_t), 1e-12);
    EXPECT_NEAR(e_measure(pb, g), e_measure(pb.transposed(), gt_t), 1e-12);
    EXPECT_NEAR(f_max(ps, g).value, f_max(ps.transposed(), gt_t).value, 1e-12);
    EXPECT_NEAR(f_weighted(ps, g).value, f_weighted(ps.transposed(), gt_t).value, 1e-12);
    EXPECT_NEAR(mae(ps, g), mae(ps.transposed(), gt_t), 1e-12);
    EXPECT_EQ(iou(pb, g), iou(pb.transposed(), gt_t));
  }
}

TEST(Metrics, OutputsStayInUnitInterval) {
  Rng rng(7);
  for (int k = 0; k < 400; ++k) {
    const int w = rng.uniform_int(1, 16), h = rng.uniform_int(1, 16);
    const BinaryMask g = testutil::random_mask(rng, w, h, rng.uniform() < 0.2 ? rng.uniform_int(0, 1) : -1.0);
    const BinaryMask pb = testutil::random_mask(rng, w, h);
    const SoftMap ps = testutil::random_soft(rng, w, h);
    for (double v : {s_measure(ps, g), s_measure(pb, g), e_measure(pb, g), f_max(ps, g).value,
                     f_weighted(ps, g).value, mae(ps, g), iou(pb, g)}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(EvaluateDataset, Aggregation) {
  Rng rng(8);
  std::vector<BinaryMask> gts, same;
  for (int k = 0; k < 5; ++k) gts.push_back(mixed_mask(rng, 9, 7));
  const MetricReport all = evaluate_dataset(gts, gts);
  EXPECT_EQ(all.s_measure, 1.0);
  EXPECT_EQ(all.e_measure, 1.0);
  EXPECT_EQ(all.f_max, 1.0);
  EXPECT_EQ(all.f_weighted, 1.0);
  EXPECT_EQ(all.iou, 1.0);
  EXPECT_EQ(all.mae, 0.0);
  EXPECT_EQ(all.sample_count, 5u);

  const BinaryMask p = testutil::random_mask(rng, 9, 7);
  const MetricReport one = evaluate_dataset({p}, {gts[0]});
  const SampleMetrics sm = evaluate_sample(p, gts[0]);
  EXPECT_EQ(one.s_measure, sm.s_measure);
  EXPECT_EQ(one.f_weighted, sm.f_weighted.value);

  const MetricReport half = evaluate_dataset({gts[0], gts[1].complement()}, {gts[0], gts[1]});
  EXPECT_DOUBLE_EQ(half.iou, 0.5);
}

TEST(EvaluateDataset, EmptyGtExcludedFromF) {
  const BinaryMask gt = testutil::rect_mask(4, 4, 0, 0, 1, 1);
  const MetricReport r = evaluate_dataset({gt, BinaryMask(4, 4)}, {gt, BinaryMask(4, 4)});
  EXPECT_EQ(r.undefined_f_count, 1u);
  EXPECT_EQ(r.f_max, 1.0);
  EXPECT_EQ(r.sample_count, 2u);
}

TEST(EvaluateDataset, Errors) {
  EXPECT_THROW(evaluate_dataset({}, {}), std::invalid_argument);
  EXPECT_THROW(evaluate_dataset({BinaryMask(2, 2)}, {}), std::invalid_argument);
  try {
    evaluate_dataset({BinaryMask(2, 2), BinaryMask(2, 2)}, {BinaryMask(2, 2), BinaryMask(3, 2)});
    FAIL();
  } catch (const DimensionMismatch& e) {
    EXPECT_NE(std::string(e.what()).find("sample 1"), std::string::npos) << e.what();
  }
}

TEST(MetricReport, CsvRow) {
  MetricReport r{0.5, 0.25, 1.0, 0.0, 0.125, 0.75, 3, 0};
  EXPECT_EQ(MetricReport::csv_header(), "s,e,f_max,f_w,mae,iou,n");
  EXPECT_EQ(r.csv_row(), "0.500000,0.250000,1.000000,0.000000,0.125000,0.750000,3");
}

TEST(Metrics, IdentityIsExactlyOneForSparseAndDenseMasks) {
  Rng rng(9);
  for (int k = 0; k < 300; ++k) {
    const int w = rng.uniform_int(1, 32), h = rng.uniform_int(2, 32);
    BinaryMask g = testutil::random_mask(rng, w, h, k % 3 == 0 ? 0.002 : (k % 3 == 1 ? 0.995 : rng.uniform()));
    if (g.count() == 0) g.set(rng.uniform_int(0, static_cast<int>(g.size()) - 1));
    if (g.count() == g.size()) g.set(0, false);
    EXPECT_EQ(s_measure(g, g), 1.0) << k;
    EXPECT_EQ(e_measure(g, g), 1.0) << k;
    EXPECT_EQ(f_max(g, g).value, 1.0) << k;
    EXPECT_EQ(f_weighted(g, g).value, 1.0) << k;
    EXPECT_EQ(iou(g, g), 1.0);
    EXPECT_EQ(mae(g, g), 0.0);
  }
}
