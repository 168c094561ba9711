#include "vgpeft/metrics.hpp"

#include <random>
#include <string>

#include <gtest/gtest.h>

#include "vgpeft/error.hpp"

namespace vgp {
namespace {

// Integer-aligned boxes let us count unit cells and demand exact agreement.
double rasterized_iou(const BBox& a, const BBox& b, int extent) {
  auto covers = [](const BBox& box, int x, int y) {
    return x >= box.xmin && x < box.xmax && y >= box.ymin && y < box.ymax;
  };
  double inter = 0.0, only_a = 0.0, only_b = 0.0;
  for (int x = 0; x < extent; ++x)
    for (int y = 0; y < extent; ++y) {
      const bool in_a = covers(a, x, y);
      const bool in_b = covers(b, x, y);
      inter += in_a && in_b;
      only_a += in_a && !in_b;
      only_b += !in_a && in_b;
    }
  const double uni = inter + only_a + only_b;
  return inter == 0.0 ? 0.0 : inter / uni;
}

BBox random_int_box(std::mt19937_64& gen, int extent) {
  std::uniform_int_distribution<int> lo(0, extent - 1);
  const int x1 = lo(gen), y1 = lo(gen);
  std::uniform_int_distribution<int> x2(x1 + 1, extent), y2(y1 + 1, extent);
  return BBox{static_cast<double>(x1), static_cast<double>(y1),
              static_cast<double>(x2(gen)), static_cast<double>(y2(gen))};
}

TEST(Metrics, IouExtremes) {
  const BBox a{2, 3, 10, 12};
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, BBox{20, 20, 30, 30}), 0.0);
  // Touching edges share no area.
  EXPECT_DOUBLE_EQ(iou(a, BBox{10, 3, 15, 12}), 0.0);
}

TEST(Metrics, IouKnownOverlap) {
  const BBox a{0, 0, 10, 10};
  const BBox b{5, 5, 15, 15};
  EXPECT_DOUBLE_EQ(intersection_area(a, b), 25.0);
  EXPECT_DOUBLE_EQ(union_area(a, b), 175.0);
  EXPECT_DOUBLE_EQ(iou(a, b), 25.0 / 175.0);
  EXPECT_DOUBLE_EQ(iou(a, b), iou(b, a));
}

TEST(Metrics, IouMatchesRasterizedCountExactly) {
  std::mt19937_64 gen(404);
  for (int trial = 0; trial < 300; ++trial) {
    const BBox a = random_int_box(gen, 64);
    const BBox b = random_int_box(gen, 64);
    EXPECT_EQ(iou(a, b), rasterized_iou(a, b, 64))
        << "a=[" << a.xmin << "," << a.ymin << "," << a.xmax << "," << a.ymax
        << "] b=[" << b.xmin << "," << b.ymin << "," << b.xmax << ","
        << b.ymax << "]";
  }
}

TEST(Metrics, PrecisionThresholdIsStrict) {
  // Exactly at the threshold does not count as a hit.
  EXPECT_DOUBLE_EQ(precision_at({0.5, 0.5}, 0.5), 0.0);
  EXPECT_DOUBLE_EQ(precision_at({0.5000001, 0.5}, 0.5), 50.0);
  EXPECT_DOUBLE_EQ(precision_at({0.2, 0.9, 0.6, 0.4}, 0.5), 50.0);
  EXPECT_THROW(precision_at({}, 0.5), InputError);
}

TEST(Metrics, WorkedTwoRecordExample) {
  const std::vector<BBox> pred{{0, 0, 10, 10}, {0, 0, 10, 10}};
  const std::vector<BBox> gt{{5, 5, 15, 15}, {0, 0, 10, 10}};
  const MetricsReport r = score_boxes(pred, gt);

  ASSERT_EQ(r.thresholds, (std::vector<double>{0.5, 0.7, 0.9}));
  EXPECT_DOUBLE_EQ(r.precision[0], 50.0);
  EXPECT_DOUBLE_EQ(r.precision[1], 50.0);
  EXPECT_DOUBLE_EQ(r.precision[2], 50.0);
  EXPECT_NEAR(r.mean_iou, 400.0 / 7.0, 1e-9);       // 57.14...
  EXPECT_NEAR(r.cum_iou, 100.0 * 125.0 / 275.0, 1e-9);  // 45.45...
  EXPECT_EQ(r.count, 2u);
}

TEST(Metrics, MeanAndCumWeightDifferently) {
  // One large accurate box and one small miss: the cumulative ratio leans
  // toward the large box, the mean does not.
  const std::vector<BBox> pred{{0, 0, 60, 60}, {0, 0, 2, 2}};
  const std::vector<BBox> gt{{0, 0, 60, 60}, {10, 10, 12, 12}};
  const MetricsReport r = score_boxes(pred, gt);
  EXPECT_DOUBLE_EQ(r.mean_iou, 50.0);
  EXPECT_DOUBLE_EQ(r.cum_iou, 100.0 * 3600.0 / 3608.0);
}

TEST(Metrics, TableColumnOrder) {
  const std::vector<BBox> one{{0, 0, 4, 4}};
  const std::string table = to_table(score_boxes(one, one));
  const auto p5 = table.find("Pr@0.5");
  const auto p7 = table.find("Pr@0.7");
  const auto p9 = table.find("Pr@0.9");
  const auto pm = table.find("meanIoU");
  const auto pc = table.find("cumIoU");
  ASSERT_NE(p5, std::string::npos);
  EXPECT_LT(p5, p7);
  EXPECT_LT(p7, p9);
  EXPECT_LT(p9, pm);
  EXPECT_LT(pm, pc);
  EXPECT_NE(table.find("100.00"), std::string::npos);
}

TEST(Metrics, JsonReportShape) {
  const std::vector<BBox> one{{0, 0, 4, 4}};
  const std::string j = to_json(score_boxes(one, one));
  EXPECT_NE(j.find("\"mean_iou\":100.00"), std::string::npos);
  EXPECT_NE(j.find("\"cum_iou\":100.00"), std::string::npos);
  EXPECT_NE(j.find("\"0.5\":100.00"), std::string::npos);
  EXPECT_NE(j.find("\"count\":1"), std::string::npos);
}

TEST(Metrics, RejectsBadInputs) {
  const std::vector<BBox> one{{0, 0, 4, 4}};
  const std::vector<BBox> two{{0, 0, 4, 4}, {1, 1, 2, 2}};
  EXPECT_THROW(score_boxes(one, two), InputError);
  EXPECT_THROW(score_boxes({}, {}), InputError);
  EXPECT_THROW(score_boxes({BBox{4, 0, 4, 4}}, one), ValidationError);
  EXPECT_THROW(validate_box(BBox{0, 5, 4, 5}, "t"), ValidationError);
}

}  // namespace
}  // namespace vgp
