#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace vgp {

// Axis-aligned box in corner form, pixel units.
struct BBox {
  double xmin = 0.0, ymin = 0.0, xmax = 0.0, ymax = 0.0;

  double width() const { return xmax - xmin; }
  double height() const { return ymax - ymin; }
  double area() const { return width() * height(); }
};

// Throws ValidationError unless xmax > xmin and ymax > ymin.
void validate_box(const BBox& b, const std::string& context);

double intersection_area(const BBox& a, const BBox& b);
double union_area(const BBox& a, const BBox& b);

// 0 for disjoint boxes, 1 for identical ones.
double iou(const BBox& a, const BBox& b);

// Share (in percent) of scores strictly above tau.
double precision_at(const std::vector<double>& ious, double tau);

struct MetricsReport {
  std::vector<double> thresholds;  // same order as `precision`
  std::vector<double> precision;   // percent
  double mean_iou = 0.0;           // percent, mean of per-pair ratios
  double cum_iou = 0.0;            // percent, ratio of summed areas
  std::size_t count = 0;
};

// Scores prediction/ground-truth pairs (matched by index).
MetricsReport score_boxes(const std::vector<BBox>& pred,
                          const std::vector<BBox>& gt,
                          const std::vector<double>& thresholds = {0.5, 0.7,
                                                                   0.9});

std::string to_table(const MetricsReport& r);
std::string to_json(const MetricsReport& r);

}  // namespace vgp
