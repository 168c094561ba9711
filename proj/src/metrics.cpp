#include "vgpeft/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "vgpeft/error.hpp"

namespace vgp {

namespace {

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

void validate_box(const BBox& b, const std::string& context) {
  if (!(b.xmax > b.xmin) || !(b.ymax > b.ymin))
    throw ValidationError(context + ": degenerate box [" +
                          std::to_string(b.xmin) + ", " +
                          std::to_string(b.ymin) + ", " +
                          std::to_string(b.xmax) + ", " +
                          std::to_string(b.ymax) + "]");
}

double intersection_area(const BBox& a, const BBox& b) {
  const double w = std::min(a.xmax, b.xmax) - std::max(a.xmin, b.xmin);
  const double h = std::min(a.ymax, b.ymax) - std::max(a.ymin, b.ymin);
  return (w > 0.0 && h > 0.0) ? w * h : 0.0;
}

double union_area(const BBox& a, const BBox& b) {
  return a.area() + b.area() - intersection_area(a, b);
}

double iou(const BBox& a, const BBox& b) {
  const double inter = intersection_area(a, b);
  return inter <= 0.0 ? 0.0 : inter / union_area(a, b);
}

double precision_at(const std::vector<double>& ious, double tau) {
  if (ious.empty()) throw InputError("precision_at: no scores");
  std::size_t hits = 0;
  for (double v : ious)
    if (v > tau) ++hits;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(ious.size());
}

MetricsReport score_boxes(const std::vector<BBox>& pred,
                          const std::vector<BBox>& gt,
                          const std::vector<double>& thresholds) {
  if (pred.size() != gt.size())
    throw InputError("score_boxes: " + std::to_string(pred.size()) +
                     " predictions vs " + std::to_string(gt.size()) +
                     " ground-truth boxes");
  if (pred.empty()) throw InputError("score_boxes: no records");

  std::vector<double> ious(pred.size());
  double ratio_sum = 0.0, inter_sum = 0.0, union_sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    validate_box(pred[i], "prediction " + std::to_string(i));
    validate_box(gt[i], "ground truth " + std::to_string(i));
    const double inter = intersection_area(pred[i], gt[i]);
    const double uni = union_area(pred[i], gt[i]);
    ious[i] = inter <= 0.0 ? 0.0 : inter / uni;
    ratio_sum += ious[i];
    inter_sum += inter;
    union_sum += uni;
  }

  MetricsReport r;
  r.thresholds = thresholds;
  for (double tau : thresholds) r.precision.push_back(precision_at(ious, tau));
  r.mean_iou = 100.0 * ratio_sum / static_cast<double>(pred.size());
  r.cum_iou = 100.0 * inter_sum / union_sum;
  r.count = pred.size();
  return r;
}

std::string to_table(const MetricsReport& r) {
  std::ostringstream os;
  for (double tau : r.thresholds) {
    char h[16];
    std::snprintf(h, sizeof(h), "Pr@%.1f", tau);
    os << h << "  ";
  }
  os << "meanIoU  cumIoU  (n=" << r.count << ")\n";
  for (std::size_t i = 0; i < r.precision.size(); ++i)
    os << fixed2(r.precision[i]) << "  ";
  os << fixed2(r.mean_iou) << "  " << fixed2(r.cum_iou) << "\n";
  return os.str();
}

std::string to_json(const MetricsReport& r) {
  std::ostringstream os;
  os << "{\"count\":" << r.count << ",\"precision\":{";
  for (std::size_t i = 0; i < r.thresholds.size(); ++i) {
    char key[16];
    std::snprintf(key, sizeof(key), "%.1f", r.thresholds[i]);
    os << (i ? "," : "") << "\"" << key << "\":" << fixed2(r.precision[i]);
  }
  os << "},\"mean_iou\":" << fixed2(r.mean_iou)
     << ",\"cum_iou\":" << fixed2(r.cum_iou) << "}";
  return os.str();
}

}  // namespace vgp
