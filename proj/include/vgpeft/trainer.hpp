#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vgpeft/data.hpp"
#include "vgpeft/metrics.hpp"
#include "vgpeft/model.hpp"

namespace vgp {

enum class Optimizer { kAdam, kSgd };

const char* to_string(Optimizer o);
Optimizer optimizer_from(const std::string& s);

struct TrainConfig {
  std::size_t steps = 500;
  std::size_t batch_size = 64;
  double lr = 3e-3;
  Optimizer optimizer = Optimizer::kAdam;
  double lambda_reg = 1.0;  // coordinate regression term
  double lambda_iou = 1.0;  // overlap term
  std::uint64_t seed = 0;   // batch sampling
  std::size_t log_every = 50;
  std::size_t eval_every = 0;  // 0 = only train

  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct TrainLog {
  struct LossEntry {
    std::size_t step = 0;
    double loss = 0.0;
  };
  struct EvalEntry {
    std::size_t step = 0;
    MetricsReport report;
  };
  std::vector<LossEntry> losses;
  std::vector<EvalEntry> evals;
  std::uint64_t frozen_hash_before = 0;
  std::uint64_t frozen_hash_after = 0;
  double final_loss = 0.0;
  std::size_t steps_run = 0;
};

std::string to_json(const TrainLog& log);

// Combined objective on normalized center-form boxes: coordinate regression
// plus overlap shortfall.
Tensor box_loss(const Tensor& pred, const Tensor& target, double lambda_reg,
                double lambda_iou);

// Runs the optimization loop over the trainable parameters only. Batches are
// sampled with the config seed, so identical inputs give identical weights.
// A non-finite loss raises DivergedError carrying the step. When
// `eval_records` is given and eval_every is set, held-out metrics are
// appended to the log.
TrainLog train(GroundingModel& m, const std::vector<AnnotationRecord>& records,
               const TrainConfig& cfg,
               const std::vector<AnnotationRecord>* eval_records = nullptr);

BBox denormalize(const NormBox& b, double width, double height);

// Scores the model's predictions against the records' ground truth.
MetricsReport evaluate(const GroundingModel& m,
                       const std::vector<AnnotationRecord>& records);

// Same scoring path, arbitrary predictor (e.g. an oracle in tests).
MetricsReport evaluate_with(
    const std::function<NormBox(const AnnotationRecord&)>& predict,
    const std::vector<AnnotationRecord>& records);

std::vector<Prediction> predict_all(const GroundingModel& m,
                                    const std::vector<AnnotationRecord>& records);

}  // namespace vgp
