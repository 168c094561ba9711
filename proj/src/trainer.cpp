#include "vgpeft/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <random>

#include <json.hpp>

#include "vgpeft/error.hpp"

namespace vgp {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

struct Compiled {
  std::vector<std::size_t> ids;
  Tensor patches;
  Tensor target;  // (1,4) center form, no grad
  double width = 0.0, height = 0.0;
  std::string pair_id;
};

Compiled compile_record(const AnnotationRecord& r, const ModelConfig& cfg) {
  r.validate();
  if (!r.patches)
    throw InputError("pair '" + r.pair_id + "' has no patch features");
  if (r.patches->grid != cfg.grid || r.patches->dim != cfg.patch_dim)
    throw InputError("pair '" + r.pair_id + "' has a " +
                     std::to_string(r.patches->grid) + "x" +
                     std::to_string(r.patches->grid) + "x" +
                     std::to_string(r.patches->dim) +
                     " patch grid, model expects " + std::to_string(cfg.grid) +
                     "x" + std::to_string(cfg.grid) + "x" +
                     std::to_string(cfg.patch_dim));
  Compiled c;
  c.ids = tokenize(r.query, cfg.vocab);
  if (c.ids.empty())
    throw InputError("pair '" + r.pair_id + "' tokenizes to nothing");
  if (c.ids.size() > cfg.max_text_len)
    throw InputError("pair '" + r.pair_id + "' query exceeds max_text_len");
  c.patches = r.patches->tensor();
  const NormBox b = r.norm_box();
  c.target = Tensor({1, 4}, {b.cx, b.cy, b.w, b.h}, false);
  c.width = r.width;
  c.height = r.height;
  c.pair_id = r.pair_id;
  return c;
}

std::string hash_hex(std::uint64_t h) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

const char* to_string(Optimizer o) {
  return o == Optimizer::kAdam ? "adam" : "sgd";
}

Optimizer optimizer_from(const std::string& s) {
  if (s == "adam") return Optimizer::kAdam;
  if (s == "sgd") return Optimizer::kSgd;
  throw ConfigError("unknown optimizer '" + s + "' (expected adam or sgd)");
}

void TrainConfig::validate() const {
  if (steps == 0) throw ConfigError("train: steps must be positive");
  if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
  if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
  if (lambda_reg < 0.0 || lambda_iou < 0.0)
    throw ConfigError("train: loss weights must be non-negative");
  if (lambda_reg == 0.0 && lambda_iou == 0.0)
    throw ConfigError("train: at least one loss term must be active");
  if (log_every == 0) throw ConfigError("train: log_every must be positive");
}

Tensor box_loss(const Tensor& pred, const Tensor& target, double lambda_reg,
                double lambda_iou) {
  Tensor loss = scale(smooth_l1(pred, target), lambda_reg);
  if (lambda_iou != 0.0) {
    Tensor overlap = sub(Tensor::scalar(1.0), box_iou(pred, target));
    loss = add(loss, scale(overlap, lambda_iou));
  }
  return loss;
}

TrainLog train(GroundingModel& m, const std::vector<AnnotationRecord>& records,
               const TrainConfig& cfg,
               const std::vector<AnnotationRecord>* eval_records) {
  cfg.validate();
  if (records.empty()) throw InputError("train: no records");

  std::vector<Compiled> batchable;
  batchable.reserve(records.size());
  for (const auto& r : records)
    batchable.push_back(compile_record(r, m.config()));

  const auto trainable = m.trainable_params();
  std::vector<std::vector<double>> adam_m(trainable.size());
  std::vector<std::vector<double>> adam_v(trainable.size());
  for (std::size_t i = 0; i < trainable.size(); ++i) {
    adam_m[i].assign(trainable[i]->tensor.size(), 0.0);
    adam_v[i].assign(trainable[i]->tensor.size(), 0.0);
  }

  TrainLog log;
  log.frozen_hash_before = m.frozen_hash();

  std::mt19937_64 gen(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, batchable.size() - 1);

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    Tensor batch_sum = Tensor::scalar(0.0);
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const Compiled& ex = batchable[pick(gen)];
      Tensor term;
      try {
        const Tensor pred = m.forward_box(ex.ids, ex.patches);
        term = box_loss(pred, ex.target, cfg.lambda_reg, cfg.lambda_iou);
      } catch (const InputError&) {
        // Inputs were validated up front, so an input failure here means a
        // predicted box collapsed to zero extent — the run is lost.
        throw DivergedError(step, "box extents collapsed");
      }
      batch_sum = add(batch_sum, term);
    }
    Tensor loss = scale(batch_sum, 1.0 / static_cast<double>(cfg.batch_size));
    const double loss_value = loss.value();
    if (!std::isfinite(loss_value))
      throw DivergedError(step, "loss is not finite");

    if (!trainable.empty()) {
      for (const auto& p : trainable) p->tensor.zero_grad();
      loss.backward();
      const double t = static_cast<double>(step);
      for (std::size_t i = 0; i < trainable.size(); ++i) {
        Tensor& w = trainable[i]->tensor;
        if (!w.has_grad()) continue;  // not reached by this batch's graph
        const auto& g = w.grad();
        auto& x = w.data();
        if (cfg.optimizer == Optimizer::kSgd) {
          for (std::size_t k = 0; k < x.size(); ++k) x[k] -= cfg.lr * g[k];
        } else {
          auto& mm = adam_m[i];
          auto& vv = adam_v[i];
          const double c1 = 1.0 - std::pow(kAdamBeta1, t);
          const double c2 = 1.0 - std::pow(kAdamBeta2, t);
          for (std::size_t k = 0; k < x.size(); ++k) {
            mm[k] = kAdamBeta1 * mm[k] + (1.0 - kAdamBeta1) * g[k];
            vv[k] = kAdamBeta2 * vv[k] + (1.0 - kAdamBeta2) * g[k] * g[k];
            x[k] -= cfg.lr * (mm[k] / c1) / (std::sqrt(vv[k] / c2) + kAdamEps);
          }
        }
      }
    }

    if (step % cfg.log_every == 0 || step == cfg.steps)
      log.losses.push_back({step, loss_value});
    if (eval_records && cfg.eval_every != 0 && step % cfg.eval_every == 0)
      log.evals.push_back({step, evaluate(m, *eval_records)});
    log.final_loss = loss_value;
    log.steps_run = step;
  }

  log.frozen_hash_after = m.frozen_hash();
  return log;
}

std::string to_json(const TrainLog& log) {
  nlohmann::json j;
  j["frozen_hash_before"] = hash_hex(log.frozen_hash_before);
  j["frozen_hash_after"] = hash_hex(log.frozen_hash_after);
  j["final_loss"] = log.final_loss;
  j["steps_run"] = log.steps_run;
  j["losses"] = nlohmann::json::array();
  for (const auto& e : log.losses)
    j["losses"].push_back({{"step", e.step}, {"loss", e.loss}});
  j["evals"] = nlohmann::json::array();
  for (const auto& e : log.evals)
    j["evals"].push_back({{"step", e.step},
                          {"report", nlohmann::json::parse(to_json(e.report))}});
  return j.dump(2);
}

BBox denormalize(const NormBox& b, double width, double height) {
  return BBox{(b.cx - 0.5 * b.w) * width, (b.cy - 0.5 * b.h) * height,
              (b.cx + 0.5 * b.w) * width, (b.cy + 0.5 * b.h) * height};
}

MetricsReport evaluate(const GroundingModel& m,
                       const std::vector<AnnotationRecord>& records) {
  return evaluate_with(
      [&m](const AnnotationRecord& r) {
        return m.predict_box(tokenize(r.query, m.config().vocab),
                             r.patches->tensor());
      },
      records);
}

MetricsReport evaluate_with(
    const std::function<NormBox(const AnnotationRecord&)>& predict,
    const std::vector<AnnotationRecord>& records) {
  if (records.empty()) throw InputError("evaluate: no records");
  std::vector<BBox> pred, gt;
  pred.reserve(records.size());
  gt.reserve(records.size());
  for (const auto& r : records) {
    r.validate();
    if (!r.patches)
      throw InputError("pair '" + r.pair_id + "' has no patch features");
    pred.push_back(denormalize(predict(r), r.width, r.height));
    gt.push_back(r.bbox);
  }
  return score_boxes(pred, gt);
}

std::vector<Prediction> predict_all(
    const GroundingModel& m, const std::vector<AnnotationRecord>& records) {
  std::vector<Prediction> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    r.validate();
    if (!r.patches)
      throw InputError("pair '" + r.pair_id + "' has no patch features");
    const NormBox b =
        m.predict_box(tokenize(r.query, m.config().vocab), r.patches->tensor());
    out.push_back({r.pair_id, denormalize(b, r.width, r.height)});
  }
  return out;
}

}  // namespace vgp
