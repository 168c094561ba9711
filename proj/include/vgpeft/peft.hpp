#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vgpeft/model.hpp"
#include "vgpeft/peft_spec.hpp"

namespace vgp {

// Percent of the model that stays frozen: 100 - trainable/total * 100.
double efficiency(std::size_t trainable, std::size_t total);

// Two decimals, e.g. "99.96".
std::string format_efficiency(double pct);

// Freezes every existing parameter, then attaches the method's trainable
// set: low-rank branches on placed dense layers, bottleneck adapters after
// placed sublayers, or bias unfreezing. The model must not already carry an
// adaptation.
void inject(GroundingModel& m, const PeftSpec& spec, std::uint64_t seed);

// Folds low-rank branches into their base weights and drops them. The
// adapted and merged models produce the same outputs.
void merge_lora(GroundingModel& m);

struct ParamReport {
  struct Row {
    std::string path;
    std::size_t count = 0;
    bool trainable = false;
  };
  std::size_t total = 0;
  std::size_t trainable = 0;
  double efficiency_pct = 100.0;
  std::vector<Row> rows;
};

ParamReport param_report(const GroundingModel& m);
std::string to_table(const ParamReport& r);
std::string to_json(const ParamReport& r);

struct SweepPoint {
  std::vector<ModuleTag> placement;
  std::size_t trainable = 0;
  std::size_t total = 0;
  double efficiency_pct = 100.0;
};

// Injects `base` with each placement in turn (into fresh copies of the same
// seeded model) and tabulates the parameter budget of each.
std::vector<SweepPoint> placement_sweep(
    const ModelConfig& cfg, const PeftSpec& base,
    const std::vector<std::vector<ModuleTag>>& placements, std::uint64_t seed);

std::string sweep_table(const std::vector<SweepPoint>& pts);

}  // namespace vgp
