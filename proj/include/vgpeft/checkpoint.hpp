#pragma once

#include <string>

#include "vgpeft/model.hpp"

namespace vgp {

// Full snapshot: config, adaptation spec, and every parameter, bit-exact.
void save_checkpoint(const GroundingModel& m, const std::string& path);
GroundingModel load_checkpoint(const std::string& path);

// Compact snapshot of an adapted model: spec, a digest of the frozen
// parameters, and only the trainable tensors.
void save_delta(const GroundingModel& m, const std::string& path);

// Re-attaches a delta to a pristine base model. The digest recorded at save
// time must match the base, otherwise ChecksumError. The base is not
// modified; the adapted model is returned.
GroundingModel apply_delta(const GroundingModel& base, const std::string& path);

}  // namespace vgp
