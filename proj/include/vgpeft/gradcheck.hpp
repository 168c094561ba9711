#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "vgpeft/tensor.hpp"

namespace vgp {

struct GradCheckResult {
  double max_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coords_checked = 0;

  bool ok(double tol) const { return max_err < tol; }
};

// Central-difference check of the reverse-mode gradients. `loss_fn` must
// rebuild the scalar loss from the parameters' current values on every call.
// When a parameter has more coordinates than `max_coords`, a seeded sample
// of coordinates is probed instead of all of them.
GradCheckResult finite_diff_check(
    const std::function<Tensor()>& loss_fn,
    const std::vector<std::shared_ptr<Parameter>>& params, double h = 1e-5,
    std::size_t max_coords = 24, std::uint64_t seed = 17);

}  // namespace vgp
