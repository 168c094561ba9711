#include "vgpeft/gradcheck.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "vgpeft/error.hpp"

namespace vgp {

GradCheckResult finite_diff_check(
    const std::function<Tensor()>& loss_fn,
    const std::vector<std::shared_ptr<Parameter>>& params, double h,
    std::size_t max_coords, std::uint64_t seed) {
  if (params.empty())
    throw ContractError("finite_diff_check: no parameters to probe");

  // One reverse sweep gives every analytic gradient at once.
  for (const auto& p : params) p->tensor.zero_grad();
  Tensor loss = loss_fn();
  loss.backward();

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) {
    if (!p->tensor.requires_grad())
      throw ContractError("finite_diff_check: parameter '" + p->path +
                          "' does not require gradients");
    analytic.push_back(p->tensor.has_grad()
                           ? p->tensor.grad()
                           : std::vector<double>(p->tensor.size(), 0.0));
  }

  std::mt19937_64 rng(seed);
  GradCheckResult res;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& values = params[pi]->tensor.data();
    std::vector<std::size_t> coords(values.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > max_coords) {
      for (std::size_t i = 0; i < max_coords; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, coords.size() - 1);
        std::swap(coords[i], coords[pick(rng)]);
      }
      coords.resize(max_coords);
    }

    for (std::size_t c : coords) {
      const double saved = values[c];
      values[c] = saved + h;
      const double fp = loss_fn().value();
      values[c] = saved - h;
      const double fm = loss_fn().value();
      values[c] = saved;

      const double num = (fp - fm) / (2.0 * h);
      const double ana = analytic[pi][c];
      const double err = std::abs(ana - num) / std::max(1.0, std::abs(ana));
      ++res.coords_checked;
      if (err > res.max_err) {
        res.max_err = err;
        res.worst_param = params[pi]->path;
        res.worst_index = c;
        res.analytic = ana;
        res.numeric = num;
      }
    }
  }
  return res;
}

}  // namespace vgp
