#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cadnet/error.hpp"
#include "cadnet/params.hpp"

namespace cadnet {

struct GradCheckReport {
  std::int64_t total = 0;
  std::int64_t passed = 0;
  double max_rel_error = 0.0;
  std::string worst_param;
  std::int64_t worst_index = -1;

  double pass_fraction() const { return total ? static_cast<double>(passed) / total : 0.0; }
};

/// Central finite differences against analytic gradients for every scalar in
/// the store. `forward_loss` must be a pure function of the parameter values:
/// it is evaluated twice up front and must return bit-identical results,
/// otherwise the check is meaningless and a usage error is raised.
///
/// A coordinate passes when |fd - analytic| <= rel_tol * max(|fd|, |analytic|)
/// or |fd - analytic| <= abs_tol.
template <typename T>
GradCheckReport gradcheck(ParameterStore<T>& store,
                          const std::function<T()>& forward_loss,
                          const std::function<void()>& accumulate_grads,
                          double step = 1e-5, double rel_tol = 1e-3, double abs_tol = 1e-8) {
  static_assert(sizeof(T) >= sizeof(double),
                "finite differences need double precision to resolve rel_tol");
  const T probe1 = forward_loss();
  const T probe2 = forward_loss();
  if (probe1 != probe2)
    throw usage_error("gradcheck: forward pass is not deterministic; freeze all noise first");

  store.zero_grads();
  accumulate_grads();
  std::vector<Tensor<T>> analytic;
  analytic.reserve(static_cast<std::size_t>(store.size()));
  for (auto& p : store) analytic.push_back(p.grad);
  store.zero_grads();

  GradCheckReport report;
  for (int slot = 0; slot < store.size(); ++slot) {
    auto& p = store.at(slot);
    for (std::int64_t i = 0; i < p.value.numel(); ++i) {
      const T saved = p.value[i];
      p.value[i] = saved + static_cast<T>(step);
      const double up = static_cast<double>(forward_loss());
      p.value[i] = saved - static_cast<T>(step);
      const double down = static_cast<double>(forward_loss());
      p.value[i] = saved;
      const double fd = (up - down) / (2.0 * step);
      const double an = static_cast<double>(analytic[static_cast<std::size_t>(slot)][i]);
      const double diff = std::abs(fd - an);
      const double scale = std::max(std::abs(fd), std::abs(an));
      const double rel = scale > 0 ? diff / scale : 0.0;
      ++report.total;
      if (diff <= rel_tol * scale || diff <= abs_tol) {
        ++report.passed;
      }
      if (rel > report.max_rel_error && diff > abs_tol) {
        report.max_rel_error = rel;
        report.worst_param = p.name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace cadnet
