#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cadnet/error.hpp"
#include "cadnet/params.hpp"

namespace cadnet {

struct RmsPropConfig {
  double learning_rate = 0.05;
  double decay_rate = 0.9;  // second-moment smoothing
  double epsilon = 1e-8;
};

/// Learning-rate schedule: the base rate is cut by 10x at each listed epoch.
struct LrSchedule {
  double base_rate = 0.05;
  std::vector<int> decay_epochs{5, 18};

  double rate_at(int epoch) const {
    double rate = base_rate;
    for (int boundary : decay_epochs)
      if (epoch >= boundary) rate *= 0.1;
    return rate;
  }
};

/// One RMSProp update over every parameter in the store:
///   cache <- decay * cache + (1 - decay) * grad^2
///   param <- param - lr * grad / sqrt(cache + eps)
/// Gradients are zeroed afterwards.
template <typename T>
void rmsprop_step(ParameterStore<T>& store, const RmsPropConfig& cfg) {
  if (cfg.learning_rate <= 0) throw config_error("rmsprop: learning rate must be positive");
  if (cfg.decay_rate < 0 || cfg.decay_rate >= 1)
    throw config_error("rmsprop: decay rate must lie in [0, 1)");
  const T lr = static_cast<T>(cfg.learning_rate);
  const T rho = static_cast<T>(cfg.decay_rate);
  const T eps = static_cast<T>(cfg.epsilon);
  for (auto& p : store) {
    T* value = p.value.data();
    T* grad = p.grad.data();
    T* cache = p.cache.data();
    const std::int64_t n = p.value.numel();
    for (std::int64_t i = 0; i < n; ++i) {
      const T g = grad[i];
      cache[i] = rho * cache[i] + (T{1} - rho) * g * g;
      value[i] -= lr * g / std::sqrt(cache[i] + eps);
      grad[i] = T{0};
    }
    p.value.require_finite(("rmsprop update of " + p.name).c_str());
  }
}

}  // namespace cadnet
