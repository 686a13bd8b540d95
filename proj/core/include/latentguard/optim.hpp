#pragma once

#include <cstdint>
#include <vector>

#include "latentguard/tensor.hpp"

namespace lg {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

// Decoupled weight decay AdamW. The decay term uses the pre-step parameter, so
// with a zero gradient a parameter shrinks by exactly (1 - lr * weight_decay)
// per step, and with decay disabled a zero gradient is a fixed point.
class AdamW {
 public:
  AdamW(AdamWConfig cfg, std::vector<Tensor> params);

  // Applies one update using the gradients of the last backward() pass.
  void step();

  std::int64_t step_count() const { return step_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::int64_t step_ = 0;
};

}  // namespace lg
