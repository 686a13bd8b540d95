#include "latentguard/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace lg {

AdamW::AdamW(AdamWConfig cfg, std::vector<Tensor> params) : cfg_(cfg), params_(std::move(params)) {
  if (cfg_.lr <= 0.0) throw std::invalid_argument("AdamW lr must be positive");
  if (cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0 || cfg_.beta2 < 0.0 || cfg_.beta2 >= 1.0)
    throw std::invalid_argument("AdamW betas must lie in [0, 1)");
  if (cfg_.eps <= 0.0) throw std::invalid_argument("AdamW eps must be positive");
  if (cfg_.weight_decay < 0.0) throw std::invalid_argument("AdamW weight_decay must be non-negative");
  for (const auto& p : params_) {
    if (!p.defined() || !p.is_leaf() || !p.requires_grad())
      throw std::invalid_argument("AdamW parameters must be trainable leaf tensors");
    m_.emplace_back(p.values().size(), 0.0);
    v_.emplace_back(p.values().size(), 0.0);
  }
}

void AdamW::step() {
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& theta = params_[k].leaf_values();
    const std::vector<double>* g = params_[k].has_grad() ? &params_[k].grad() : nullptr;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = g ? (*g)[i] : 0.0;
      theta[i] -= cfg_.lr * cfg_.weight_decay * theta[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      theta[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace lg
