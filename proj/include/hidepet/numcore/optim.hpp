#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "hidepet/numcore/tensor.hpp"

namespace hidepet {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over a fixed list of caller-owned tensors. Tensors that have no
/// gradient buffer at step time are skipped.
template <typename Real>
class Adam {
 public:
  Adam(std::vector<Tensor<Real>*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto* p : params_) {
      m_.emplace_back(p->numel(), 0.0);
      v_.emplace_back(p->numel(), 0.0);
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor<Real>& p = *params_[k];
      if (!p.has_grad()) continue;
      auto g = p.grad();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.numel(); ++i) {
        const double gi = g[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double mh = m[i] / bc1;
        const double vh = v[i] / bc2;
        p[i] = static_cast<Real>(p[i] - lr * mh / (std::sqrt(vh) + cfg_.eps));
      }
    }
  }

  void step() { step(cfg_.lr); }
  long steps() const { return t_; }

 private:
  std::vector<Tensor<Real>*> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

/// Cosine decay from base to 0 over `total` steps.
inline double cosine_lr(double base, long step, long total) {
  if (total <= 1) return base;
  const double frac = static_cast<double>(step) / static_cast<double>(total);
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * std::min(frac, 1.0)));
}

}  // namespace hidepet
