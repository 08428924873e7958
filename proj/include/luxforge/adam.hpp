#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "luxforge/common.hpp"
#include "luxforge/tensor.hpp"

namespace luxforge {

// Plain Adam with bias correction. Parameters are aliased tensor handles;
// moments are owned here and exposed for checkpointing.
template <typename S>
class AdamT {
 public:
  struct Config {
    S lr = S(5e-4);
    S beta1 = S(0.9);
    S beta2 = S(0.999);
    S eps = S(1e-8);
  };

  AdamT() = default;
  AdamT(std::vector<BasicTensor<S>> params, Config cfg)
      : cfg_(cfg), params_(std::move(params)) {
    if (!(cfg_.lr >= S(0)))
      throw value_error(cat("Adam: bad learning rate ", static_cast<double>(cfg_.lr)));
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (auto& p : params_) {
      m_.push_back(BasicTensor<S>::zeros(p.shape()));
      v_.push_back(BasicTensor<S>::zeros(p.shape()));
    }
  }

  // One update. A parameter whose grad was never touched this step
  // contributes zero gradient. Non-finite gradients abort the step before
  // any state is mutated.
  void step() {
    for (size_t i = 0; i < params_.size(); ++i) {
      if (!params_[i].grad_allocated()) continue;
      const S* g = params_[i].grad();
      for (int64_t k = 0; k < params_[i].numel(); ++k)
        if (!std::isfinite(g[k]))
          throw training_error(
              cat("Adam: non-finite gradient in parameter ", i, " at element ",
                  k, "; step ", t_ + 1, " aborted"));
    }
    ++t_;
    double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      S* pv = p.data();
      S* mv = m_[i].data();
      S* vv = v_[i].data();
      bool has_grad = p.grad_allocated();
      const S* g = has_grad ? p.grad() : nullptr;
      for (int64_t k = 0; k < p.numel(); ++k) {
        S gk = has_grad ? g[k] : S(0);
        mv[k] = cfg_.beta1 * mv[k] + (S(1) - cfg_.beta1) * gk;
        vv[k] = cfg_.beta2 * vv[k] + (S(1) - cfg_.beta2) * gk * gk;
        S mhat = static_cast<S>(mv[k] / bc1);
        S vhat = static_cast<S>(vv[k] / bc2);
        pv[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  int64_t steps_taken() const { return t_; }
  void set_steps_taken(int64_t t) { t_ = t; }

  const Config& config() const { return cfg_; }
  std::vector<BasicTensor<S>>& params() { return params_; }
  std::vector<BasicTensor<S>>& moment1() { return m_; }
  std::vector<BasicTensor<S>>& moment2() { return v_; }

 private:
  Config cfg_;
  std::vector<BasicTensor<S>> params_;
  std::vector<BasicTensor<S>> m_, v_;
  int64_t t_ = 0;
};

using Adam = AdamT<float>;

}  // namespace luxforge
