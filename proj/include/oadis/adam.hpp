#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "oadis/errors.hpp"
#include "oadis/tensor.hpp"

namespace oadis {

template <typename S>
struct AdamConfig {
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S eps = S(1e-8);
  S weight_decay = S(5e-5);
};

// Adam with decoupled weight decay and bias correction. Parameters join in
// groups so the word-embedding table can run at its slower learning rate;
// the decay schedule scales all group rates uniformly.
template <typename S>
class AdamT {
 public:
  explicit AdamT(AdamConfig<S> cfg) : cfg_(cfg) {}

  void add_group(const std::vector<TensorT<S>>& params, S lr) {
    for (const auto& p : params) {
      if (!p.defined()) continue;
      Slot s;
      s.param = p;
      s.lr = lr;
      s.m.assign(p.numel(), S(0));
      s.v.assign(p.numel(), S(0));
      slots_.push_back(std::move(s));
    }
  }

  void set_lr_scale(S scale) { lr_scale_ = scale; }
  S lr_scale() const { return lr_scale_; }
  long step_count() const { return step_; }

  void step() {
    ++step_;
    const S bc1 = S(1) - std::pow(cfg_.beta1, static_cast<S>(step_));
    const S bc2 = S(1) - std::pow(cfg_.beta2, static_cast<S>(step_));
    for (Slot& s : slots_) {
      auto& vals = s.param.values();
      const auto& g = s.param.grad();
      if (g.size() != vals.size()) {
        throw ContractError("adam: gradient/parameter shape mismatch");
      }
      const S lr = s.lr * lr_scale_;
      for (std::size_t i = 0; i < vals.size(); ++i) {
        s.m[i] = cfg_.beta1 * s.m[i] + (S(1) - cfg_.beta1) * g[i];
        s.v[i] = cfg_.beta2 * s.v[i] + (S(1) - cfg_.beta2) * g[i] * g[i];
        const S mhat = s.m[i] / bc1;
        const S vhat = s.v[i] / bc2;
        vals[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                         cfg_.weight_decay * vals[i]);
      }
    }
  }

  void zero_grad() {
    for (Slot& s : slots_) s.param.zero_grad();
  }

 private:
  struct Slot {
    TensorT<S> param;
    S lr = 0;
    std::vector<S> m, v;
  };

  AdamConfig<S> cfg_;
  std::vector<Slot> slots_;
  S lr_scale_ = S(1);
  long step_ = 0;
};

using Adam = AdamT<float>;

}  // namespace oadis
