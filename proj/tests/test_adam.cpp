#include <doctest.h>

#include <cmath>

#include "oadis/adam.hpp"
#include "oadis/tensor.hpp"

using namespace oadis;

TEST_CASE("adam: zero gradients with zero weight decay is a fixed point") {
  AdamConfig<float> cfg;
  cfg.weight_decay = 0.0f;
  AdamT<float> adam(cfg);
  auto p = Tensor::from_data({3}, {1.0f, -2.0f, 0.5f});
  p.set_requires_grad(true);
  adam.add_group({p}, 0.1f);
  const auto before = p.values();
  for (int i = 0; i < 5; ++i) {
    adam.step();
    adam.zero_grad();
  }
  for (std::size_t i = 0; i < 3; ++i) CHECK(p.at(i) == before[i]);
}

TEST_CASE("adam: single-step closed form on a scalar") {
  // p=1, g=1, lr=0.1, betas (0.9, 0.999), eps 1e-8, wd 0 -> p ~ 0.9
  AdamConfig<float> cfg;
  cfg.weight_decay = 0.0f;
  AdamT<float> adam(cfg);
  auto p = Tensor::scalar(1.0f);
  p.set_requires_grad(true);
  p.grad()[0] = 1.0f;
  adam.add_group({p}, 0.1f);
  adam.step();
  CHECK(p.at(0) == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(adam.step_count() == 1);
}

TEST_CASE("adam: step counter increments from zero") {
  AdamT<float> adam(AdamConfig<float>{});
  auto p = Tensor::scalar(0.0f);
  p.set_requires_grad(true);
  adam.add_group({p}, 0.01f);
  CHECK(adam.step_count() == 0);
  adam.step();
  CHECK(adam.step_count() == 1);
  adam.step();
  CHECK(adam.step_count() == 2);
}

TEST_CASE("adam: decoupled weight decay shrinks parameters without gradients") {
  AdamConfig<float> cfg;
  cfg.weight_decay = 0.1f;
  AdamT<float> adam(cfg);
  auto p = Tensor::scalar(2.0f);
  p.set_requires_grad(true);
  adam.add_group({p}, 0.5f);
  adam.step();
  // update = lr * wd * p = 0.5 * 0.1 * 2 = 0.1 (moment term is zero)
  CHECK(p.at(0) == doctest::Approx(1.9).epsilon(1e-6));
}

TEST_CASE("adam: groups run at their own learning rates and share the schedule") {
  AdamConfig<float> cfg;
  cfg.weight_decay = 0.0f;
  AdamT<float> adam(cfg);
  auto fast = Tensor::scalar(1.0f);
  auto slow = Tensor::scalar(1.0f);
  fast.set_requires_grad(true);
  slow.set_requires_grad(true);
  adam.add_group({fast}, 0.1f);
  adam.add_group({slow}, 0.001f);
  fast.grad()[0] = 1.0f;
  slow.grad()[0] = 1.0f;
  adam.set_lr_scale(0.5f);
  adam.step();
  CHECK(fast.at(0) == doctest::Approx(1.0 - 0.05).epsilon(1e-5));
  CHECK(slow.at(0) == doctest::Approx(1.0 - 0.0005).epsilon(1e-5));
}
