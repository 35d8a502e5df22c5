#include <doctest.h>

#include <cmath>

#include "oadis/data.hpp"
#include "oadis/losses.hpp"
#include "oadis/model.hpp"
#include "testutil.hpp"

using namespace oadis;
using testutil::DTensor;
using testutil::DTape;

TEST_CASE("l_cls: single seen pair costs exactly zero") {
  Tape tape(false);
  auto v = Tensor::from_data({3}, {1, 2, 3});
  auto anchors = stack_cols(tape, {Tensor::from_data({3}, {0.5f, -1, 2})});
  auto loss = l_cls(tape, v, anchors, 0, 0.05f);
  CHECK(loss.at(0) == 0.0f);
}

TEST_CASE("l_cls: closed-form two-anchor case") {
  Tape tape(false);
  auto v = Tensor::from_data({2}, {1, 0});
  auto anchors = stack_cols(
      tape, {Tensor::from_data({2}, {1, 0}), Tensor::from_data({2}, {0, 1})});
  auto loss = l_cls(tape, v, anchors, 0, 0.05f);
  const double want = -std::log(std::exp(0.05) / (std::exp(0.05) + 1.0));
  CHECK(loss.at(0) == doctest::Approx(want).epsilon(1e-6));
  CHECK(loss.at(0) == doctest::Approx(0.6685).epsilon(1e-3));
}

TEST_CASE("losses are non-negative on random inputs") {
  Rng rng(41);
  Tape tape(false);
  for (int trial = 0; trial < 30; ++trial) {
    auto v = testutil::rand_ftensor({4}, rng);
    std::vector<Tensor> anchors;
    const std::size_t n = 1 + rng.uniform_index(5);
    for (std::size_t i = 0; i < n; ++i)
      anchors.push_back(testutil::rand_ftensor({4}, rng));
    bool degenerate = false;
    for (const auto& a : anchors) {
      double sq = 0;
      for (std::size_t i = 0; i < 4; ++i) sq += double(a.at(i)) * a.at(i);
      degenerate = degenerate || sq < 1e-8;
    }
    if (degenerate) continue;
    auto loss = l_cls(tape, v, stack_cols(tape, anchors),
                      rng.uniform_index(n), 0.05f);
    CHECK(loss.at(0) >= 0.0f);
  }
}

TEST_CASE("l_cls: target outside the anchor set is a contract error") {
  Tape tape(false);
  auto v = Tensor::from_data({2}, {1, 0});
  auto anchors = stack_cols(tape, {Tensor::from_data({2}, {1, 1})});
  CHECK_THROWS_AS(l_cls(tape, v, anchors, 1, 0.05f), ContractError);
}

TEST_CASE("l_attr: single-attribute vocabulary costs zero") {
  Tape tape(false);
  auto v = Tensor::from_data({3}, {1, 0, 1});
  auto anchors = stack_cols(tape, {Tensor::from_data({3}, {0, 1, 0})});
  CHECK(l_attr(tape, v, anchors, 0, 0.05f).at(0) == 0.0f);
}

TEST_CASE("l_seen / l_unseen: one-anchor sets cost zero") {
  Rng rng(43);
  ModelDims dims{5, 6, 7, 7};
  auto params = make_model_params<float>(dims, OcnVariant::kLinear, 4, rng);
  Tape tape(false);
  auto va = testutil::rand_ftensor({6}, rng);
  auto vo = testutil::rand_ftensor({6}, rng);
  auto anchor = stack_cols(tape, {testutil::rand_ftensor({7}, rng)});
  CHECK(l_seen(tape, params, va, vo, anchor, 0, 0.05f).at(0) == 0.0f);
  CHECK(l_unseen(tape, params, va, vo, anchor, 0, 0.05f).at(0) == 0.0f);
}

TEST_CASE("total_loss: zero weights reduce to the main loss, and it is linear") {
  Tape tape(false);
  LossTerms terms;
  terms.cls = Tensor::scalar(1.25f);
  terms.attr = Tensor::scalar(0.5f);
  terms.obj = Tensor::scalar(0.75f);
  terms.seen = Tensor::scalar(2.0f);
  terms.unseen = Tensor::scalar(4.0f);

  LossWeights zero{0, 0, 0, 0};
  CHECK(total_loss(tape, terms, zero).at(0) == 1.25f);

  LossWeights defaults;
  CHECK(defaults.alpha1 == 0.5f);
  CHECK(defaults.alpha2 == 0.5f);
  CHECK(defaults.alpha3 == doctest::Approx(0.05));
  CHECK(defaults.alpha4 == doctest::Approx(0.05));
  const float expect = 1.25f + 0.5f * 0.5f + 0.5f * 0.75f + 0.05f * 2.0f +
                       0.05f * 4.0f;
  CHECK(total_loss(tape, terms, defaults).at(0) == doctest::Approx(expect));

  LossTerms doubled;
  doubled.cls = Tensor::scalar(2.5f);
  doubled.attr = Tensor::scalar(1.0f);
  doubled.obj = Tensor::scalar(1.5f);
  doubled.seen = Tensor::scalar(4.0f);
  doubled.unseen = Tensor::scalar(8.0f);
  CHECK(total_loss(tape, doubled, defaults).at(0) ==
        doctest::Approx(2.0f * expect));

  LossTerms bad = terms;
  bad.seen = Tensor::scalar(std::numeric_limits<float>::quiet_NaN());
  CHECK_THROWS_AS(total_loss(tape, bad, defaults), NumericError);
}

TEST_CASE("total_loss gradient is the weighted sum of component gradients") {
  DTape tape(true);
  auto x = DTensor::from_data({3}, {0.4, -0.2, 0.9});
  x.set_requires_grad(true);
  // components built from the same input with different reductions
  LossTermsT<double> terms;
  terms.cls = dot(tape, x, DTensor::from_data({3}, {1, 1, 1}));
  terms.attr = dot(tape, x, DTensor::from_data({3}, {2, 0, 0}));
  terms.obj = dot(tape, x, DTensor::from_data({3}, {0, 3, 0}));
  terms.seen = dot(tape, x, DTensor::from_data({3}, {0, 0, 4}));
  terms.unseen = dot(tape, x, x);
  LossWeightsT<double> w{0.5, 0.25, 0.1, 0.05};
  auto total = total_loss(tape, terms, w);
  tape.backward(total);
  CHECK(x.grad()[0] == doctest::Approx(1.0 + 0.5 * 2.0 + 0.05 * 2 * 0.4));
  CHECK(x.grad()[1] == doctest::Approx(1.0 + 0.25 * 3.0 + 0.05 * 2 * -0.2));
  CHECK(x.grad()[2] == doctest::Approx(1.0 + 0.1 * 4.0 + 0.05 * 2 * 0.9));
}

TEST_CASE("fd: attribute loss gradients reach the affinity inputs") {
  Rng rng(47);
  ModelDims dims{4, 5, 6, 6};
  Rng init(7);
  auto dproto = make_model_params<double>(dims, OcnVariant::kLinear, 5, init);

  for (int trial = 0; trial < 3; ++trial) {
    auto r = testutil::fd_check(
        {{5, 8}, {5, 8}, {5, 8}},
        [&](DTape& t, std::vector<DTensor>& in) {
          auto shift = DTensor::full({5, 8}, 1.2);
          auto f = add(t, in[0], shift);
          auto fa = add(t, in[1], shift);
          auto fo = add(t, in[2], shift);
          auto d = disentangle(t, f, fa, fo, 5.0, 5.0);
          Rng drop_rng(0);
          auto projected = project_attr(t, dproto, d.v_attr, false, drop_rng);
          std::vector<DTensor> anchors;
          Rng arng(55);
          for (int i = 0; i < 4; ++i)
            anchors.push_back(testutil::rand_tensor({6}, arng));
          return l_attr(t, projected, stack_cols(t, anchors), std::size_t(1),
                        2.0);
        },
        rng, /*max_coords_per_input=*/20);
    CHECK(r.max_rel_err < 1e-4);
  }
}

TEST_CASE("hallucinated pair of a forced triplet follows the mates") {
  // corpus: peeled apple (anchor), peeled orange, sliced apple
  Manifest m;
  m.attributes = {"peeled", "sliced"};
  m.objects = {"apple", "orange"};
  m.samples = {{"s0", "peeled", "apple"},
               {"s1", "peeled", "orange"},
               {"s2", "sliced", "apple"}};
  TripletIndex index(m, {"s0", "s1", "s2"});
  Rng rng(3);
  auto t = index.sample(0, rng);
  CHECK(m.samples[t.attr_mate].id == "s1");  // forced: only valid attr mate
  CHECK(m.samples[t.obj_mate].id == "s2");
  const PairLabel hal{m.samples[t.obj_mate].attr, m.samples[t.attr_mate].obj};
  CHECK(hal.first == "sliced");
  CHECK(hal.second == "orange");
}
