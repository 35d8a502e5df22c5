#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "oadis/errors.hpp"
#include "oadis/model.hpp"
#include "oadis/ops.hpp"
#include "oadis/tensor.hpp"

namespace oadis {

template <typename S>
struct LossWeightsT {
  S alpha1 = S(0.5);   // attribute loss
  S alpha2 = S(0.5);   // object loss
  S alpha3 = S(0.05);  // seen composition loss
  S alpha4 = S(0.05);  // unseen composition loss
};

using LossWeights = LossWeightsT<float>;

// Cross entropy over delta-scaled cosine scores against an anchor matrix.
// Shared by all five objectives.
template <typename S>
TensorT<S> cosine_cross_entropy(TapeT<S>& tape, const TensorT<S>& v,
                                const TensorT<S>& anchor_cols,
                                std::size_t target, S delta) {
  if (anchor_cols.rank() != 2 || target >= anchor_cols.cols()) {
    throw ContractError("cosine_cross_entropy: target " +
                        std::to_string(target) + " not in anchor set " +
                        shape_str(anchor_cols.shape()));
  }
  auto logits = cosine_logits(tape, v, anchor_cols, delta);
  return cross_entropy_index(tape, logits, target);
}

// Main-branch pair classification over the seen-pair anchors.
template <typename S>
TensorT<S> l_cls(TapeT<S>& tape, const TensorT<S>& v_pair,
                 const TensorT<S>& seen_anchor_cols, std::size_t target_pair,
                 S delta) {
  return cosine_cross_entropy(tape, v_pair, seen_anchor_cols, target_pair,
                              delta);
}

// Attribute-space classification of the projected disentangled feature
// against the raw word-embedding anchors.
template <typename S>
TensorT<S> l_attr(TapeT<S>& tape, const TensorT<S>& v_attr_projected,
                  const TensorT<S>& attr_anchor_cols, std::size_t target_attr,
                  S delta) {
  return cosine_cross_entropy(tape, v_attr_projected, attr_anchor_cols,
                              target_attr, delta);
}

template <typename S>
TensorT<S> l_obj(TapeT<S>& tape, const TensorT<S>& v_obj_projected,
                 const TensorT<S>& obj_anchor_cols, std::size_t target_obj,
                 S delta) {
  return cosine_cross_entropy(tape, v_obj_projected, obj_anchor_cols,
                              target_obj, delta);
}

// Composition of the anchor's own disentangled features, classified against
// the seen-pair anchors.
template <typename S>
TensorT<S> l_seen(TapeT<S>& tape, const ModelParamsT<S>& params,
                  const TensorT<S>& v_attr, const TensorT<S>& v_obj,
                  const TensorT<S>& seen_anchor_cols, std::size_t target_pair,
                  S delta) {
  auto composed = compose_pair(tape, params, v_attr, v_obj);
  return cosine_cross_entropy(tape, composed, seen_anchor_cols, target_pair,
                              delta);
}

// Hallucinated composition against an anchor set that already contains the
// hallucinated pair (callers append it when it is not a seen pair).
template <typename S>
TensorT<S> l_unseen(TapeT<S>& tape, const ModelParamsT<S>& params,
                    const TensorT<S>& hal_attr, const TensorT<S>& hal_obj,
                    const TensorT<S>& anchor_cols, std::size_t target_pair,
                    S delta) {
  auto composed = compose_pair(tape, params, hal_attr, hal_obj);
  return cosine_cross_entropy(tape, composed, anchor_cols, target_pair, delta);
}

template <typename S>
struct LossTermsT {
  TensorT<S> cls, attr, obj, seen, unseen;
};

using LossTerms = LossTermsT<float>;

// L = L_cls + a1 L_attr + a2 L_obj + a3 L_seen + a4 L_unseen.
template <typename S>
TensorT<S> total_loss(TapeT<S>& tape, const LossTermsT<S>& terms,
                      const LossWeightsT<S>& w) {
  for (const TensorT<S>* t :
       {&terms.cls, &terms.attr, &terms.obj, &terms.seen, &terms.unseen}) {
    if (!t->defined() || !std::isfinite(static_cast<double>(t->at(0)))) {
      throw NumericError("total_loss: non-finite component loss");
    }
  }
  auto out = add(tape, terms.cls, scale(tape, terms.attr, w.alpha1));
  out = add(tape, out, scale(tape, terms.obj, w.alpha2));
  out = add(tape, out, scale(tape, terms.seen, w.alpha3));
  return add(tape, out, scale(tape, terms.unseen, w.alpha4));
}

}  // namespace oadis
