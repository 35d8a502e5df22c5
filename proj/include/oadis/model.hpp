#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "oadis/errors.hpp"
#include "oadis/ops.hpp"
#include "oadis/rng.hpp"
#include "oadis/tensor.hpp"

namespace oadis {

// Spatial grid of the backbone feature map (7x7).
inline constexpr std::size_t kPositions = 49;

enum class OcnVariant { kLinear, kMlp, kObjectConditioned };

inline OcnVariant ocn_variant_from_string(const std::string& s) {
  if (s == "linear") return OcnVariant::kLinear;
  if (s == "mlp") return OcnVariant::kMlp;
  if (s == "object_conditioned") return OcnVariant::kObjectConditioned;
  throw ConfigError("unknown ocn variant: " + s);
}

inline std::string ocn_variant_to_string(OcnVariant v) {
  switch (v) {
    case OcnVariant::kLinear: return "linear";
    case OcnVariant::kMlp: return "mlp";
    case OcnVariant::kObjectConditioned: return "object_conditioned";
  }
  return "object_conditioned";
}

struct ModelDims {
  std::size_t n0 = 512;     // backbone feature dim
  std::size_t n = 1024;     // encoder output dim
  std::size_t d_emb = 300;  // shared embedding dim
  std::size_t d_w = 300;    // word embedding dim
};

// All learnable state of the network. The word table holds one row per token
// (attributes first, then objects) and trains at its own learning rate.
template <typename S>
struct ModelParamsT {
  ModelDims dims;
  OcnVariant variant = OcnVariant::kObjectConditioned;
  S ie_dropout = S(0.3);
  S head_dropout = S(0.05);
  S ocn_dropout = S(0);

  // Image encoder: 1x1 conv + BN + ReLU + dropout
  TensorT<S> ie_w;  // [n x n0]
  TensorT<S> ie_b;  // [n]
  BatchNormT<S> ie_bn;

  // Label embedder: avgpool + linear
  LinearT<S> le;  // [d_emb x n]

  // Object-conditioned network (variant decides which ones are allocated)
  LinearT<S> ocn_attr;    // [d_emb x d_w]
  LinearT<S> ocn_obj;     // [d_emb x d_w]
  LinearT<S> ocn_joint;   // [d_emb x 2 d_emb]
  LinearT<S> ocn_final;   // [d_emb x 2 d_emb]
  LinearT<S> ocn_single;  // [d_emb x 2 d_w]
  LinearT<S> ocn_mlp1;    // [d_emb x 2 d_w]
  LinearT<S> ocn_mlp2;    // [d_emb x d_emb]

  // Attribute / object similarity heads: two linears with ReLU + dropout
  LinearT<S> attr_proj1;  // [d_emb x n]
  LinearT<S> attr_proj2;  // [d_emb x d_emb]
  LinearT<S> obj_proj1;
  LinearT<S> obj_proj2;

  // Composer for hallucinated pairs
  LinearT<S> composer;  // [d_emb x 2n]

  TensorT<S> word_table;  // [V x d_w]

  std::vector<std::pair<std::string, TensorT<S>>> named_tensors() {
    std::vector<std::pair<std::string, TensorT<S>>> out;
    auto put = [&out](const std::string& name, const TensorT<S>& t) {
      if (t.defined()) out.emplace_back(name, t);
    };
    put("ie.w", ie_w);
    put("ie.b", ie_b);
    put("ie.bn.gamma", ie_bn.gamma);
    put("ie.bn.beta", ie_bn.beta);
    put("le.w", le.w);
    put("le.b", le.b);
    put("ocn.attr.w", ocn_attr.w);
    put("ocn.attr.b", ocn_attr.b);
    put("ocn.obj.w", ocn_obj.w);
    put("ocn.obj.b", ocn_obj.b);
    put("ocn.joint.w", ocn_joint.w);
    put("ocn.joint.b", ocn_joint.b);
    put("ocn.final.w", ocn_final.w);
    put("ocn.final.b", ocn_final.b);
    put("ocn.single.w", ocn_single.w);
    put("ocn.single.b", ocn_single.b);
    put("ocn.mlp1.w", ocn_mlp1.w);
    put("ocn.mlp1.b", ocn_mlp1.b);
    put("ocn.mlp2.w", ocn_mlp2.w);
    put("ocn.mlp2.b", ocn_mlp2.b);
    put("attr_proj1.w", attr_proj1.w);
    put("attr_proj1.b", attr_proj1.b);
    put("attr_proj2.w", attr_proj2.w);
    put("attr_proj2.b", attr_proj2.b);
    put("obj_proj1.w", obj_proj1.w);
    put("obj_proj1.b", obj_proj1.b);
    put("obj_proj2.w", obj_proj2.w);
    put("obj_proj2.b", obj_proj2.b);
    put("composer.w", composer.w);
    put("composer.b", composer.b);
    put("word_table", word_table);
    return out;
  }

  // BN running statistics; persisted but not optimized.
  std::vector<std::pair<std::string, std::vector<S>*>> named_buffers() {
    return {{"ie.bn.running_mean", &ie_bn.running_mean},
            {"ie.bn.running_var", &ie_bn.running_var}};
  }

  // Everything trainable except the word table.
  std::vector<TensorT<S>> main_group() {
    std::vector<TensorT<S>> out;
    for (auto& [name, t] : named_tensors())
      if (name != "word_table") out.push_back(t);
    return out;
  }

  void set_trainable(bool on) {
    for (auto& [name, t] : named_tensors()) t.set_requires_grad(on);
  }
};

namespace detail {

template <typename S>
TensorT<S> xavier(Shape shape, std::size_t fan_in, std::size_t fan_out,
                  Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  auto t = TensorT<S>::zeros(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i)
    t.at(i) = static_cast<S>(rng.uniform(-a, a));
  return t;
}

template <typename S>
LinearT<S> make_linear(std::size_t out_dim, std::size_t in_dim, Rng& rng) {
  LinearT<S> l;
  l.w = xavier<S>({out_dim, in_dim}, in_dim, out_dim, rng);
  l.b = TensorT<S>::zeros({out_dim});
  return l;
}

}  // namespace detail

// Seeded parameter initialization. The word table starts at zero here;
// callers overwrite it with the loaded embeddings.
template <typename S>
ModelParamsT<S> make_model_params(const ModelDims& dims, OcnVariant variant,
                                  std::size_t vocab_size, Rng& rng) {
  ModelParamsT<S> p;
  p.dims = dims;
  p.variant = variant;

  p.ie_w = detail::xavier<S>({dims.n, dims.n0}, dims.n0, dims.n, rng);
  p.ie_b = TensorT<S>::zeros({dims.n});
  p.ie_bn.gamma = TensorT<S>::full({dims.n}, S(1));
  p.ie_bn.beta = TensorT<S>::zeros({dims.n});
  p.ie_bn.running_mean.assign(dims.n, S(0));
  p.ie_bn.running_var.assign(dims.n, S(1));

  p.le = detail::make_linear<S>(dims.d_emb, dims.n, rng);

  switch (variant) {
    case OcnVariant::kObjectConditioned:
      p.ocn_attr = detail::make_linear<S>(dims.d_emb, dims.d_w, rng);
      p.ocn_obj = detail::make_linear<S>(dims.d_emb, dims.d_w, rng);
      p.ocn_joint = detail::make_linear<S>(dims.d_emb, 2 * dims.d_emb, rng);
      p.ocn_final = detail::make_linear<S>(dims.d_emb, 2 * dims.d_emb, rng);
      break;
    case OcnVariant::kLinear:
      p.ocn_single = detail::make_linear<S>(dims.d_emb, 2 * dims.d_w, rng);
      break;
    case OcnVariant::kMlp:
      p.ocn_mlp1 = detail::make_linear<S>(dims.d_emb, 2 * dims.d_w, rng);
      p.ocn_mlp2 = detail::make_linear<S>(dims.d_emb, dims.d_emb, rng);
      break;
  }

  p.attr_proj1 = detail::make_linear<S>(dims.d_emb, dims.n, rng);
  p.attr_proj2 = detail::make_linear<S>(dims.d_emb, dims.d_emb, rng);
  p.obj_proj1 = detail::make_linear<S>(dims.d_emb, dims.n, rng);
  p.obj_proj2 = detail::make_linear<S>(dims.d_emb, dims.d_emb, rng);

  p.composer = detail::make_linear<S>(dims.d_emb, 2 * dims.n, rng);

  p.word_table = TensorT<S>::zeros({vocab_size, dims.d_w});
  return p;
}

// ---------------------------------------------------------------------------
// Forward components
// ---------------------------------------------------------------------------

// f = dropout(relu(bn(conv1x1(raw)))), raw: [n0 x 49] -> f: [n x 49].
template <typename S>
TensorT<S> image_encode(TapeT<S>& tape, ModelParamsT<S>& params,
                        const TensorT<S>& raw, bool train, Rng& rng) {
  if (raw.rank() != 2 || raw.rows() != params.dims.n0 ||
      raw.cols() != kPositions) {
    throw DimensionError("image_encode: expected [" +
                         std::to_string(params.dims.n0) + "x" +
                         std::to_string(kPositions) + "] feature map, got " +
                         shape_str(raw.shape()));
  }
  auto conv = add_col_bias(tape, matmul(tape, params.ie_w, raw), params.ie_b);
  auto bn = batch_norm(tape, params.ie_bn, conv, train);
  auto act = relu(tape, bn);
  return dropout(tape, act, params.ie_dropout, train, rng);
}

// v_pair = linear(avgpool(f)).
template <typename S>
TensorT<S> label_embed(TapeT<S>& tape, const ModelParamsT<S>& params,
                       const TensorT<S>& f) {
  return linear(tape, params.le, avgpool_cols(tape, f));
}

// Composes attribute and object word embeddings into a pair anchor. The
// object-conditioned variant feeds the object branch back in beside the joint
// representation before the final projection.
template <typename S>
TensorT<S> ocn_compose(TapeT<S>& tape, const ModelParamsT<S>& params,
                       const TensorT<S>& emb_attr, const TensorT<S>& emb_obj,
                       bool train, Rng& rng) {
  switch (params.variant) {
    case OcnVariant::kObjectConditioned: {
      auto a = linear(tape, params.ocn_attr,
                      dropout(tape, emb_attr, params.ocn_dropout, train, rng));
      auto o = linear(tape, params.ocn_obj,
                      dropout(tape, emb_obj, params.ocn_dropout, train, rng));
      auto joint = relu(
          tape, linear(tape, params.ocn_joint,
                       concat(tape, std::vector<TensorT<S>>{a, o})));
      return linear(tape, params.ocn_final,
                    concat(tape, std::vector<TensorT<S>>{joint, o}));
    }
    case OcnVariant::kLinear: {
      auto x = concat(tape, std::vector<TensorT<S>>{emb_attr, emb_obj});
      x = dropout(tape, x, params.ocn_dropout, train, rng);
      return linear(tape, params.ocn_single, x);
    }
    case OcnVariant::kMlp: {
      auto x = concat(tape, std::vector<TensorT<S>>{emb_attr, emb_obj});
      x = dropout(tape, x, params.ocn_dropout, train, rng);
      auto h = relu(tape, linear(tape, params.ocn_mlp1, x));
      return linear(tape, params.ocn_mlp2, h);
    }
  }
  throw ConfigError("ocn_compose: unknown variant");
}

// delta * cos(v, w).
template <typename S>
TensorT<S> cos_score(TapeT<S>& tape, const TensorT<S>& v, const TensorT<S>& w,
                     S delta) {
  return scale(tape, dot(tape, l2_normalize(tape, v), l2_normalize(tape, w)),
               delta);
}

// Logits of v against a [d x P] anchor matrix: delta * cos per column.
template <typename S>
TensorT<S> cosine_logits(TapeT<S>& tape, const TensorT<S>& v,
                         const TensorT<S>& anchor_cols, S delta) {
  if (anchor_cols.rank() != 2 || anchor_cols.rows() != v.numel()) {
    throw DimensionError("cosine_logits: vector " + shape_str(v.shape()) +
                         " vs anchors " + shape_str(anchor_cols.shape()));
  }
  auto vhat = l2_normalize(tape, v);
  auto ahat = l2_normalize(tape, anchor_cols);
  return scale(tape, matvec(tape, transpose(tape, ahat), vhat), delta);
}

// Softmax over delta-scaled cosine scores against an anchor list.
template <typename S>
TensorT<S> classify(TapeT<S>& tape, const TensorT<S>& v,
                    const std::vector<TensorT<S>>& anchors, S delta) {
  if (anchors.empty()) throw ContractError("classify: empty anchor set");
  auto logits = cosine_logits(tape, v, stack_cols(tape, anchors), delta);
  return scaled_softmax(tape, logits, Axis::kRow, S(1));
}

// ---------------------------------------------------------------------------
// Affinity attention
// ---------------------------------------------------------------------------

// Cross-image attention between two [n x P] feature maps. S holds per-position
// cosines; A row-softmaxes it, A' column-softmaxes it, D row-softmaxes the
// negated matrix. m / m_anchor / m_diff are the column, row and column sums
// that weight mate, anchor and mate positions respectively.
template <typename S>
struct AffinityMapsT {
  TensorT<S> sim;       // [P x P]
  TensorT<S> a_row;     // row-stochastic
  TensorT<S> a_col;     // column-stochastic
  TensorT<S> d_row;     // row-stochastic, dissimilarity
  TensorT<S> m;         // [P], over mate positions
  TensorT<S> m_anchor;  // [P], over anchor positions
  TensorT<S> m_diff;    // [P], over mate positions
};

template <typename S>
AffinityMapsT<S> affinity(TapeT<S>& tape, const TensorT<S>& f,
                          const TensorT<S>& g, S lambda, S gamma) {
  detail::check_same_shape("affinity", f, g);
  if (f.rank() != 2) {
    throw DimensionError("affinity: expected feature matrices, got " +
                         shape_str(f.shape()));
  }
  AffinityMapsT<S> maps;
  auto fhat = l2_normalize(tape, f);
  auto ghat = l2_normalize(tape, g);
  maps.sim = matmul(tape, transpose(tape, fhat), ghat);
  maps.a_row = scaled_softmax(tape, maps.sim, Axis::kRow, lambda);
  maps.a_col = scaled_softmax(tape, maps.sim, Axis::kCol, lambda);
  maps.d_row = scaled_softmax(tape, negate(tape, maps.sim), Axis::kRow, gamma);
  maps.m = col_sum(tape, maps.a_row);
  maps.m_anchor = row_sum(tape, maps.a_col);
  maps.m_diff = col_sum(tape, maps.d_row);
  return maps;
}

// ---------------------------------------------------------------------------
// Disentanglement
// ---------------------------------------------------------------------------

// The four disentangled vectors. v_attr / v_obj describe the anchor's own
// attribute and object; the hal_* pair carries the mates' residual concepts
// (attr of the object-mate, object of the attribute-mate).
template <typename S>
struct DisentangledT {
  TensorT<S> v_attr;
  TensorT<S> v_obj;
  TensorT<S> hal_attr;  // v'_attr
  TensorT<S> hal_obj;   // v'_obj
  AffinityMapsT<S> aan;
  AffinityMapsT<S> oan;
};

template <typename S>
DisentangledT<S> disentangle(TapeT<S>& tape, const TensorT<S>& f,
                             const TensorT<S>& f_attr, const TensorT<S>& f_obj,
                             S lambda, S gamma) {
  DisentangledT<S> d;
  d.aan = affinity(tape, f, f_attr, lambda, gamma);
  d.oan = affinity(tape, f, f_obj, lambda, gamma);
  d.v_attr = add(tape, matvec(tape, f_attr, d.aan.m),
                 matvec(tape, f, d.aan.m_anchor));
  d.hal_obj = matvec(tape, f_attr, d.aan.m_diff);
  d.v_obj = add(tape, matvec(tape, f_obj, d.oan.m),
                matvec(tape, f, d.oan.m_anchor));
  d.hal_attr = matvec(tape, f_obj, d.oan.m_diff);
  return d;
}

// Similarity-module projection into the attribute space.
template <typename S>
TensorT<S> project_attr(TapeT<S>& tape, const ModelParamsT<S>& params,
                        const TensorT<S>& v, bool train, Rng& rng) {
  auto h = relu(tape, linear(tape, params.attr_proj1, v));
  h = dropout(tape, h, params.head_dropout, train, rng);
  return linear(tape, params.attr_proj2, h);
}

template <typename S>
TensorT<S> project_obj(TapeT<S>& tape, const ModelParamsT<S>& params,
                       const TensorT<S>& v, bool train, Rng& rng) {
  auto h = relu(tape, linear(tape, params.obj_proj1, v));
  h = dropout(tape, h, params.head_dropout, train, rng);
  return linear(tape, params.obj_proj2, h);
}

// Pair embedding from two disentangled vectors; concat order is (attr, obj).
template <typename S>
TensorT<S> compose_pair(TapeT<S>& tape, const ModelParamsT<S>& params,
                        const TensorT<S>& v_attr, const TensorT<S>& v_obj) {
  return linear(tape, params.composer,
                concat(tape, std::vector<TensorT<S>>{v_attr, v_obj}));
}

// Inference over a candidate pair list: main branch only.
// pair_rows holds (attr_row, obj_row) indices into the word table.
template <typename S>
std::vector<S> forward_infer(
    ModelParamsT<S>& params, const TensorT<S>& raw,
    const std::vector<std::pair<std::size_t, std::size_t>>& pair_rows,
    S delta) {
  if (pair_rows.empty()) throw ContractError("forward_infer: empty pair list");
  TapeT<S> tape(false);
  Rng rng(0);
  auto f = image_encode(tape, params, raw, /*train=*/false, rng);
  auto v = l2_normalize(tape, label_embed(tape, params, f));
  std::vector<S> scores;
  scores.reserve(pair_rows.size());
  for (const auto& [ar, orow] : pair_rows) {
    auto w = ocn_compose(tape, params, lookup_row(tape, params.word_table, ar),
                         lookup_row(tape, params.word_table, orow),
                         /*train=*/false, rng);
    auto s = scale(tape, dot(tape, v, l2_normalize(tape, w)), delta);
    scores.push_back(s.at(0));
  }
  return scores;
}

using ModelParams = ModelParamsT<float>;
using AffinityMaps = AffinityMapsT<float>;
using Disentangled = DisentangledT<float>;

}  // namespace oadis
