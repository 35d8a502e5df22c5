#include "oadis/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "oadis/errors.hpp"
#include "oadis/ops.hpp"

namespace oadis {

namespace {

const std::vector<PairLabel>& unseen_pairs_of(const SplitSpec& split,
                                              const std::string& which) {
  if (which == "val") return split.val_unseen_pairs;
  if (which == "test") return split.test_unseen_pairs;
  throw ConfigError("evaluate: split must be val or test, got " + which);
}

const std::vector<std::string>& ids_of(const SplitSpec& split,
                                       const std::string& which) {
  return which == "val" ? split.val_ids : split.test_ids;
}

double cosine(std::span<const float> a, std::span<const float> b) {
  double num = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  const double denom = std::sqrt(na) * std::sqrt(nb);
  if (!(denom > 1e-12)) {
    throw DegenerateVectorError("cosine: near-zero vector");
  }
  return num / denom;
}

}  // namespace

void ScoreMatrix::validate() const {
  if (rows() == 0 || cols() == 0) {
    throw ContractError("score matrix: empty rows or columns");
  }
  for (std::size_t r = 0; r < rows(); ++r) {
    if (row_true[r] >= cols()) {
      throw ContractError("score matrix: true pair of row " +
                          std::to_string(r) + " is not a column");
    }
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw NumericError("score matrix: non-finite score");
  }
}

ScoreMatrix build_score_matrix(ModelParams& params, const Manifest& manifest,
                               const FeatureStore& features,
                               const SplitSpec& split, const std::string& which,
                               double delta) {
  const Vocab vocab = Vocab::from_manifest(manifest);
  ScoreMatrix m;
  std::map<PairLabel, std::size_t> col_of;
  for (const auto& p : split.train_pairs) {
    if (col_of.emplace(p, m.pairs.size()).second) {
      m.pairs.push_back(p);
      m.col_unseen.push_back(0);
    }
  }
  for (const auto& p : unseen_pairs_of(split, which)) {
    if (col_of.emplace(p, m.pairs.size()).second) {
      m.pairs.push_back(p);
      m.col_unseen.push_back(1);
    }
  }
  if (m.pairs.empty()) throw ContractError("score matrix: no candidate pairs");

  // anchors once; per-sample forward is one encode + dot products
  Tape tape(false);
  Rng rng(0);
  std::vector<std::vector<float>> anchors;
  anchors.reserve(m.pairs.size());
  for (const auto& [a, o] : m.pairs) {
    auto w = ocn_compose(tape, params,
                         lookup_row(tape, params.word_table, vocab.attr_row(a)),
                         lookup_row(tape, params.word_table, vocab.obj_row(o)),
                         /*train=*/false, rng);
    auto what = l2_normalize(tape, w);
    anchors.push_back(what.values());
  }

  std::map<std::string, const Sample*> by_id;
  for (const auto& s : manifest.samples) by_id[s.id] = &s;

  for (const auto& id : ids_of(split, which)) {
    auto it = by_id.find(id);
    if (it == by_id.end())
      throw DataError("evaluate: split id not in manifest: " + id);
    const Sample& s = *it->second;
    const PairLabel truth{s.attr, s.obj};
    auto cit = col_of.find(truth);
    if (cit == col_of.end()) {
      throw DataError("evaluate: true pair of sample " + id +
                      " is not a candidate column");
    }
    auto f = image_encode(tape, params, features.tensor(id), /*train=*/false, rng);
    auto v = l2_normalize(tape, label_embed(tape, params, f));
    m.row_ids.push_back(id);
    m.row_true.push_back(cit->second);
    for (const auto& anchor : anchors) {
      double dotp = 0;
      for (std::size_t i = 0; i < anchor.size(); ++i)
        dotp += static_cast<double>(v.at(i)) * anchor[i];
      m.scores.push_back(delta * dotp);
    }
  }
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Bias sweep
// ---------------------------------------------------------------------------

bool topk_hit(const ScoreMatrix& m, std::size_t row, double bias,
              std::size_t k) {
  const std::size_t t = m.row_true[row];
  const double st = m.at(row, t) + (m.col_unseen[t] ? bias : 0.0);
  std::size_t better = 0, tied_before = 0;
  for (std::size_t c = 0; c < m.cols(); ++c) {
    if (c == t) continue;
    const double sc = m.at(row, c) + (m.col_unseen[c] ? bias : 0.0);
    if (sc > st) {
      ++better;
    } else if (sc == st && c < t) {
      ++tied_before;
    }
  }
  return better + tied_before < k;
}

namespace {

SweepPoint eval_at_bias(const ScoreMatrix& m, double bias, std::size_t k) {
  std::size_t seen_total = 0, seen_hit = 0, unseen_total = 0, unseen_hit = 0;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const bool hit = topk_hit(m, r, bias, k);
    if (m.row_unseen(r)) {
      ++unseen_total;
      unseen_hit += hit;
    } else {
      ++seen_total;
      seen_hit += hit;
    }
  }
  SweepPoint p;
  p.bias = bias;
  p.seen_acc = static_cast<double>(seen_hit) / static_cast<double>(seen_total);
  p.unseen_acc =
      static_cast<double>(unseen_hit) / static_cast<double>(unseen_total);
  return p;
}

}  // namespace

BiasSweepResult bias_sweep(const ScoreMatrix& m, std::size_t k) {
  m.validate();
  if (k == 0 || k > m.cols()) {
    throw ContractError("bias_sweep: k must be in [1, " +
                        std::to_string(m.cols()) + "]");
  }
  bool any_seen = false, any_unseen = false;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    (m.row_unseen(r) ? any_unseen : any_seen) = true;
  }
  if (!any_seen || !any_unseen) {
    throw ContractError(
        "bias_sweep: need both seen-true and unseen-true rows");
  }

  // dominating sentinels stand in for the +/- infinity endpoints while
  // preserving the relative order inside each column group
  double lo = m.scores[0], hi = m.scores[0];
  for (double s : m.scores) {
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  const double spread = (hi - lo) + 1.0;
  // candidates sit just past each tie so the true unseen pair overtakes the
  // best seen column there instead of losing the index tie-break
  const double margin = spread * 1e-9;

  std::set<double> candidates;
  candidates.insert(-spread);
  candidates.insert(spread);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    if (!m.row_unseen(r)) continue;
    double max_seen = -spread * 2;
    bool has_seen_col = false;
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (!m.col_unseen[c]) {
        max_seen = std::max(max_seen, m.at(r, c));
        has_seen_col = true;
      }
    }
    if (has_seen_col) {
      candidates.insert(max_seen - m.at(r, m.row_true[r]) + margin);
    }
  }

  BiasSweepResult result;
  for (double b : candidates) result.points.push_back(eval_at_bias(m, b, k));

  for (std::size_t i = 1; i < result.points.size(); ++i) {
    if (result.points[i].seen_acc > result.points[i - 1].seen_acc ||
        result.points[i].unseen_acc < result.points[i - 1].unseen_acc) {
      throw NumericError("bias_sweep: monotonicity violated");
    }
  }

  result.auc = auc_of_curve(result.points);
  std::tie(result.best_hm, result.best_hm_bias) =
      best_harmonic_mean(result.points);
  return result;
}

double auc_of_curve(const std::vector<SweepPoint>& points) {
  if (points.empty()) throw ContractError("auc: empty curve");
  // points ordered by bias: seen non-increasing, unseen non-decreasing.
  // Close with (max seen, 0) at the front (zero width) and (0, max unseen)
  // at the back (rectangle down to the y axis).
  double area = 0;
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    area += (points[i].seen_acc - points[i + 1].seen_acc) *
            (points[i].unseen_acc + points[i + 1].unseen_acc) / 2.0;
  }
  area += points.back().seen_acc * points.back().unseen_acc;
  return area;
}

std::pair<double, double> best_harmonic_mean(
    const std::vector<SweepPoint>& points) {
  if (points.empty()) throw ContractError("best_harmonic_mean: empty curve");
  double best = 0, best_bias = points.front().bias;
  for (const auto& p : points) {
    const double s = p.seen_acc, u = p.unseen_acc;
    const double hm = (s + u) > 0 ? 2.0 * s * u / (s + u) : 0.0;
    if (hm > best) {
      best = hm;
      best_bias = p.bias;
    }
  }
  return {best, best_bias};
}

std::pair<double, double> attr_obj_accuracy(const ScoreMatrix& m, double bias) {
  std::size_t total = 0, attr_hit = 0, obj_hit = 0;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    if (!m.row_unseen(r)) continue;
    ++total;
    std::size_t best = 0;
    double best_score = m.at(r, 0) + (m.col_unseen[0] ? bias : 0.0);
    for (std::size_t c = 1; c < m.cols(); ++c) {
      const double sc = m.at(r, c) + (m.col_unseen[c] ? bias : 0.0);
      if (sc > best_score) {
        best_score = sc;
        best = c;
      }
    }
    const PairLabel& truth = m.pairs[m.row_true[r]];
    attr_hit += m.pairs[best].first == truth.first;
    obj_hit += m.pairs[best].second == truth.second;
  }
  if (total == 0) {
    throw ContractError("attr_obj_accuracy: no unseen-true rows");
  }
  return {static_cast<double>(attr_hit) / static_cast<double>(total),
          static_cast<double>(obj_hit) / static_cast<double>(total)};
}

MetricsReport evaluate(ModelParams& params, const Manifest& manifest,
                       const FeatureStore& features, const SplitSpec& split,
                       const std::string& which, double delta,
                       const std::vector<std::size_t>& ks) {
  const ScoreMatrix m =
      build_score_matrix(params, manifest, features, split, which, delta);
  MetricsReport report;
  report.split = which;
  for (std::size_t k : ks) {
    if (k == 0 || k > m.cols()) {
      throw ConfigError("evaluate: k=" + std::to_string(k) +
                        " outside [1, " + std::to_string(m.cols()) + "]");
    }
    const BiasSweepResult sweep = bias_sweep(m, k);
    KMetrics km;
    km.k = k;
    km.auc = sweep.auc;
    km.best_hm = sweep.best_hm;
    km.best_hm_bias = sweep.best_hm_bias;
    km.best_seen = sweep.points.front().seen_acc;
    km.best_unseen = sweep.points.back().unseen_acc;
    std::tie(km.attr_acc, km.obj_acc) =
        attr_obj_accuracy(m, sweep.best_hm_bias);
    report.per_k.push_back(km);
  }
  return report;
}

std::string metrics_to_json(const MetricsReport& report) {
  char buf[64];
  auto pct = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.4f", v * 100.0);
    return std::string(buf);
  };
  std::string out = "{\n  \"split\": \"" + report.split + "\",\n  \"per_k\": [\n";
  for (std::size_t i = 0; i < report.per_k.size(); ++i) {
    const KMetrics& k = report.per_k[i];
    out += "    {\"k\": " + std::to_string(k.k);
    out += ", \"auc_pct\": " + pct(k.auc);
    out += ", \"best_hm_pct\": " + pct(k.best_hm);
    out += ", \"seen_pct\": " + pct(k.best_seen);
    out += ", \"unseen_pct\": " + pct(k.best_unseen);
    out += ", \"attr_pct\": " + pct(k.attr_acc);
    out += ", \"obj_pct\": " + pct(k.obj_acc);
    std::snprintf(buf, sizeof(buf), "%.9g", k.best_hm_bias);
    out += std::string(", \"best_hm_bias\": ") + buf + "}";
    out += (i + 1 < report.per_k.size()) ? ",\n" : "\n";
  }
  out += "  ]\n}\n";
  return out;
}

std::string curve_to_csv(const BiasSweepResult& sweep) {
  std::string out = "bias,seen_acc,unseen_acc\n";
  char buf[96];
  for (const auto& p : sweep.points) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.6f,%.6f\n", p.bias, p.seen_acc,
                  p.unseen_acc);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Disentanglement diagnostics
// ---------------------------------------------------------------------------

namespace {

struct TripletFeatures {
  Tensor f, f_attr, f_obj;
};

TripletFeatures encode_triplet(ModelParams& params, const Manifest& manifest,
                               const FeatureStore& features,
                               const TripletSample& t, Rng& rng) {
  Tape tape(false);
  TripletFeatures out;
  out.f = image_encode(tape, params, features.tensor(manifest.samples[t.anchor].id),
                       false, rng);
  out.f_attr = image_encode(
      tape, params, features.tensor(manifest.samples[t.attr_mate].id), false, rng);
  out.f_obj = image_encode(
      tape, params, features.tensor(manifest.samples[t.obj_mate].id), false, rng);
  return out;
}

}  // namespace

PrototypeSet prototype_features(ModelParams& params, const Manifest& manifest,
                                const FeatureStore& features,
                                const SplitSpec& split, double lambda,
                                double gamma, std::uint64_t seed) {
  const Vocab vocab = Vocab::from_manifest(manifest);
  TripletIndex index(manifest, split.train_ids);
  Tape tape(false);

  std::map<std::string, std::pair<std::vector<double>, std::size_t>> attr_acc,
      obj_acc;
  PrototypeSet out;

  for (const auto& id : split.train_ids) {
    const std::size_t anchor = index.sample_index(id);
    // per-anchor stream: mate choice is independent of iteration order
    Rng rng(seed, 0x1100 + anchor);
    TripletSample triplet;
    try {
      triplet = index.sample(anchor, rng);
    } catch (const MateNotFoundError&) {
      ++out.skipped_samples;
      continue;
    }
    auto enc = encode_triplet(params, manifest, features, triplet, rng);
    auto d = disentangle(tape, enc.f, enc.f_attr, enc.f_obj,
                         static_cast<float>(lambda), static_cast<float>(gamma));
    auto pa = project_attr(tape, params, d.v_attr, false, rng);
    auto po = project_obj(tape, params, d.v_obj, false, rng);
    const Sample& s = manifest.samples[anchor];
    auto& [asum, acount] = attr_acc[s.attr];
    if (asum.empty()) asum.assign(pa.numel(), 0.0);
    for (std::size_t i = 0; i < pa.numel(); ++i) asum[i] += pa.at(i);
    ++acount;
    auto& [osum, ocount] = obj_acc[s.obj];
    if (osum.empty()) osum.assign(po.numel(), 0.0);
    for (std::size_t i = 0; i < po.numel(); ++i) osum[i] += po.at(i);
    ++ocount;
  }

  for (const auto& token : vocab.attrs) {
    auto it = attr_acc.find(token);
    if (it == attr_acc.end()) {
      out.warnings.push_back("prototype: attribute " + token +
                             " has no resolvable training samples, skipped");
      continue;
    }
    std::vector<float> proto(it->second.first.size());
    for (std::size_t i = 0; i < proto.size(); ++i) {
      proto[i] = static_cast<float>(it->second.first[i] /
                                    static_cast<double>(it->second.second));
    }
    out.attr_tokens.push_back(token);
    out.attr_protos.push_back(std::move(proto));
  }
  for (const auto& token : vocab.objs) {
    auto it = obj_acc.find(token);
    if (it == obj_acc.end()) {
      out.warnings.push_back("prototype: object " + token +
                             " has no resolvable training samples, skipped");
      continue;
    }
    std::vector<float> proto(it->second.first.size());
    for (std::size_t i = 0; i < proto.size(); ++i) {
      proto[i] = static_cast<float>(it->second.first[i] /
                                    static_cast<double>(it->second.second));
    }
    out.obj_tokens.push_back(token);
    out.obj_protos.push_back(std::move(proto));
  }
  return out;
}

double prototype_attr_accuracy(ModelParams& params, const Manifest& manifest,
                               const FeatureStore& features,
                               const SplitSpec& split,
                               const PrototypeSet& protos,
                               const std::vector<std::string>& ids,
                               double lambda, double gamma,
                               std::uint64_t seed) {
  if (protos.attr_protos.empty()) {
    throw ContractError("prototype_attr_accuracy: no prototypes");
  }
  TripletIndex index(manifest, split.train_ids);
  Tape tape(false);
  std::size_t total = 0, hits = 0;
  for (const auto& id : ids) {
    const std::size_t anchor = index.sample_index(id);
    Rng rng(seed, 0x1200 + anchor);
    TripletSample triplet;
    try {
      triplet = index.sample(anchor, rng);
    } catch (const MateNotFoundError&) {
      continue;
    }
    auto enc = encode_triplet(params, manifest, features, triplet, rng);
    auto d = disentangle(tape, enc.f, enc.f_attr, enc.f_obj,
                         static_cast<float>(lambda), static_cast<float>(gamma));
    auto pa = project_attr(tape, params, d.v_attr, false, rng);
    std::size_t best = 0;
    double best_cos = -2;
    for (std::size_t i = 0; i < protos.attr_protos.size(); ++i) {
      const double c = cosine(
          std::span<const float>(pa.values().data(), pa.numel()),
          std::span<const float>(protos.attr_protos[i].data(),
                                 protos.attr_protos[i].size()));
      if (c > best_cos) {
        best_cos = c;
        best = i;
      }
    }
    ++total;
    hits += protos.attr_tokens[best] == manifest.samples[anchor].attr;
  }
  if (total == 0) {
    throw MateNotFoundError("prototype_attr_accuracy: no sample resolved a triplet");
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

std::vector<std::pair<std::string, double>> retrieve_by_hallucination(
    ModelParams& params, const Manifest& manifest,
    const FeatureStore& features, const SplitSpec& split,
    const PairLabel& pair, std::size_t top_n, double lambda, double gamma,
    std::uint64_t seed) {
  const auto& [attr, obj] = pair;
  TripletIndex index(manifest, split.train_ids);
  Rng rng(seed, 13);

  // Source triplet realizing (attr, obj): the object-mate carries the
  // attribute, the attribute-mate carries the object.
  std::map<std::string, std::size_t> id_of;
  for (std::size_t i = 0; i < manifest.samples.size(); ++i)
    id_of[manifest.samples[i].id] = i;
  std::map<PairLabel, std::vector<std::size_t>> train_by_pair;
  for (const auto& id : split.train_ids) {
    const auto& s = manifest.samples[id_of[id]];
    train_by_pair[{s.attr, s.obj}].push_back(id_of[id]);
  }

  std::vector<std::pair<std::size_t, std::pair<std::size_t, std::size_t>>> options;
  for (const auto& [p, anchors] : train_by_pair) {
    const auto& [a0, o0] = p;
    if (a0 == attr || o0 == obj) continue;
    auto attr_mate = train_by_pair.find({a0, obj});
    auto obj_mate = train_by_pair.find({attr, o0});
    if (attr_mate == train_by_pair.end() || obj_mate == train_by_pair.end())
      continue;
    for (std::size_t anchor : anchors) {
      options.push_back({anchor,
                         {attr_mate->second[rng.uniform_index(attr_mate->second.size())],
                          obj_mate->second[rng.uniform_index(obj_mate->second.size())]}});
    }
  }
  if (options.empty()) {
    throw MateNotFoundError("retrieve: no source triplet realizes pair (" +
                            attr + ", " + obj + ")");
  }
  const auto& pick = options[rng.uniform_index(options.size())];
  TripletSample source{pick.first, pick.second.first, pick.second.second};

  Tape tape(false);
  auto enc = encode_triplet(params, manifest, features, source, rng);
  auto d = disentangle(tape, enc.f, enc.f_attr, enc.f_obj,
                       static_cast<float>(lambda), static_cast<float>(gamma));
  auto query = compose_pair(tape, params, d.hal_attr, d.hal_obj);

  std::vector<std::pair<std::string, double>> ranked;
  for (const auto& id : split.test_ids) {
    const std::size_t anchor = index.sample_index(id);
    Rng sample_rng(seed, 0x1300 + anchor);
    TripletSample t;
    try {
      t = index.sample(anchor, sample_rng);
    } catch (const MateNotFoundError&) {
      continue;
    }
    auto e = encode_triplet(params, manifest, features, t, sample_rng);
    auto dt = disentangle(tape, e.f, e.f_attr, e.f_obj,
                          static_cast<float>(lambda), static_cast<float>(gamma));
    auto composed = compose_pair(tape, params, dt.v_attr, dt.v_obj);
    ranked.emplace_back(
        id, cosine(std::span<const float>(query.values().data(), query.numel()),
                   std::span<const float>(composed.values().data(),
                                          composed.numel())));
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) {
                     if (a.second != b.second) return a.second > b.second;
                     return a.first < b.first;
                   });
  if (ranked.size() > top_n) ranked.resize(top_n);
  return ranked;
}

}  // namespace oadis
