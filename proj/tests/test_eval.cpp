#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "oadis/data.hpp"
#include "oadis/eval.hpp"
#include "oadis/model.hpp"
#include "oadis/train.hpp"
#include "testutil.hpp"

using namespace oadis;

// ---------------------------------------------------------------------------
// Independent enumeration oracle: re-derives the whole protocol with sorting
// and explicit loops instead of the library's counting implementation.
// ---------------------------------------------------------------------------
namespace oracle {

bool hit(const ScoreMatrix& m, std::size_t row, double bias, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t c = 0; c < m.cols(); ++c) {
    const double s = m.at(row, c) + (m.col_unseen[c] ? bias : 0.0);
    order.push_back({-s, c});  // ascending = descending score, index tiebreak
  }
  std::sort(order.begin(), order.end());
  for (std::size_t rank = 0; rank < k; ++rank) {
    if (order[rank].second == m.row_true[row]) return true;
  }
  return false;
}

std::vector<double> candidates(const ScoreMatrix& m) {
  double lo = m.scores[0], hi = m.scores[0];
  for (double s : m.scores) {
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  const double spread = hi - lo + 1.0;
  const double margin = spread * 1e-9;
  std::set<double> set;
  set.insert(-spread);
  set.insert(spread);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    if (!m.col_unseen[m.row_true[r]]) continue;
    double best_seen = -1e300;
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (!m.col_unseen[c]) best_seen = std::max(best_seen, m.at(r, c));
    }
    set.insert(best_seen - m.at(r, m.row_true[r]) + margin);
  }
  return {set.begin(), set.end()};
}

struct Point {
  double bias, seen, unseen;
};

std::vector<Point> sweep(const ScoreMatrix& m, std::size_t k) {
  std::vector<Point> out;
  for (double b : candidates(m)) {
    std::size_t sh = 0, st = 0, uh = 0, ut = 0;
    for (std::size_t r = 0; r < m.rows(); ++r) {
      const bool unseen_row = m.col_unseen[m.row_true[r]] != 0;
      const bool ok = hit(m, r, b, k);
      if (unseen_row) {
        ++ut;
        uh += ok;
      } else {
        ++st;
        sh += ok;
      }
    }
    out.push_back({b, double(sh) / double(st), double(uh) / double(ut)});
  }
  return out;
}

double auc(const std::vector<Point>& pts) {
  // closed polyline: (max seen, 0) head, (0, max unseen) tail
  std::vector<std::pair<double, double>> poly;
  poly.push_back({pts.front().seen, 0.0});
  for (const auto& p : pts) poly.push_back({p.seen, p.unseen});
  poly.push_back({0.0, pts.back().unseen});
  double area = 0;
  for (std::size_t i = 0; i + 1 < poly.size(); ++i) {
    area += (poly[i].first - poly[i + 1].first) *
            (poly[i].second + poly[i + 1].second) / 2.0;
  }
  return area;
}

std::pair<double, double> best_hm(const std::vector<Point>& pts) {
  double best = 0, at = pts.front().bias;
  for (const auto& p : pts) {
    const double hm =
        (p.seen + p.unseen) > 0 ? 2.0 * p.seen * p.unseen / (p.seen + p.unseen) : 0.0;
    if (hm > best) {
      best = hm;
      at = p.bias;
    }
  }
  return {best, at};
}

std::pair<double, double> attr_obj(const ScoreMatrix& m, double bias) {
  std::size_t total = 0, ah = 0, oh = 0;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    if (!m.col_unseen[m.row_true[r]]) continue;
    std::vector<std::pair<double, std::size_t>> order;
    for (std::size_t c = 0; c < m.cols(); ++c) {
      order.push_back({-(m.at(r, c) + (m.col_unseen[c] ? bias : 0.0)), c});
    }
    std::sort(order.begin(), order.end());
    const auto& pred = m.pairs[order.front().second];
    const auto& truth = m.pairs[m.row_true[r]];
    ++total;
    ah += pred.first == truth.first;
    oh += pred.second == truth.second;
  }
  return {double(ah) / double(total), double(oh) / double(total)};
}

}  // namespace oracle

namespace {

// dyadic scores keep every difference exactly representable, so the oracle
// comparison can demand bit equality
ScoreMatrix random_matrix(Rng& rng, std::size_t max_rows = 5,
                          std::size_t max_cols = 6) {
  ScoreMatrix m;
  const std::size_t cols = 2 + rng.uniform_index(max_cols - 1);
  const std::size_t seen_cols = 1 + rng.uniform_index(cols - 1);
  for (std::size_t c = 0; c < cols; ++c) {
    m.pairs.push_back({"a" + std::to_string(c % 3), "o" + std::to_string(c / 3)});
    m.col_unseen.push_back(c >= seen_cols);
  }
  const std::size_t rows = 2 + rng.uniform_index(max_rows - 1);
  for (std::size_t r = 0; r < rows; ++r) {
    m.row_ids.push_back("row" + std::to_string(r));
    // force at least one seen-true and one unseen-true row
    std::size_t t;
    if (r == 0) {
      t = rng.uniform_index(seen_cols);
    } else if (r == 1) {
      t = seen_cols + rng.uniform_index(cols - seen_cols);
    } else {
      t = rng.uniform_index(cols);
    }
    m.row_true.push_back(t);
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = (double(rng.uniform_index(129)) - 64.0) / 64.0;
      m.scores.push_back(v);
    }
  }
  return m;
}

}  // namespace

TEST_CASE("bias_sweep matches the enumeration oracle exactly") {
  Rng rng(71);
  for (int trial = 0; trial < 80; ++trial) {
    ScoreMatrix m = random_matrix(rng);
    for (std::size_t k = 1; k <= std::min<std::size_t>(3, m.cols()); ++k) {
      const BiasSweepResult got = bias_sweep(m, k);
      const auto want = oracle::sweep(m, k);
      REQUIRE(got.points.size() == want.size());
      for (std::size_t i = 0; i < want.size(); ++i) {
        CHECK(got.points[i].bias == want[i].bias);
        CHECK(got.points[i].seen_acc == want[i].seen);
        CHECK(got.points[i].unseen_acc == want[i].unseen);
      }
      CHECK(got.auc == oracle::auc(want));
      const auto [hm, hm_bias] = oracle::best_hm(want);
      CHECK(got.best_hm == hm);
      CHECK(got.best_hm_bias == hm_bias);
      const auto [aa, oa] = attr_obj_accuracy(m, got.best_hm_bias);
      const auto [aa2, oa2] = oracle::attr_obj(m, hm_bias);
      CHECK(aa == aa2);
      CHECK(oa == oa2);
    }
  }
}

TEST_CASE("bias endpoints: low bias kills unseen, high bias kills seen") {
  Rng rng(73);
  for (int trial = 0; trial < 30; ++trial) {
    ScoreMatrix m = random_matrix(rng);
    const BiasSweepResult r = bias_sweep(m, 1);
    CHECK(r.points.front().unseen_acc == 0.0);
    CHECK(r.points.back().seen_acc == 0.0);
    // monotone along the sweep
    for (std::size_t i = 1; i < r.points.size(); ++i) {
      CHECK(r.points[i].seen_acc <= r.points[i - 1].seen_acc);
      CHECK(r.points[i].unseen_acc >= r.points[i - 1].unseen_acc);
    }
  }
}

TEST_CASE("auc: perfect classifier, hopeless classifier, hand curve") {
  // two columns (seen, unseen), two rows, true pair always ranked first
  ScoreMatrix m;
  m.pairs = {{"a", "x"}, {"b", "y"}};
  m.col_unseen = {0, 1};
  m.row_ids = {"r0", "r1"};
  m.row_true = {0, 1};
  m.scores = {1.0, 0.0,   // seen-true row
              0.0, 1.0};  // unseen-true row
  auto sweep = bias_sweep(m, 1);
  CHECK(sweep.auc == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(sweep.best_hm == doctest::Approx(1.0).epsilon(1e-12));

  // hopeless classifier: a same-group distractor dominates the true pair in
  // every row, so no bias can ever fix the ranking
  ScoreMatrix never;
  never.pairs = {{"a", "x"}, {"b", "x"}, {"a", "y"}, {"b", "y"}};
  never.col_unseen = {0, 0, 1, 1};
  never.row_ids = {"r0", "r1"};
  never.row_true = {0, 2};
  never.scores = {0.0, 1.0, -1.0, -1.0,   // seen-true row: seen distractor wins
                  -1.0, -1.0, 0.0, 1.0};  // unseen-true row: unseen distractor wins
  auto s2 = bias_sweep(never, 1);
  CHECK(s2.auc == doctest::Approx(0.0));
  CHECK(s2.best_hm == 0.0);

  std::vector<SweepPoint> hand = {{-1, 1.0, 0.0}, {0, 0.5, 0.5}, {1, 0.0, 1.0}};
  CHECK(std::abs(auc_of_curve(hand) - 0.5) < 1e-9);
}

TEST_CASE("best_harmonic_mean: saturated point, antagonistic curve, hand value") {
  std::vector<SweepPoint> sat = {{0, 1.0, 1.0}};
  CHECK(best_harmonic_mean(sat).first == doctest::Approx(1.0));
  std::vector<SweepPoint> antag = {{0, 1.0, 0.0}, {1, 0.0, 1.0}};
  CHECK(best_harmonic_mean(antag).first == 0.0);
  std::vector<SweepPoint> hand = {{0, 0.6, 0.3}};
  CHECK(best_harmonic_mean(hand).first == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("attr_obj_accuracy: object right, attribute wrong") {
  ScoreMatrix m;
  m.pairs = {{"red", "car"}, {"wet", "car"}, {"red", "dog"}};
  m.col_unseen = {0, 0, 1};
  m.row_ids = {"r0", "r1"};
  m.row_true = {0, 2};  // one seen row, one unseen row (true: red dog)
  m.scores = {1.0, 0.0, 0.0,
              0.0, 1.0, 0.0};  // unseen row predicts (wet, car): both wrong
  auto [aa, oa] = attr_obj_accuracy(m, 0.0);
  CHECK(aa == 0.0);
  CHECK(oa == 0.0);
  // flip: prediction shares the object only
  ScoreMatrix m2 = m;
  m2.pairs = {{"red", "dog"}, {"wet", "dog"}, {"red", "car"}};
  m2.row_true = {0, 2};  // truth (red, car); prediction (wet, dog)... bias 0
  m2.scores = {1.0, 0.0, 0.0,
               0.0, 1.0, 0.0};
  auto [aa2, oa2] = attr_obj_accuracy(m2, 0.0);
  CHECK(aa2 == 0.0);
  CHECK(oa2 == 0.0);
  // prediction (red, dog) vs truth (red, car): attribute right
  ScoreMatrix m3 = m;
  m3.scores = {1.0, 0.0, 0.0,
               1.0, 0.0, 0.0};  // unseen row top-1 = col0 (red, car)? truth col2 (red,dog)
  auto [aa3, oa3] = attr_obj_accuracy(m3, 0.0);
  CHECK(aa3 == 1.0);  // red == red
  CHECK(oa3 == 0.0);
}

TEST_CASE("auc is invariant to a constant shift of every score") {
  Rng rng(79);
  for (int trial = 0; trial < 20; ++trial) {
    ScoreMatrix m = random_matrix(rng);
    ScoreMatrix shifted = m;
    for (auto& s : shifted.scores) s += 0.25;  // exactly representable
    for (std::size_t k = 1; k <= 2 && k <= m.cols(); ++k) {
      CHECK(bias_sweep(m, k).auc == bias_sweep(shifted, k).auc);
    }
  }
}

TEST_CASE("top-k auc is monotone in k") {
  Rng rng(83);
  for (int trial = 0; trial < 30; ++trial) {
    ScoreMatrix m = random_matrix(rng);
    double prev = -1;
    for (std::size_t k = 1; k <= m.cols(); ++k) {
      const double a = bias_sweep(m, k).auc;
      CHECK(a >= prev - 1e-12);
      prev = a;
    }
  }
}

TEST_CASE("bias_sweep contract checks") {
  Rng rng(89);
  ScoreMatrix m = random_matrix(rng);
  CHECK_THROWS_AS(bias_sweep(m, 0), ContractError);
  CHECK_THROWS_AS(bias_sweep(m, m.cols() + 1), ContractError);
  ScoreMatrix all_seen = m;
  for (auto& t : all_seen.row_true) t = 0;  // every row seen-true
  CHECK_THROWS_AS(bias_sweep(all_seen, 1), ContractError);
}

TEST_CASE("metrics json is stable and carries 4-decimal percentages") {
  MetricsReport r;
  r.split = "val";
  KMetrics k;
  k.k = 1;
  k.auc = 0.123456789;
  k.best_hm = 0.5;
  k.best_hm_bias = -0.75;
  k.best_seen = 1.0;
  k.best_unseen = 1.0 / 3.0;
  k.attr_acc = 0.25;
  k.obj_acc = 0.0;
  r.per_k = {k};
  const std::string a = metrics_to_json(r);
  CHECK(a == metrics_to_json(r));
  CHECK(a.find("\"auc_pct\": 12.3457") != std::string::npos);
  CHECK(a.find("\"unseen_pct\": 33.3333") != std::string::npos);
  CHECK(a.find("\"best_hm_bias\": -0.75") != std::string::npos);
}

// ---------------------------------------------------------------------------
// model-backed evaluation on a small synthetic dataset
// ---------------------------------------------------------------------------

namespace {

struct SmallRun {
  SyntheticDataset ds;
  RunConfig cfg;
  LoadedDataset data;
  ModelParams params;
};

SmallRun small_run() {
  SmallRun run;
  SyntheticConfig synth;
  synth.num_attrs = 5;
  synth.num_objects = 5;
  synth.latent_dim = 6;
  synth.feature_dim = 10;
  synth.blocks_per_factor = 3;
  synth.samples_per_pair = 3;
  synth.eval_samples_per_pair = 1;
  synth.embedding_dim = 12;
  synth.seed = 31;
  run.ds = generate_synthetic(synth);

  run.cfg.n0 = 10;
  run.cfg.n = 12;
  run.cfg.d_emb = 12;
  run.cfg.d_w = 12;
  run.cfg.delta = 5.0;
  run.cfg.seed = 3;
  run.data.manifest = run.ds.manifest;
  run.data.features = run.ds.features;
  run.data.split = run.ds.split;
  run.data.embeddings = run.ds.embeddings;
  run.data.vocab = Vocab::from_manifest(run.ds.manifest);
  run.params = make_model(run.cfg, run.data.vocab, run.data.embeddings);
  return run;
}

}  // namespace

TEST_CASE("evaluate: produces per-k metrics on an untrained synthetic model") {
  auto run = small_run();
  auto report = evaluate(run.params, run.data.manifest, run.data.features,
                         run.data.split, "val", run.cfg.delta, {1, 3});
  REQUIRE(report.per_k.size() == 2);
  for (const auto& k : report.per_k) {
    CHECK(k.auc >= 0.0);
    CHECK(k.auc <= 1.0);
    CHECK(k.best_hm >= 0.0);
    CHECK(k.best_hm <= 1.0);
  }
  CHECK(report.per_k[0].auc <= report.per_k[1].auc + 1e-12);

  CHECK_THROWS_AS(evaluate(run.params, run.data.manifest, run.data.features,
                           run.data.split, "val", run.cfg.delta, {1000}),
                  ConfigError);
}

TEST_CASE("forward_infer matches the score-matrix rows") {
  auto run = small_run();
  auto m = build_score_matrix(run.params, run.data.manifest, run.data.features,
                              run.data.split, "val", run.cfg.delta);
  const Vocab& vocab = run.data.vocab;
  std::vector<std::pair<std::size_t, std::size_t>> rows;
  for (const auto& [a, o] : m.pairs)
    rows.push_back({vocab.attr_row(a), vocab.obj_row(o)});
  auto scores = forward_infer(run.params,
                              run.data.features.tensor(m.row_ids[0]), rows,
                              static_cast<float>(run.cfg.delta));
  for (std::size_t c = 0; c < m.cols(); ++c) {
    CHECK(m.at(0, c) == doctest::Approx(double(scores[c])).epsilon(1e-5));
  }
}

TEST_CASE("prototype features: permutation invariant and complete") {
  auto run = small_run();
  auto protos = prototype_features(run.params, run.data.manifest,
                                   run.data.features, run.data.split, 10.0,
                                   10.0, 55);
  CHECK(protos.attr_tokens.size() == 5);
  CHECK(protos.obj_tokens.size() == 5);

  SplitSpec shuffled = run.data.split;
  Rng rng(9);
  rng.shuffle(shuffled.train_ids);
  auto protos2 = prototype_features(run.params, run.data.manifest,
                                    run.data.features, shuffled, 10.0, 10.0,
                                    55);
  REQUIRE(protos2.attr_tokens == protos.attr_tokens);
  for (std::size_t i = 0; i < protos.attr_protos.size(); ++i) {
    for (std::size_t j = 0; j < protos.attr_protos[i].size(); ++j) {
      CHECK(protos2.attr_protos[i][j] ==
            doctest::Approx(protos.attr_protos[i][j]).epsilon(1e-5));
    }
  }

  const double acc = prototype_attr_accuracy(
      run.params, run.data.manifest, run.data.features, run.data.split,
      protos, run.data.split.val_ids, 10.0, 10.0, 55);
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
}

TEST_CASE("retrieve_by_hallucination: full ranking, sorted output") {
  auto run = small_run();
  REQUIRE(!run.data.split.val_unseen_pairs.empty());
  PairLabel target = run.data.split.test_unseen_pairs.empty()
                         ? run.data.split.val_unseen_pairs[0]
                         : run.data.split.test_unseen_pairs[0];
  auto ranked = retrieve_by_hallucination(
      run.params, run.data.manifest, run.data.features, run.data.split,
      target, 1000000, 10.0, 10.0, 77);
  CHECK(!ranked.empty());
  CHECK(ranked.size() <= run.data.split.test_ids.size());
  for (std::size_t i = 1; i < ranked.size(); ++i) {
    CHECK(ranked[i - 1].second >= ranked[i].second);
  }
  auto top2 = retrieve_by_hallucination(
      run.params, run.data.manifest, run.data.features, run.data.split,
      target, 2, 10.0, 10.0, 77);
  REQUIRE(top2.size() == 2);
  CHECK(top2[0].first == ranked[0].first);
  CHECK(top2[1].first == ranked[1].first);

  CHECK_THROWS_AS(
      retrieve_by_hallucination(run.params, run.data.manifest,
                                run.data.features, run.data.split,
                                {"nope", "nothing"}, 5, 10.0, 10.0, 77),
      MateNotFoundError);
}
