#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "oadis/data.hpp"
#include "oadis/model.hpp"

namespace oadis {

// ---------------------------------------------------------------------------
// Score matrix
// ---------------------------------------------------------------------------

// Rows are evaluation samples, columns are the candidate pairs
// (train pairs plus the split's unseen pairs).
struct ScoreMatrix {
  std::vector<PairLabel> pairs;
  std::vector<char> col_unseen;
  std::vector<std::string> row_ids;
  std::vector<std::size_t> row_true;  // column index of the true pair
  std::vector<double> scores;         // rows x cols, row-major

  std::size_t rows() const { return row_ids.size(); }
  std::size_t cols() const { return pairs.size(); }
  double at(std::size_t r, std::size_t c) const { return scores[r * cols() + c]; }
  bool row_unseen(std::size_t r) const { return col_unseen[row_true[r]] != 0; }

  void validate() const;
};

ScoreMatrix build_score_matrix(ModelParams& params, const Manifest& manifest,
                               const FeatureStore& features,
                               const SplitSpec& split,
                               const std::string& which,  // "val" | "test"
                               double delta);

// ---------------------------------------------------------------------------
// Bias sweep metrics
// ---------------------------------------------------------------------------

struct SweepPoint {
  double bias;
  double seen_acc;
  double unseen_acc;
};

struct BiasSweepResult {
  std::vector<SweepPoint> points;  // ordered by increasing bias
  double auc = 0;
  double best_hm = 0;
  double best_hm_bias = 0;
};

// Candidate biases are the differences (max seen score - true score) over
// unseen-true rows, closed with dominating low/high sentinels. At each bias
// the sweep adds it to every unseen column and scores top-k membership with
// ties broken by column index.
BiasSweepResult bias_sweep(const ScoreMatrix& m, std::size_t k);

// Trapezoidal area under unseen-vs-seen, with endpoints closed to the axes.
double auc_of_curve(const std::vector<SweepPoint>& points);

// (best harmonic mean, bias attaining it).
std::pair<double, double> best_harmonic_mean(const std::vector<SweepPoint>& points);

// Top-1 attribute / object accuracy over unseen-true rows at a fixed bias.
std::pair<double, double> attr_obj_accuracy(const ScoreMatrix& m, double bias);

// True pair within top-k at this bias? Shared by the sweep and the oracle
// tests; ties break by column index.
bool topk_hit(const ScoreMatrix& m, std::size_t row, double bias, std::size_t k);

struct KMetrics {
  std::size_t k = 0;
  double auc = 0;
  double best_hm = 0;
  double best_hm_bias = 0;
  double best_seen = 0;
  double best_unseen = 0;
  double attr_acc = 0;
  double obj_acc = 0;
};

struct MetricsReport {
  std::string split;
  std::vector<KMetrics> per_k;
};

MetricsReport evaluate(ModelParams& params, const Manifest& manifest,
                       const FeatureStore& features, const SplitSpec& split,
                       const std::string& which, double delta,
                       const std::vector<std::size_t>& ks);

// Percentages with 4 decimal places; byte-stable for identical inputs.
std::string metrics_to_json(const MetricsReport& report);
std::string curve_to_csv(const BiasSweepResult& sweep);

// ---------------------------------------------------------------------------
// Disentanglement diagnostics
// ---------------------------------------------------------------------------

struct PrototypeSet {
  std::vector<std::string> attr_tokens;
  std::vector<std::vector<float>> attr_protos;  // d_emb each
  std::vector<std::string> obj_tokens;
  std::vector<std::vector<float>> obj_protos;
  std::size_t skipped_samples = 0;
  std::vector<std::string> warnings;
};

// Mean projected disentangled feature per attribute / object over the
// training samples, using seeded triplets.
PrototypeSet prototype_features(ModelParams& params, const Manifest& manifest,
                                const FeatureStore& features,
                                const SplitSpec& split, double lambda,
                                double gamma, std::uint64_t seed);

// Nearest-prototype attribute accuracy of the given samples (anchors may be
// held-out; mates come from the training split).
double prototype_attr_accuracy(ModelParams& params, const Manifest& manifest,
                               const FeatureStore& features,
                               const SplitSpec& split,
                               const PrototypeSet& protos,
                               const std::vector<std::string>& ids,
                               double lambda, double gamma, std::uint64_t seed);

// Ranks test samples by cosine between the hallucinated composition of an
// unseen pair and each sample's composed-seen embedding.
std::vector<std::pair<std::string, double>> retrieve_by_hallucination(
    ModelParams& params, const Manifest& manifest,
    const FeatureStore& features, const SplitSpec& split,
    const PairLabel& pair, std::size_t top_n, double lambda, double gamma,
    std::uint64_t seed);

}  // namespace oadis
