#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "oadis/config.hpp"
#include "oadis/data.hpp"
#include "oadis/model.hpp"

namespace oadis {

struct LoadedDataset {
  Manifest manifest;
  FeatureStore features;
  SplitSpec split;
  EmbeddingTable embeddings;  // empty when not requested
  Vocab vocab;
};

LoadedDataset load_dataset(const RunConfig& cfg, bool need_embeddings);

// Seeded init; the word table is filled from the embedding file.
ModelParams make_model(const RunConfig& cfg, const Vocab& vocab,
                       const EmbeddingTable& embeddings);

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double lr_scale = 1.0;
  double total = 0, cls = 0, attr = 0, obj = 0, seen = 0, unseen = 0;
  std::size_t steps = 0;
  std::size_t skipped = 0;
  double val_auc1 = -1;  // -1 when the val split cannot be swept
};

struct TrainOutcome {
  std::vector<EpochLog> epochs;
  std::string final_checkpoint;
  std::string best_checkpoint;
};

// End-to-end training: per anchor, sample a triplet, run all branches,
// combine the five losses and take one Adam step. Writes final and best-val
// checkpoints under out_dir.
TrainOutcome train_model(const RunConfig& cfg, const LoadedDataset& data,
                         const std::string& out_dir, std::ostream& log);

}  // namespace oadis
