#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "oadis/errors.hpp"
#include "oadis/rng.hpp"
#include "oadis/tensor.hpp"

namespace oadis {

using PairLabel = std::pair<std::string, std::string>;  // (attr, obj)

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct Sample {
  std::string id;
  std::string attr;
  std::string obj;
};

struct Manifest {
  std::vector<Sample> samples;
  std::vector<std::string> attributes;
  std::vector<std::string> objects;
};

// Pre-split manifest; samples may carry several attribute labels.
struct RawSample {
  std::string id;
  std::vector<std::string> attrs;
  std::string obj;
};

struct RawManifest {
  std::vector<RawSample> samples;
};

Manifest load_manifest(const std::string& path);
void save_manifest(const Manifest& manifest, const std::string& path);
RawManifest load_raw_manifest(const std::string& path);

// Token-to-row mapping shared by the word table and the manifest. Attribute
// rows come first, object rows after.
struct Vocab {
  std::vector<std::string> attrs;
  std::vector<std::string> objs;
  std::unordered_map<std::string, std::size_t> attr_index;
  std::unordered_map<std::string, std::size_t> obj_index;

  static Vocab from_manifest(const Manifest& m);
  std::size_t size() const { return attrs.size() + objs.size(); }
  std::size_t attr_row(const std::string& token) const;
  std::size_t obj_row(const std::string& token) const;  // offset by |attrs|
};

// ---------------------------------------------------------------------------
// Feature container ("OADT")
// ---------------------------------------------------------------------------

// Layout: magic "OADT", u32 version=1, u32 sample count, u32 n0,
// u32 positions (=49), then per sample: u32 id length, id bytes,
// n0*49 little-endian f32, feature dim major.
struct FeatureStore {
  std::size_t n0 = 0;
  std::size_t positions = 0;
  std::vector<std::string> ids;
  std::unordered_map<std::string, std::size_t> index;
  std::vector<float> data;  // contiguous, n0*positions per sample

  std::size_t size() const { return ids.size(); }
  bool contains(const std::string& id) const { return index.count(id) > 0; }
  std::span<const float> raw(const std::string& id) const;
  Tensor tensor(const std::string& id) const;  // [n0 x positions]
  void add(const std::string& id, std::span<const float> values);
};

FeatureStore load_features(const std::string& path);
void save_features(const FeatureStore& store, const std::string& path);

// ---------------------------------------------------------------------------
// Word embeddings (GloVe-compatible text)
// ---------------------------------------------------------------------------

struct EmbeddingTable {
  std::size_t dim = 0;
  std::vector<std::string> tokens;
  std::unordered_map<std::string, std::size_t> index;
  std::vector<float> vectors;  // contiguous, dim per token

  std::span<const float> lookup(const std::string& token) const;
  void add(const std::string& token, std::span<const float> v);
};

// expected_dim = 0 accepts whatever the file contains.
EmbeddingTable load_word_embeddings(const std::string& path,
                                    std::size_t expected_dim);
void save_word_embeddings(const EmbeddingTable& table, const std::string& path);

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct SplitSpec {
  std::vector<PairLabel> train_pairs;
  std::vector<PairLabel> val_seen_pairs;
  std::vector<PairLabel> val_unseen_pairs;
  std::vector<PairLabel> test_seen_pairs;
  std::vector<PairLabel> test_unseen_pairs;
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  std::vector<std::string> test_ids;
};

SplitSpec load_split(const std::string& path);
void save_split(const SplitSpec& split, const std::string& path);

struct SplitBuildOptions {
  std::size_t min_frequency = 30;
  double unseen_fraction = 0.3;       // fraction of pairs held out
  double val_fraction = 0.5;          // held-out pairs sent to val vs test
  double eval_sample_fraction = 0.2;  // seen-pair samples sent to val+test
  std::uint64_t seed = 0;
  std::map<std::string, std::string> synonyms;
};

struct SplitBuildResult {
  Manifest manifest;  // canonicalized, single-attribute, filtered
  SplitSpec split;
  std::vector<std::string> warnings;
};

// Canonicalizes tokens, keeps the lowest-frequency attribute per sample,
// filters rare primitives, partitions pairs and samples, and prunes to a
// fixed point so every surviving primitive occurs in some training pair.
SplitBuildResult build_czsl_split(const RawManifest& raw,
                                  const SplitBuildOptions& opts);

// ---------------------------------------------------------------------------
// Triplet sampling
// ---------------------------------------------------------------------------

struct TripletSample {
  std::size_t anchor;     // indices into Manifest::samples
  std::size_t attr_mate;  // same attribute, different object
  std::size_t obj_mate;   // same object, different attribute
};

// Mates always come from the training ids; the anchor may be any sample
// (training for the optimizer, val/test for diagnostics).
class TripletIndex {
 public:
  TripletIndex(const Manifest& manifest,
               const std::vector<std::string>& train_ids);

  TripletSample sample(std::size_t anchor_index, Rng& rng) const;
  std::size_t sample_index(const std::string& id) const;

 private:
  const Manifest* manifest_;
  std::unordered_map<std::string, std::size_t> id_to_index_;
  std::unordered_map<std::string, std::vector<std::size_t>> by_attr_;
  std::unordered_map<std::string, std::vector<std::size_t>> by_obj_;
};

// ---------------------------------------------------------------------------
// Synthetic benchmark
// ---------------------------------------------------------------------------

struct SyntheticConfig {
  std::size_t num_attrs = 20;
  std::size_t num_objects = 20;
  std::size_t latent_dim = 12;
  std::size_t feature_dim = 32;  // n0
  std::size_t blocks_per_factor = 3;
  double noise = 0.1;
  double seen_fraction = 0.8;
  std::size_t samples_per_pair = 5;       // training samples per seen pair
  std::size_t eval_samples_per_pair = 1;  // extra val/test samples per seen pair
  std::size_t embedding_dim = 32;
  std::uint64_t seed = 7;
};

struct SampleMask {
  std::vector<std::size_t> attr_blocks;
  std::vector<std::size_t> obj_blocks;
};

using MaskMap = std::map<std::string, SampleMask>;

MaskMap load_masks(const std::string& path);
void save_masks(const MaskMap& masks, const std::string& path);

struct SyntheticDataset {
  Manifest manifest;
  FeatureStore features;
  SplitSpec split;
  MaskMap masks;
  EmbeddingTable embeddings;
};

// Plants one attribute latent and one object latent on disjoint random block
// sets of the 49-position grid and records the block sets as ground truth.
SyntheticDataset generate_synthetic(const SyntheticConfig& cfg);

// Fraction of total attention mass falling on a block set.
double attention_mass_on_mask(std::span<const float> weights,
                              const std::vector<std::size_t>& mask);

}  // namespace oadis
