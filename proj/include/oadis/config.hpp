#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "oadis/errors.hpp"

namespace oadis {

// Flat key=value run configuration ('#' starts a comment line, dotted keys
// give structure). Unknown keys are rejected.
struct RunConfig {
  // dataset paths
  std::string data_features;
  std::string data_manifest;
  std::string data_split;
  std::string data_embeddings;
  std::string data_masks;
  std::string data_synonyms;

  // model dims and temperatures
  std::size_t n0 = 512;
  std::size_t n = 1024;
  std::size_t d_emb = 300;
  std::size_t d_w = 300;
  double lambda = 10.0;
  double gamma = 10.0;
  double delta = 0.05;
  std::string ocn_variant = "object_conditioned";
  double ie_dropout = 0.3;
  double head_dropout = 0.05;
  double ocn_dropout = 0.0;

  // losses
  double alpha1 = 0.5;
  double alpha2 = 0.5;
  double alpha3 = 0.05;
  double alpha4 = 0.05;
  std::string unseen_anchors = "seen_plus_target";  // or "full_vocab"

  // optimizer / schedule
  double lr = 3e-4;
  double embedding_lr = 2.5e-6;
  double weight_decay = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t epochs = 20;
  std::vector<std::size_t> lr_decay_epochs = {30, 40};
  double lr_decay_factor = 0.1;
  double max_skip_fraction = 0.5;

  std::uint64_t seed = 0;
  std::string out = "out";
  std::string checkpoint;

  // synthetic generator
  std::size_t synth_attrs = 20;
  std::size_t synth_objects = 20;
  std::size_t synth_latent_dim = 12;
  std::size_t synth_feature_dim = 32;
  std::size_t synth_blocks_per_factor = 3;
  double synth_noise = 0.1;
  double synth_seen_fraction = 0.8;
  std::size_t synth_samples_per_pair = 5;
  std::size_t synth_eval_samples_per_pair = 1;

  // split builder
  std::size_t split_min_frequency = 30;
  double split_unseen_fraction = 0.3;
  double split_val_fraction = 0.5;
  double split_eval_sample_fraction = 0.2;

  // evaluation
  std::string eval_split = "val";
  std::vector<std::size_t> eval_ks = {1, 3, 5};
  bool eval_curve_csv = false;

  std::map<std::string, std::string> to_kv() const;
  static RunConfig from_kv(const std::map<std::string, std::string>& kv);

  // Sanity checks shared by every command.
  void validate() const;
  // Stricter checks for commands that run the training-path model.
  void validate_for_training() const;
};

std::map<std::string, std::string> parse_kv_text(const std::string& text);
std::string serialize_kv(const std::map<std::string, std::string>& kv);

RunConfig load_config(const std::string& path);
RunConfig parse_config_text(const std::string& text);
std::string serialize_config(const RunConfig& cfg);

}  // namespace oadis
