#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "oadis/checkpoint.hpp"
#include "oadis/config.hpp"
#include "oadis/data.hpp"
#include "oadis/errors.hpp"
#include "oadis/eval.hpp"
#include "oadis/model.hpp"
#include "oadis/train.hpp"

namespace {

using namespace oadis;

struct CommonArgs {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
};

LoadedDataset load_dataset_with_dims(const RunConfig& cfg,
                                     const Checkpoint& ckpt);

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "run configuration file")
      ->required();
  cmd->add_option("--seed", args.seed, "seed override")
      ->each([&args](const std::string&) { args.seed_set = true; });
  cmd->add_option("--out", args.out, "output directory override");
}

RunConfig resolve_config(const CommonArgs& args) {
  RunConfig cfg = load_config(args.config_path);
  if (args.seed_set) cfg.seed = args.seed;
  if (!args.out.empty()) cfg.out = args.out;
  return cfg;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot write file: " + path);
  f << text;
  if (!f) throw FormatError("write failed: " + path);
}

// mirrors training log lines to the log file and stdout
class TeeStream : public std::ostream, private std::streambuf {
 public:
  TeeStream(std::ostream& a, std::ostream& b)
      : std::ostream(this), a_(a), b_(b) {}

 protected:
  int overflow(int c) override {
    if (c != EOF) {
      a_.put(static_cast<char>(c));
      b_.put(static_cast<char>(c));
    }
    return c;
  }

 private:
  std::ostream& a_;
  std::ostream& b_;
};

Checkpoint load_checkpoint_for(const RunConfig& cfg,
                               const std::string& flag_path) {
  const std::string path = !flag_path.empty() ? flag_path : cfg.checkpoint;
  if (path.empty()) {
    throw ConfigError("no checkpoint given (use --checkpoint or the "
                      "'checkpoint' config key)");
  }
  return load_checkpoint(path);
}

void check_checkpoint_dataset(const Checkpoint& ckpt, const LoadedDataset& data) {
  if (ckpt.vocab.attrs != data.vocab.attrs ||
      ckpt.vocab.objs != data.vocab.objs) {
    throw ConfigError("vocabulary mismatch between checkpoint and dataset");
  }
  if (ckpt.config.n0 != data.features.n0) {
    throw ConfigError("checkpoint expects n0=" + std::to_string(ckpt.config.n0) +
                      " but feature container has n0=" +
                      std::to_string(data.features.n0));
  }
}

int cmd_gen_data(const CommonArgs& args) {
  RunConfig cfg = resolve_config(args);
  SyntheticConfig synth;
  synth.num_attrs = cfg.synth_attrs;
  synth.num_objects = cfg.synth_objects;
  synth.latent_dim = cfg.synth_latent_dim;
  synth.feature_dim = cfg.synth_feature_dim;
  synth.blocks_per_factor = cfg.synth_blocks_per_factor;
  synth.noise = cfg.synth_noise;
  synth.seen_fraction = cfg.synth_seen_fraction;
  synth.samples_per_pair = cfg.synth_samples_per_pair;
  synth.eval_samples_per_pair = cfg.synth_eval_samples_per_pair;
  synth.embedding_dim = cfg.d_w;
  synth.seed = cfg.seed;

  SyntheticDataset ds = generate_synthetic(synth);
  std::filesystem::create_directories(cfg.out);
  save_features(ds.features, cfg.out + "/features.oadt");
  save_manifest(ds.manifest, cfg.out + "/manifest.json");
  save_split(ds.split, cfg.out + "/split.json");
  save_masks(ds.masks, cfg.out + "/masks.json");
  save_word_embeddings(ds.embeddings, cfg.out + "/embeddings.txt");
  std::printf("gen-data: %zu samples (%zu train / %zu val / %zu test), "
              "%zu seen pairs, %zu val-unseen, %zu test-unseen -> %s\n",
              ds.manifest.samples.size(), ds.split.train_ids.size(),
              ds.split.val_ids.size(), ds.split.test_ids.size(),
              ds.split.train_pairs.size(), ds.split.val_unseen_pairs.size(),
              ds.split.test_unseen_pairs.size(), cfg.out.c_str());
  return 0;
}

int cmd_build_split(const CommonArgs& args) {
  RunConfig cfg = resolve_config(args);
  if (cfg.data_manifest.empty()) {
    throw ConfigError("config: data.manifest is required for build-split");
  }
  RawManifest raw = load_raw_manifest(cfg.data_manifest);
  SplitBuildOptions opts;
  opts.min_frequency = cfg.split_min_frequency;
  opts.unseen_fraction = cfg.split_unseen_fraction;
  opts.val_fraction = cfg.split_val_fraction;
  opts.eval_sample_fraction = cfg.split_eval_sample_fraction;
  opts.seed = cfg.seed;
  if (!cfg.data_synonyms.empty()) {
    std::ifstream f(cfg.data_synonyms);
    if (!f) throw FormatError("cannot open synonyms file: " + cfg.data_synonyms);
    std::string line, token, canon;
    while (f >> token >> canon) opts.synonyms[token] = canon;
  }
  SplitBuildResult result = build_czsl_split(raw, opts);
  std::filesystem::create_directories(cfg.out);
  save_manifest(result.manifest, cfg.out + "/manifest.json");
  save_split(result.split, cfg.out + "/split.json");
  for (const auto& w : result.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  std::printf("build-split: %zu samples, %zu train pairs, %zu/%zu val "
              "seen/unseen pairs, %zu/%zu test seen/unseen pairs -> %s\n",
              result.manifest.samples.size(), result.split.train_pairs.size(),
              result.split.val_seen_pairs.size(),
              result.split.val_unseen_pairs.size(),
              result.split.test_seen_pairs.size(),
              result.split.test_unseen_pairs.size(), cfg.out.c_str());
  return 0;
}

int cmd_train(const CommonArgs& args) {
  RunConfig cfg = resolve_config(args);
  cfg.validate_for_training();
  LoadedDataset data = load_dataset(cfg, /*need_embeddings=*/true);
  std::filesystem::create_directories(cfg.out);
  std::ofstream log_file(cfg.out + "/train_log.txt", std::ios::trunc);
  if (!log_file) throw FormatError("cannot write train log in " + cfg.out);
  TeeStream tee(log_file, std::cout);
  TrainOutcome outcome = train_model(cfg, data, cfg.out, tee);
  std::printf("train: wrote %s and %s\n", outcome.final_checkpoint.c_str(),
              outcome.best_checkpoint.c_str());
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& ckpt_flag,
             const std::string& split_flag) {
  RunConfig cfg = resolve_config(args);
  Checkpoint ckpt = load_checkpoint_for(cfg, ckpt_flag);
  LoadedDataset data = load_dataset_with_dims(cfg, ckpt);
  const std::string which = !split_flag.empty() ? split_flag : cfg.eval_split;
  MetricsReport report = evaluate(ckpt.params, data.manifest, data.features,
                                  data.split, which, ckpt.config.delta,
                                  cfg.eval_ks);
  const std::string json = metrics_to_json(report);
  std::filesystem::create_directories(cfg.out);
  write_text(cfg.out + "/metrics_" + which + ".json", json);
  if (cfg.eval_curve_csv) {
    ScoreMatrix m = build_score_matrix(ckpt.params, data.manifest,
                                       data.features, data.split, which,
                                       ckpt.config.delta);
    for (std::size_t k : cfg.eval_ks) {
      BiasSweepResult sweep = bias_sweep(m, k);
      write_text(cfg.out + "/curve_" + which + "_k" + std::to_string(k) + ".csv",
                 curve_to_csv(sweep));
    }
  }
  std::fputs(json.c_str(), stdout);
  return 0;
}

int cmd_attention_dump(const CommonArgs& args, const std::string& ckpt_flag,
                       const std::vector<std::string>& sample_ids,
                       bool uniform) {
  RunConfig cfg = resolve_config(args);
  Checkpoint ckpt = load_checkpoint_for(cfg, ckpt_flag);
  LoadedDataset data = load_dataset_with_dims(cfg, ckpt);
  if (sample_ids.empty()) {
    throw ConfigError("attention-dump: pass at least one --sample id");
  }
  const float lambda = uniform ? 0.0f : static_cast<float>(ckpt.config.lambda);
  const float gamma = uniform ? 0.0f : static_cast<float>(ckpt.config.gamma);
  MaskMap masks;
  if (!cfg.data_masks.empty()) masks = load_masks(cfg.data_masks);

  TripletIndex index(data.manifest, data.split.train_ids);
  Rng rng(cfg.seed, 21);
  Tape tape(false);
  std::filesystem::create_directories(cfg.out);

  auto write_grid = [&](const std::string& path, const Tensor& v) {
    std::string text;
    char buf[32];
    for (std::size_t r = 0; r < 7; ++r) {
      for (std::size_t c = 0; c < 7; ++c) {
        std::snprintf(buf, sizeof(buf), "%.6f", v.at(r * 7 + c));
        text += buf;
        text += (c + 1 < 7) ? "," : "\n";
      }
    }
    write_text(path, text);
  };

  for (const std::string& id : sample_ids) {
    TripletSample t;
    try {
      t = index.sample(index.sample_index(id), rng);
    } catch (const MateNotFoundError& e) {
      std::fprintf(stderr, "warning: sample %s: %s\n", id.c_str(), e.what());
      continue;
    }
    auto f = image_encode(tape, ckpt.params, data.features.tensor(id), false, rng);
    auto f_attr = image_encode(
        tape, ckpt.params,
        data.features.tensor(data.manifest.samples[t.attr_mate].id), false, rng);
    auto f_obj = image_encode(
        tape, ckpt.params,
        data.features.tensor(data.manifest.samples[t.obj_mate].id), false, rng);
    auto aan = affinity(tape, f, f_attr, lambda, gamma);
    auto oan = affinity(tape, f, f_obj, lambda, gamma);
    write_grid(cfg.out + "/" + id + "_aan_m.csv", aan.m);
    write_grid(cfg.out + "/" + id + "_aan_m_attr.csv", aan.m_anchor);
    write_grid(cfg.out + "/" + id + "_aan_m_obj_diff.csv", aan.m_diff);
    write_grid(cfg.out + "/" + id + "_oan_m.csv", oan.m);
    write_grid(cfg.out + "/" + id + "_oan_m_obj.csv", oan.m_anchor);
    write_grid(cfg.out + "/" + id + "_oan_m_attr_diff.csv", oan.m_diff);
    if (auto it = masks.find(id); it != masks.end()) {
      const double attr_mass =
          attention_mass_on_mask({aan.m_anchor.values().data(), kPositions},
                                 it->second.attr_blocks);
      const double obj_mass =
          attention_mass_on_mask({oan.m_anchor.values().data(), kPositions},
                                 it->second.obj_blocks);
      std::printf("%s attr_mask_mass %.6f (uniform %.6f) obj_mask_mass %.6f "
                  "(uniform %.6f)\n",
                  id.c_str(), attr_mass,
                  static_cast<double>(it->second.attr_blocks.size()) / 49.0,
                  obj_mass,
                  static_cast<double>(it->second.obj_blocks.size()) / 49.0);
    } else {
      std::printf("%s maps written\n", id.c_str());
    }
  }
  return 0;
}

int cmd_retrieve(const CommonArgs& args, const std::string& ckpt_flag,
                 const std::string& attr, const std::string& obj,
                 std::size_t topn) {
  RunConfig cfg = resolve_config(args);
  Checkpoint ckpt = load_checkpoint_for(cfg, ckpt_flag);
  LoadedDataset data = load_dataset_with_dims(cfg, ckpt);
  auto ranked = retrieve_by_hallucination(
      ckpt.params, data.manifest, data.features, data.split, {attr, obj}, topn,
      ckpt.config.lambda, ckpt.config.gamma, cfg.seed);
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    std::printf("%zu %s %.6f\n", i + 1, ranked[i].first.c_str(),
                ranked[i].second);
  }
  return 0;
}

LoadedDataset load_dataset_with_dims(const RunConfig& cfg, const Checkpoint& ckpt) {
  RunConfig merged = cfg;
  merged.n0 = ckpt.config.n0;  // dataset must match the checkpoint's geometry
  LoadedDataset data = load_dataset(merged, /*need_embeddings=*/false);
  check_checkpoint_dataset(ckpt, data);
  return data;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"compositional zero-shot learning engine"};
  app.require_subcommand(1);

  CommonArgs gen_args, split_args, train_args, eval_args, attn_args, retr_args;
  std::string eval_ckpt, eval_split, attn_ckpt, retr_ckpt;
  std::vector<std::string> attn_samples;
  bool attn_uniform = false;
  std::string retr_attr, retr_obj;
  std::size_t retr_topn = 5;

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  add_common(gen, gen_args);
  CLI::App* bsplit = app.add_subcommand("build-split", "build a CZSL split from a manifest");
  add_common(bsplit, split_args);
  CLI::App* train = app.add_subcommand("train", "train a model");
  add_common(train, train_args);
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval_cmd, eval_args);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint path");
  eval_cmd->add_option("--split", eval_split, "val or test");
  CLI::App* attn = app.add_subcommand("attention-dump", "dump 7x7 affinity maps");
  add_common(attn, attn_args);
  attn->add_option("--checkpoint", attn_ckpt, "checkpoint path");
  attn->add_option("--sample", attn_samples, "sample id (repeatable)");
  attn->add_flag("--uniform", attn_uniform, "debug mode: lambda = gamma = 0");
  CLI::App* retr = app.add_subcommand("retrieve", "hallucinated-pair retrieval");
  add_common(retr, retr_args);
  retr->add_option("--checkpoint", retr_ckpt, "checkpoint path");
  retr->add_option("--attr", retr_attr, "attribute token")->required();
  retr->add_option("--obj", retr_obj, "object token")->required();
  retr->add_option("--topn", retr_topn, "result count");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: config: %s\n", e.what());
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_args);
    if (bsplit->parsed()) return cmd_build_split(split_args);
    if (train->parsed()) return cmd_train(train_args);
    if (eval_cmd->parsed()) return cmd_eval(eval_args, eval_ckpt, eval_split);
    if (attn->parsed())
      return cmd_attention_dump(attn_args, attn_ckpt, attn_samples, attn_uniform);
    if (retr->parsed())
      return cmd_retrieve(retr_args, retr_ckpt, retr_attr, retr_obj, retr_topn);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: config: %s\n", e.what());
    return 2;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: data: %s\n", e.what());
    return 3;
  } catch (const VocabError& e) {
    std::fprintf(stderr, "error: data: %s\n", e.what());
    return 3;
  } catch (const DataError& e) {
    std::fprintf(stderr, "error: data: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: runtime: %s\n", e.what());
    return 4;
  }
  return 0;
}
