#include "oadis/config.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace oadis {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& value) {
  char* end = nullptr;
  const double v = std::strtod(value.c_str(), &end);
  if (end != value.c_str() + value.size() || value.empty() || !std::isfinite(v)) {
    throw ConfigError("config: bad numeric value for " + key + ": '" + value + "'");
  }
  return v;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  char* end = nullptr;
  const unsigned long long v = std::strtoull(value.c_str(), &end, 10);
  if (end != value.c_str() + value.size() || value.empty()) {
    throw ConfigError("config: bad integer value for " + key + ": '" + value + "'");
  }
  return v;
}

std::vector<std::size_t> parse_size_list(const std::string& key,
                                         const std::string& value) {
  std::vector<std::size_t> out;
  if (trim(value).empty()) return out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    out.push_back(static_cast<std::size_t>(parse_u64(key, trim(item))));
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_size_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

}  // namespace

std::map<std::string, std::string> parse_kv_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: line " + std::to_string(line_no) +
                        " is not key=value: '" + t + "'");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config: empty key on line " + std::to_string(line_no));
    }
    if (kv.count(key)) {
      throw ConfigError("config: duplicate key " + key + " on line " +
                        std::to_string(line_no));
    }
    kv[key] = value;
  }
  return kv;
}

std::string serialize_kv(const std::map<std::string, std::string>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

std::map<std::string, std::string> RunConfig::to_kv() const {
  std::map<std::string, std::string> kv;
  kv["data.features"] = data_features;
  kv["data.manifest"] = data_manifest;
  kv["data.split"] = data_split;
  kv["data.embeddings"] = data_embeddings;
  kv["data.masks"] = data_masks;
  kv["data.synonyms"] = data_synonyms;
  kv["model.n0"] = std::to_string(n0);
  kv["model.n"] = std::to_string(n);
  kv["model.d_emb"] = std::to_string(d_emb);
  kv["model.d_w"] = std::to_string(d_w);
  kv["model.lambda"] = fmt_double(lambda);
  kv["model.gamma"] = fmt_double(gamma);
  kv["model.delta"] = fmt_double(delta);
  kv["model.ocn_variant"] = ocn_variant;
  kv["model.ie_dropout"] = fmt_double(ie_dropout);
  kv["model.head_dropout"] = fmt_double(head_dropout);
  kv["model.ocn_dropout"] = fmt_double(ocn_dropout);
  kv["loss.alpha1"] = fmt_double(alpha1);
  kv["loss.alpha2"] = fmt_double(alpha2);
  kv["loss.alpha3"] = fmt_double(alpha3);
  kv["loss.alpha4"] = fmt_double(alpha4);
  kv["loss.unseen_anchors"] = unseen_anchors;
  kv["train.lr"] = fmt_double(lr);
  kv["train.embedding_lr"] = fmt_double(embedding_lr);
  kv["train.weight_decay"] = fmt_double(weight_decay);
  kv["train.beta1"] = fmt_double(beta1);
  kv["train.beta2"] = fmt_double(beta2);
  kv["train.epsilon"] = fmt_double(epsilon);
  kv["train.epochs"] = std::to_string(epochs);
  kv["train.lr_decay_epochs"] = fmt_size_list(lr_decay_epochs);
  kv["train.lr_decay_factor"] = fmt_double(lr_decay_factor);
  kv["train.max_skip_fraction"] = fmt_double(max_skip_fraction);
  kv["seed"] = std::to_string(seed);
  kv["out"] = out;
  kv["checkpoint"] = checkpoint;
  kv["synth.attrs"] = std::to_string(synth_attrs);
  kv["synth.objects"] = std::to_string(synth_objects);
  kv["synth.latent_dim"] = std::to_string(synth_latent_dim);
  kv["synth.feature_dim"] = std::to_string(synth_feature_dim);
  kv["synth.blocks_per_factor"] = std::to_string(synth_blocks_per_factor);
  kv["synth.noise"] = fmt_double(synth_noise);
  kv["synth.seen_fraction"] = fmt_double(synth_seen_fraction);
  kv["synth.samples_per_pair"] = std::to_string(synth_samples_per_pair);
  kv["synth.eval_samples_per_pair"] = std::to_string(synth_eval_samples_per_pair);
  kv["split.min_frequency"] = std::to_string(split_min_frequency);
  kv["split.unseen_fraction"] = fmt_double(split_unseen_fraction);
  kv["split.val_fraction"] = fmt_double(split_val_fraction);
  kv["split.eval_sample_fraction"] = fmt_double(split_eval_sample_fraction);
  kv["eval.split"] = eval_split;
  kv["eval.ks"] = fmt_size_list(eval_ks);
  kv["eval.curve_csv"] = eval_curve_csv ? "1" : "0";
  return kv;
}

RunConfig RunConfig::from_kv(const std::map<std::string, std::string>& kv) {
  RunConfig cfg;
  for (const auto& [key, value] : kv) {
    if (key == "data.features") cfg.data_features = value;
    else if (key == "data.manifest") cfg.data_manifest = value;
    else if (key == "data.split") cfg.data_split = value;
    else if (key == "data.embeddings") cfg.data_embeddings = value;
    else if (key == "data.masks") cfg.data_masks = value;
    else if (key == "data.synonyms") cfg.data_synonyms = value;
    else if (key == "model.n0") cfg.n0 = parse_u64(key, value);
    else if (key == "model.n") cfg.n = parse_u64(key, value);
    else if (key == "model.d_emb") cfg.d_emb = parse_u64(key, value);
    else if (key == "model.d_w") cfg.d_w = parse_u64(key, value);
    else if (key == "model.lambda") cfg.lambda = parse_double(key, value);
    else if (key == "model.gamma") cfg.gamma = parse_double(key, value);
    else if (key == "model.delta") cfg.delta = parse_double(key, value);
    else if (key == "model.ocn_variant") cfg.ocn_variant = value;
    else if (key == "model.ie_dropout") cfg.ie_dropout = parse_double(key, value);
    else if (key == "model.head_dropout") cfg.head_dropout = parse_double(key, value);
    else if (key == "model.ocn_dropout") cfg.ocn_dropout = parse_double(key, value);
    else if (key == "loss.alpha1") cfg.alpha1 = parse_double(key, value);
    else if (key == "loss.alpha2") cfg.alpha2 = parse_double(key, value);
    else if (key == "loss.alpha3") cfg.alpha3 = parse_double(key, value);
    else if (key == "loss.alpha4") cfg.alpha4 = parse_double(key, value);
    else if (key == "loss.unseen_anchors") cfg.unseen_anchors = value;
    else if (key == "train.lr") cfg.lr = parse_double(key, value);
    else if (key == "train.embedding_lr") cfg.embedding_lr = parse_double(key, value);
    else if (key == "train.weight_decay") cfg.weight_decay = parse_double(key, value);
    else if (key == "train.beta1") cfg.beta1 = parse_double(key, value);
    else if (key == "train.beta2") cfg.beta2 = parse_double(key, value);
    else if (key == "train.epsilon") cfg.epsilon = parse_double(key, value);
    else if (key == "train.epochs") cfg.epochs = parse_u64(key, value);
    else if (key == "train.lr_decay_epochs") cfg.lr_decay_epochs = parse_size_list(key, value);
    else if (key == "train.lr_decay_factor") cfg.lr_decay_factor = parse_double(key, value);
    else if (key == "train.max_skip_fraction") cfg.max_skip_fraction = parse_double(key, value);
    else if (key == "seed") cfg.seed = parse_u64(key, value);
    else if (key == "out") cfg.out = value;
    else if (key == "checkpoint") cfg.checkpoint = value;
    else if (key == "synth.attrs") cfg.synth_attrs = parse_u64(key, value);
    else if (key == "synth.objects") cfg.synth_objects = parse_u64(key, value);
    else if (key == "synth.latent_dim") cfg.synth_latent_dim = parse_u64(key, value);
    else if (key == "synth.feature_dim") cfg.synth_feature_dim = parse_u64(key, value);
    else if (key == "synth.blocks_per_factor") cfg.synth_blocks_per_factor = parse_u64(key, value);
    else if (key == "synth.noise") cfg.synth_noise = parse_double(key, value);
    else if (key == "synth.seen_fraction") cfg.synth_seen_fraction = parse_double(key, value);
    else if (key == "synth.samples_per_pair") cfg.synth_samples_per_pair = parse_u64(key, value);
    else if (key == "synth.eval_samples_per_pair") cfg.synth_eval_samples_per_pair = parse_u64(key, value);
    else if (key == "split.min_frequency") cfg.split_min_frequency = parse_u64(key, value);
    else if (key == "split.unseen_fraction") cfg.split_unseen_fraction = parse_double(key, value);
    else if (key == "split.val_fraction") cfg.split_val_fraction = parse_double(key, value);
    else if (key == "split.eval_sample_fraction") cfg.split_eval_sample_fraction = parse_double(key, value);
    else if (key == "eval.split") cfg.eval_split = value;
    else if (key == "eval.ks") cfg.eval_ks = parse_size_list(key, value);
    else if (key == "eval.curve_csv") cfg.eval_curve_csv = (value == "1" || value == "true");
    else throw ConfigError("config: unknown key " + key);
  }
  cfg.validate();
  return cfg;
}

void RunConfig::validate() const {
  if (n0 == 0 || n == 0 || d_emb == 0 || d_w == 0) {
    throw ConfigError("config: model dimensions must be positive");
  }
  if (delta <= 0) throw ConfigError("config: model.delta must be positive");
  if (lambda < 0 || gamma < 0) {
    throw ConfigError("config: temperatures must be non-negative");
  }
  for (double p : {ie_dropout, head_dropout, ocn_dropout}) {
    if (p < 0 || p >= 1) throw ConfigError("config: dropout must be in [0,1)");
  }
  for (double a : {alpha1, alpha2, alpha3, alpha4}) {
    if (a < 0) throw ConfigError("config: loss weights must be non-negative");
  }
  if (unseen_anchors != "seen_plus_target" && unseen_anchors != "full_vocab") {
    throw ConfigError("config: loss.unseen_anchors must be seen_plus_target or full_vocab");
  }
  if (ocn_variant != "linear" && ocn_variant != "mlp" &&
      ocn_variant != "object_conditioned") {
    throw ConfigError("config: unknown model.ocn_variant " + ocn_variant);
  }
  if (eval_split != "val" && eval_split != "test") {
    throw ConfigError("config: eval.split must be val or test");
  }
  if (eval_ks.empty()) throw ConfigError("config: eval.ks must be non-empty");
  for (std::size_t k : eval_ks) {
    if (k == 0) throw ConfigError("config: eval.ks entries must be positive");
  }
  if (lr <= 0 || embedding_lr <= 0) {
    throw ConfigError("config: learning rates must be positive");
  }
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
    throw ConfigError("config: adam betas must be in [0,1)");
  }
  if (epsilon <= 0) throw ConfigError("config: train.epsilon must be positive");
  if (weight_decay < 0) throw ConfigError("config: weight decay must be non-negative");
  if (lr_decay_factor <= 0 || lr_decay_factor > 1) {
    throw ConfigError("config: train.lr_decay_factor must be in (0,1]");
  }
  if (max_skip_fraction < 0 || max_skip_fraction > 1) {
    throw ConfigError("config: train.max_skip_fraction must be in [0,1]");
  }
  if (!(split_unseen_fraction >= 0 && split_unseen_fraction < 1) ||
      !(split_val_fraction >= 0 && split_val_fraction <= 1) ||
      !(split_eval_sample_fraction >= 0 && split_eval_sample_fraction < 1)) {
    throw ConfigError("config: split fractions out of range");
  }
}

void RunConfig::validate_for_training() const {
  validate();
  if (lambda <= 0 || gamma <= 0) {
    throw ConfigError(
        "config: training requires positive lambda and gamma "
        "(0 is a test-utility debug mode)");
  }
  if (d_emb != d_w) {
    throw ConfigError(
        "config: attribute/object spaces compare projected visuals against "
        "raw word vectors, so model.d_emb must equal model.d_w");
  }
  if (epochs == 0) throw ConfigError("config: train.epochs must be positive");
}

RunConfig parse_config_text(const std::string& text) {
  return RunConfig::from_kv(parse_kv_text(text));
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string serialize_config(const RunConfig& cfg) {
  return serialize_kv(cfg.to_kv());
}

}  // namespace oadis
