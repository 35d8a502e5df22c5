#include "oadis/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace oadis {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr std::size_t kGridPositions = 49;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write file: " + path);
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw FormatError("write failed: " + path);
}

json parse_json_file(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

std::string token_name(const char* prefix, std::size_t i, std::size_t count) {
  std::size_t width = 2;
  for (std::size_t c = 100; c < count; c *= 10) ++width;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%0*zu", prefix, static_cast<int>(width), i);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

Manifest load_manifest(const std::string& path) {
  const json j = parse_json_file(path);
  Manifest m;
  try {
    for (const auto& a : j.at("attributes")) m.attributes.push_back(a.get<std::string>());
    for (const auto& o : j.at("objects")) m.objects.push_back(o.get<std::string>());
    for (const auto& s : j.at("samples")) {
      m.samples.push_back({s.at("id").get<std::string>(),
                           s.at("attr").get<std::string>(),
                           s.at("obj").get<std::string>()});
    }
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  std::set<std::string> attrs(m.attributes.begin(), m.attributes.end());
  std::set<std::string> objs(m.objects.begin(), m.objects.end());
  std::set<std::string> ids;
  for (const auto& s : m.samples) {
    if (!ids.insert(s.id).second)
      throw DataError(path + ": duplicate sample id " + s.id);
    if (!attrs.count(s.attr))
      throw DataError(path + ": sample " + s.id + " has unknown attribute " + s.attr);
    if (!objs.count(s.obj))
      throw DataError(path + ": sample " + s.id + " has unknown object " + s.obj);
  }
  return m;
}

void save_manifest(const Manifest& manifest, const std::string& path) {
  ordered_json j;
  j["samples"] = ordered_json::array();
  for (const auto& s : manifest.samples) {
    j["samples"].push_back({{"id", s.id}, {"attr", s.attr}, {"obj", s.obj}});
  }
  j["attributes"] = manifest.attributes;
  j["objects"] = manifest.objects;
  write_file(path, j.dump(2) + "\n");
}

RawManifest load_raw_manifest(const std::string& path) {
  const json j = parse_json_file(path);
  RawManifest m;
  try {
    for (const auto& s : j.at("samples")) {
      RawSample r;
      r.id = s.at("id").get<std::string>();
      r.obj = s.at("obj").get<std::string>();
      if (s.contains("attrs")) {
        for (const auto& a : s.at("attrs")) r.attrs.push_back(a.get<std::string>());
      } else {
        r.attrs.push_back(s.at("attr").get<std::string>());
      }
      if (r.attrs.empty())
        throw DataError(path + ": sample " + r.id + " has no attributes");
      m.samples.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  return m;
}

Vocab Vocab::from_manifest(const Manifest& m) {
  Vocab v;
  v.attrs = m.attributes;
  v.objs = m.objects;
  for (std::size_t i = 0; i < v.attrs.size(); ++i) v.attr_index[v.attrs[i]] = i;
  for (std::size_t i = 0; i < v.objs.size(); ++i) v.obj_index[v.objs[i]] = i;
  return v;
}

std::size_t Vocab::attr_row(const std::string& token) const {
  auto it = attr_index.find(token);
  if (it == attr_index.end())
    throw VocabError("unknown attribute token: " + token);
  return it->second;
}

std::size_t Vocab::obj_row(const std::string& token) const {
  auto it = obj_index.find(token);
  if (it == obj_index.end()) throw VocabError("unknown object token: " + token);
  return attrs.size() + it->second;
}

// ---------------------------------------------------------------------------
// Feature container
// ---------------------------------------------------------------------------

namespace {

class ByteReader {
 public:
  ByteReader(const std::string& bytes, const std::string& path)
      : bytes_(bytes), path_(path) {}

  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(
               static_cast<unsigned char>(bytes_[pos_ + i]))
           << (8 * i);
    pos_ += 4;
    return v;
  }

  std::string str(std::size_t len) {
    need(len, "string");
    std::string s = bytes_.substr(pos_, len);
    pos_ += len;
    return s;
  }

  void f32_block(float* dst, std::size_t count) {
    need(count * 4, "f32 block");
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t v = 0;
      for (int b = 0; b < 4; ++b)
        v |= static_cast<std::uint32_t>(
                 static_cast<unsigned char>(bytes_[pos_ + i * 4 + b]))
             << (8 * b);
      std::memcpy(dst + i, &v, 4);
    }
    pos_ += count * 4;
  }

  std::size_t offset() const { return pos_; }
  bool exhausted() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (pos_ + n > bytes_.size()) {
      throw FormatError(path_ + ": truncated " + what + " at byte offset " +
                        std::to_string(pos_));
    }
  }

  const std::string& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

void append_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void append_f32(std::string& out, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  append_u32(out, v);
}

}  // namespace

std::span<const float> FeatureStore::raw(const std::string& id) const {
  auto it = index.find(id);
  if (it == index.end()) throw VocabError("feature store: unknown sample id " + id);
  const std::size_t stride = n0 * positions;
  return {data.data() + it->second * stride, stride};
}

Tensor FeatureStore::tensor(const std::string& id) const {
  auto r = raw(id);
  return Tensor::from_data({n0, positions}, std::vector<float>(r.begin(), r.end()));
}

void FeatureStore::add(const std::string& id, std::span<const float> values) {
  if (values.size() != n0 * positions) {
    throw ContractError("feature store: sample " + id + " has " +
                        std::to_string(values.size()) + " values, expected " +
                        std::to_string(n0 * positions));
  }
  if (index.count(id)) throw DataError("feature store: duplicate sample id " + id);
  index[id] = ids.size();
  ids.push_back(id);
  data.insert(data.end(), values.begin(), values.end());
}

FeatureStore load_features(const std::string& path) {
  const std::string bytes = read_file(path);
  ByteReader r(bytes, path);
  if (r.str(4) != "OADT")
    throw FormatError(path + ": bad magic at byte offset 0");
  const std::uint32_t version = r.u32();
  if (version != 1)
    throw FormatError(path + ": unsupported container version " +
                      std::to_string(version) + " at byte offset 4");
  const std::uint32_t count = r.u32();
  const std::uint32_t n0 = r.u32();
  const std::uint32_t positions = r.u32();
  if (positions != kGridPositions) {
    throw FormatError(path + ": expected " + std::to_string(kGridPositions) +
                      " spatial positions, got " + std::to_string(positions) +
                      " at byte offset 12");
  }
  if (n0 == 0) throw FormatError(path + ": zero feature dim at byte offset 8");
  FeatureStore store;
  store.n0 = n0;
  store.positions = positions;
  store.data.reserve(static_cast<std::size_t>(count) * n0 * positions);
  std::vector<float> buf(static_cast<std::size_t>(n0) * positions);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t id_len = r.u32();
    const std::string id = r.str(id_len);
    r.f32_block(buf.data(), buf.size());
    store.add(id, buf);
  }
  if (!r.exhausted()) {
    throw FormatError(path + ": trailing bytes at offset " +
                      std::to_string(r.offset()));
  }
  return store;
}

void save_features(const FeatureStore& store, const std::string& path) {
  std::string out;
  out += "OADT";
  append_u32(out, 1);
  append_u32(out, static_cast<std::uint32_t>(store.size()));
  append_u32(out, static_cast<std::uint32_t>(store.n0));
  append_u32(out, static_cast<std::uint32_t>(store.positions));
  const std::size_t stride = store.n0 * store.positions;
  for (std::size_t i = 0; i < store.size(); ++i) {
    append_u32(out, static_cast<std::uint32_t>(store.ids[i].size()));
    out += store.ids[i];
    for (std::size_t k = 0; k < stride; ++k)
      append_f32(out, store.data[i * stride + k]);
  }
  write_file(path, out);
}

// ---------------------------------------------------------------------------
// Word embeddings
// ---------------------------------------------------------------------------

std::span<const float> EmbeddingTable::lookup(const std::string& token) const {
  auto it = index.find(token);
  if (it == index.end()) throw VocabError("unknown embedding token: " + token);
  return {vectors.data() + it->second * dim, dim};
}

void EmbeddingTable::add(const std::string& token, std::span<const float> v) {
  if (dim == 0) dim = v.size();
  if (v.size() != dim)
    throw ContractError("embedding table: dimension mismatch for " + token);
  if (index.count(token))
    throw FormatError("embedding table: duplicate token " + token);
  index[token] = tokens.size();
  tokens.push_back(token);
  vectors.insert(vectors.end(), v.begin(), v.end());
}

EmbeddingTable load_word_embeddings(const std::string& path,
                                    std::size_t expected_dim) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open file: " + path);
  EmbeddingTable table;
  std::string line;
  std::size_t line_no = 0;
  std::vector<float> vec;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string token;
    if (!(ss >> token)) continue;
    vec.clear();
    std::string field;
    while (ss >> field) {
      char* end = nullptr;
      const float v = std::strtof(field.c_str(), &end);
      if (end != field.c_str() + field.size() || !std::isfinite(v)) {
        throw FormatError(path + ": bad number '" + field + "' on line " +
                          std::to_string(line_no));
      }
      vec.push_back(v);
    }
    if (vec.empty()) {
      throw FormatError(path + ": no vector values on line " +
                        std::to_string(line_no));
    }
    if (table.dim != 0 && vec.size() != table.dim) {
      throw FormatError(path + ": ragged line " + std::to_string(line_no) +
                        " (got " + std::to_string(vec.size()) + " values, expected " +
                        std::to_string(table.dim) + ")");
    }
    try {
      table.add(token, vec);
    } catch (const FormatError& e) {
      throw FormatError(path + ": line " + std::to_string(line_no) + ": " +
                        e.what());
    }
  }
  if (expected_dim != 0 && table.dim != expected_dim) {
    throw ConfigError(path + ": embedding dimension " +
                      std::to_string(table.dim) + " does not match configured " +
                      std::to_string(expected_dim));
  }
  return table;
}

void save_word_embeddings(const EmbeddingTable& table, const std::string& path) {
  std::string out;
  char buf[48];
  for (std::size_t i = 0; i < table.tokens.size(); ++i) {
    out += table.tokens[i];
    for (std::size_t k = 0; k < table.dim; ++k) {
      std::snprintf(buf, sizeof(buf), " %.9g", table.vectors[i * table.dim + k]);
      out += buf;
    }
    out += "\n";
  }
  write_file(path, out);
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

namespace {

json pairs_to_json(const std::vector<PairLabel>& pairs) {
  json arr = json::array();
  for (const auto& [a, o] : pairs) arr.push_back(json::array({a, o}));
  return arr;
}

std::vector<PairLabel> pairs_from_json(const json& arr, const std::string& path) {
  std::vector<PairLabel> out;
  for (const auto& p : arr) {
    if (!p.is_array() || p.size() != 2)
      throw FormatError(path + ": pair entries must be [attr, obj] arrays");
    out.emplace_back(p[0].get<std::string>(), p[1].get<std::string>());
  }
  return out;
}

}  // namespace

SplitSpec load_split(const std::string& path) {
  const json j = parse_json_file(path);
  SplitSpec s;
  try {
    s.train_pairs = pairs_from_json(j.at("train_pairs"), path);
    s.val_seen_pairs = pairs_from_json(j.at("val_seen_pairs"), path);
    s.val_unseen_pairs = pairs_from_json(j.at("val_unseen_pairs"), path);
    s.test_seen_pairs = pairs_from_json(j.at("test_seen_pairs"), path);
    s.test_unseen_pairs = pairs_from_json(j.at("test_unseen_pairs"), path);
    s.train_ids = j.at("train_ids").get<std::vector<std::string>>();
    s.val_ids = j.at("val_ids").get<std::vector<std::string>>();
    s.test_ids = j.at("test_ids").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  return s;
}

void save_split(const SplitSpec& split, const std::string& path) {
  ordered_json j;
  j["train_pairs"] = pairs_to_json(split.train_pairs);
  j["val_seen_pairs"] = pairs_to_json(split.val_seen_pairs);
  j["val_unseen_pairs"] = pairs_to_json(split.val_unseen_pairs);
  j["test_seen_pairs"] = pairs_to_json(split.test_seen_pairs);
  j["test_unseen_pairs"] = pairs_to_json(split.test_unseen_pairs);
  j["train_ids"] = split.train_ids;
  j["val_ids"] = split.val_ids;
  j["test_ids"] = split.test_ids;
  write_file(path, j.dump(2) + "\n");
}

namespace {

std::string canonical_token(const std::map<std::string, std::string>& synonyms,
                            std::string token) {
  for (int hops = 0; hops < 10; ++hops) {
    auto it = synonyms.find(token);
    if (it == synonyms.end() || it->second == token) break;
    token = it->second;
  }
  return token;
}

}  // namespace

SplitBuildResult build_czsl_split(const RawManifest& raw,
                                  const SplitBuildOptions& opts) {
  if (opts.unseen_fraction < 0 || opts.unseen_fraction >= 1.0) {
    throw ConfigError("split: unseen_fraction must be in [0,1)");
  }
  SplitBuildResult result;

  // 1. canonicalize tokens and dedupe per-sample attribute lists
  struct Working {
    std::string id;
    std::vector<std::string> attrs;
    std::string obj;
    std::string attr;  // chosen later
  };
  std::vector<Working> samples;
  samples.reserve(raw.samples.size());
  for (const auto& s : raw.samples) {
    Working w;
    w.id = s.id;
    w.obj = canonical_token(opts.synonyms, s.obj);
    std::set<std::string> seen_attrs;
    for (const auto& a : s.attrs) {
      const std::string c = canonical_token(opts.synonyms, a);
      if (seen_attrs.insert(c).second) w.attrs.push_back(c);
    }
    samples.push_back(std::move(w));
  }

  // 2. keep the lowest-frequency attribute per sample (ties: lexicographic)
  std::map<std::string, std::size_t> attr_freq;
  for (const auto& s : samples) {
    for (const auto& a : s.attrs) ++attr_freq[a];
  }
  for (auto& s : samples) {
    std::string best = s.attrs[0];
    for (const auto& a : s.attrs) {
      if (attr_freq[a] < attr_freq[best] ||
          (attr_freq[a] == attr_freq[best] && a < best)) {
        best = a;
      }
    }
    s.attr = best;
  }

  // 3. drop rare primitives (corpus level), iterating to a fixed point
  for (bool changed = true; changed;) {
    changed = false;
    std::map<std::string, std::size_t> fa, fo;
    for (const auto& s : samples) {
      ++fa[s.attr];
      ++fo[s.obj];
    }
    std::vector<Working> kept;
    kept.reserve(samples.size());
    for (auto& s : samples) {
      if (fa[s.attr] > opts.min_frequency && fo[s.obj] > opts.min_frequency) {
        kept.push_back(std::move(s));
      } else {
        changed = true;
      }
    }
    samples = std::move(kept);
  }
  if (samples.empty()) {
    throw DegenerateDatasetError(
        "split: no samples survive the frequency filter");
  }

  // 4. partition pairs into train-seen and held-out (val/test unseen)
  std::map<PairLabel, std::vector<std::size_t>> by_pair;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    by_pair[{samples[i].attr, samples[i].obj}].push_back(i);
  }
  std::vector<PairLabel> all_pairs;
  for (const auto& [p, _] : by_pair) all_pairs.push_back(p);

  Rng pair_rng(opts.seed, 101);
  std::vector<PairLabel> shuffled = all_pairs;
  pair_rng.shuffle(shuffled);
  std::size_t heldout =
      static_cast<std::size_t>(std::llround(opts.unseen_fraction *
                                            static_cast<double>(all_pairs.size())));
  if (heldout >= all_pairs.size()) heldout = all_pairs.size() - 1;
  if (heldout == 0) {
    result.warnings.push_back(
        "degenerate split: no held-out pairs (dataset too small)");
  }
  std::set<PairLabel> val_unseen, test_unseen;
  const std::size_t val_count = static_cast<std::size_t>(
      std::llround(opts.val_fraction * static_cast<double>(heldout)));
  for (std::size_t i = 0; i < heldout; ++i) {
    if (i < val_count) {
      val_unseen.insert(shuffled[i]);
    } else {
      test_unseen.insert(shuffled[i]);
    }
  }

  // 5. sample-level partition; seen pairs keep most samples for training and
  // send a slice to val/test so evaluation has seen rows
  enum SplitTag { kTrain, kVal, kTest };
  std::vector<SplitTag> tag(samples.size(), kTrain);
  Rng sample_rng(opts.seed, 102);
  for (auto& [pair, members] : by_pair) {
    if (val_unseen.count(pair)) {
      for (std::size_t i : members) tag[i] = kVal;
    } else if (test_unseen.count(pair)) {
      for (std::size_t i : members) tag[i] = kTest;
    } else {
      std::vector<std::size_t> order = members;
      sample_rng.shuffle(order);
      std::size_t eval_count = static_cast<std::size_t>(
          opts.eval_sample_fraction * static_cast<double>(order.size()));
      if (eval_count >= order.size()) eval_count = order.size() - 1;
      for (std::size_t k = 0; k < eval_count; ++k) {
        tag[order[k]] = (k % 2 == 0) ? kVal : kTest;
      }
    }
  }

  // 6. prune to a fixed point: every surviving primitive must occur in a
  // training pair and clear min_frequency within the training portion
  std::vector<char> alive(samples.size(), 1);
  for (bool changed = true; changed;) {
    changed = false;
    std::map<std::string, std::size_t> train_attr, train_obj;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (alive[i] && tag[i] == kTrain) {
        ++train_attr[samples[i].attr];
        ++train_obj[samples[i].obj];
      }
    }
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (!alive[i]) continue;
      const bool attr_ok = train_attr[samples[i].attr] > opts.min_frequency;
      const bool obj_ok = train_obj[samples[i].obj] > opts.min_frequency;
      if (!attr_ok || !obj_ok) {
        alive[i] = 0;
        changed = true;
      }
    }
  }

  std::size_t train_count = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (alive[i] && tag[i] == kTrain) ++train_count;
  }
  if (train_count == 0) {
    throw DegenerateDatasetError("split: training set is empty after pruning");
  }

  // 7. assemble results
  std::set<PairLabel> train_pairs, val_seen, test_seen, val_un, test_un;
  std::set<std::string> attr_set, obj_set;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!alive[i]) continue;
    const auto& s = samples[i];
    const PairLabel p{s.attr, s.obj};
    result.manifest.samples.push_back({s.id, s.attr, s.obj});
    attr_set.insert(s.attr);
    obj_set.insert(s.obj);
    switch (tag[i]) {
      case kTrain:
        train_pairs.insert(p);
        result.split.train_ids.push_back(s.id);
        break;
      case kVal:
        result.split.val_ids.push_back(s.id);
        break;
      case kTest:
        result.split.test_ids.push_back(s.id);
        break;
    }
  }
  auto classify_eval = [&](SplitTag t, std::set<PairLabel>& seen,
                           std::set<PairLabel>& unseen) {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (!alive[i] || tag[i] != t) continue;
      const PairLabel p{samples[i].attr, samples[i].obj};
      if (train_pairs.count(p)) {
        seen.insert(p);
      } else {
        unseen.insert(p);
      }
    }
  };
  classify_eval(kVal, val_seen, val_un);
  classify_eval(kTest, test_seen, test_un);

  result.split.train_pairs.assign(train_pairs.begin(), train_pairs.end());
  result.split.val_seen_pairs.assign(val_seen.begin(), val_seen.end());
  result.split.val_unseen_pairs.assign(val_un.begin(), val_un.end());
  result.split.test_seen_pairs.assign(test_seen.begin(), test_seen.end());
  result.split.test_unseen_pairs.assign(test_un.begin(), test_un.end());
  result.manifest.attributes.assign(attr_set.begin(), attr_set.end());
  result.manifest.objects.assign(obj_set.begin(), obj_set.end());

  if (val_un.empty() && test_un.empty()) {
    result.warnings.push_back("degenerate split: no unseen pairs survive");
  }
  return result;
}

// ---------------------------------------------------------------------------
// Triplet sampling
// ---------------------------------------------------------------------------

TripletIndex::TripletIndex(const Manifest& manifest,
                           const std::vector<std::string>& train_ids)
    : manifest_(&manifest) {
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
    id_to_index_[manifest.samples[i].id] = i;
  }
  for (const auto& id : train_ids) {
    auto it = id_to_index_.find(id);
    if (it == id_to_index_.end())
      throw DataError("triplet index: train id not in manifest: " + id);
    const auto& s = manifest.samples[it->second];
    by_attr_[s.attr].push_back(it->second);
    by_obj_[s.obj].push_back(it->second);
  }
}

std::size_t TripletIndex::sample_index(const std::string& id) const {
  auto it = id_to_index_.find(id);
  if (it == id_to_index_.end())
    throw VocabError("triplet index: unknown sample id " + id);
  return it->second;
}

TripletSample TripletIndex::sample(std::size_t anchor_index, Rng& rng) const {
  const auto& anchor = manifest_->samples.at(anchor_index);
  std::vector<std::size_t> attr_mates;
  if (auto it = by_attr_.find(anchor.attr); it != by_attr_.end()) {
    for (std::size_t i : it->second) {
      if (manifest_->samples[i].obj != anchor.obj) attr_mates.push_back(i);
    }
  }
  if (attr_mates.empty()) {
    throw MateNotFoundError("no attribute mate for sample " + anchor.id +
                            " (attr=" + anchor.attr + ")");
  }
  std::vector<std::size_t> obj_mates;
  if (auto it = by_obj_.find(anchor.obj); it != by_obj_.end()) {
    for (std::size_t i : it->second) {
      if (manifest_->samples[i].attr != anchor.attr) obj_mates.push_back(i);
    }
  }
  if (obj_mates.empty()) {
    throw MateNotFoundError("no object mate for sample " + anchor.id +
                            " (obj=" + anchor.obj + ")");
  }
  // canonical order: a draw depends on the rng state only, not on the order
  // the training ids were listed in
  std::sort(attr_mates.begin(), attr_mates.end());
  std::sort(obj_mates.begin(), obj_mates.end());
  TripletSample t;
  t.anchor = anchor_index;
  t.attr_mate = attr_mates[rng.uniform_index(attr_mates.size())];
  t.obj_mate = obj_mates[rng.uniform_index(obj_mates.size())];
  return t;
}

// ---------------------------------------------------------------------------
// Synthetic benchmark
// ---------------------------------------------------------------------------

MaskMap load_masks(const std::string& path) {
  const json j = parse_json_file(path);
  MaskMap masks;
  try {
    for (const auto& [id, entry] : j.items()) {
      SampleMask m;
      for (const auto& b : entry.at("attr_blocks"))
        m.attr_blocks.push_back(b.get<std::size_t>());
      for (const auto& b : entry.at("obj_blocks"))
        m.obj_blocks.push_back(b.get<std::size_t>());
      masks[id] = std::move(m);
    }
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  return masks;
}

void save_masks(const MaskMap& masks, const std::string& path) {
  ordered_json j = ordered_json::object();
  for (const auto& [id, m] : masks) {
    j[id] = {{"attr_blocks", m.attr_blocks}, {"obj_blocks", m.obj_blocks}};
  }
  write_file(path, j.dump(2) + "\n");
}

namespace {

void validate_synthetic_config(const SyntheticConfig& cfg) {
  if (cfg.num_attrs == 0 || cfg.num_objects == 0)
    throw ConfigError("synthetic: need at least one attribute and one object");
  if (cfg.latent_dim == 0 || cfg.feature_dim == 0 || cfg.embedding_dim == 0)
    throw ConfigError("synthetic: dimensions must be positive");
  if (cfg.blocks_per_factor == 0 ||
      cfg.blocks_per_factor * 2 > kGridPositions) {
    throw ConfigError("synthetic: blocks_per_factor must satisfy 2*b <= " +
                      std::to_string(kGridPositions));
  }
  if (!(cfg.seen_fraction > 0.0 && cfg.seen_fraction <= 1.0))
    throw ConfigError("synthetic: seen_fraction must be in (0,1]");
  if (cfg.samples_per_pair == 0)
    throw ConfigError("synthetic: samples_per_pair must be positive");
  if (cfg.noise < 0) throw ConfigError("synthetic: noise must be non-negative");
}

std::vector<float> unit_normal_vector(std::size_t dim, Rng& rng) {
  std::vector<float> v(dim);
  double sq = 0;
  for (auto& x : v) {
    x = static_cast<float>(rng.normal());
    sq += static_cast<double>(x) * x;
  }
  const float inv = static_cast<float>(1.0 / std::sqrt(std::max(sq, 1e-30)));
  for (auto& x : v) x *= inv;
  return v;
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticConfig& cfg) {
  validate_synthetic_config(cfg);
  SyntheticDataset ds;

  std::vector<std::string> attr_tokens, obj_tokens;
  for (std::size_t i = 0; i < cfg.num_attrs; ++i)
    attr_tokens.push_back(token_name("a", i, cfg.num_attrs));
  for (std::size_t i = 0; i < cfg.num_objects; ++i)
    obj_tokens.push_back(token_name("o", i, cfg.num_objects));

  // latent factors and the fixed lifting projection
  Rng latent_rng(cfg.seed, 1);
  std::vector<std::vector<float>> attr_latent, obj_latent;
  for (std::size_t i = 0; i < cfg.num_attrs; ++i)
    attr_latent.push_back(unit_normal_vector(cfg.latent_dim, latent_rng));
  for (std::size_t i = 0; i < cfg.num_objects; ++i)
    obj_latent.push_back(unit_normal_vector(cfg.latent_dim, latent_rng));

  Rng proj_rng(cfg.seed, 2);
  std::vector<float> proj(cfg.feature_dim * cfg.latent_dim);
  const float proj_scale =
      static_cast<float>(1.0 / std::sqrt(static_cast<double>(cfg.latent_dim)));
  for (auto& p : proj) p = static_cast<float>(proj_rng.normal()) * proj_scale;
  auto lift = [&](const std::vector<float>& latent) {
    std::vector<float> out(cfg.feature_dim, 0.0f);
    for (std::size_t i = 0; i < cfg.feature_dim; ++i) {
      float acc = 0;
      for (std::size_t k = 0; k < cfg.latent_dim; ++k)
        acc += proj[i * cfg.latent_dim + k] * latent[k];
      out[i] = acc;
    }
    return out;
  };
  std::vector<std::vector<float>> attr_lifted, obj_lifted;
  for (const auto& l : attr_latent) attr_lifted.push_back(lift(l));
  for (const auto& l : obj_latent) obj_lifted.push_back(lift(l));

  // pair partition
  const std::size_t total_pairs = cfg.num_attrs * cfg.num_objects;
  std::vector<std::size_t> pair_order(total_pairs);
  for (std::size_t i = 0; i < total_pairs; ++i) pair_order[i] = i;
  Rng pair_rng(cfg.seed, 3);
  pair_rng.shuffle(pair_order);
  std::size_t seen_count = static_cast<std::size_t>(
      std::llround(cfg.seen_fraction * static_cast<double>(total_pairs)));
  seen_count = std::min(std::max<std::size_t>(seen_count, 1), total_pairs);
  // 0 = seen, 1 = val-unseen, 2 = test-unseen
  std::vector<int> pair_role(total_pairs, 0);
  for (std::size_t i = seen_count; i < total_pairs; ++i) {
    pair_role[pair_order[i]] = ((i - seen_count) % 2 == 0) ? 1 : 2;
  }

  ds.features.n0 = cfg.feature_dim;
  ds.features.positions = kGridPositions;
  ds.manifest.attributes = attr_tokens;
  ds.manifest.objects = obj_tokens;

  Rng sample_rng(cfg.seed, 4);
  std::vector<std::size_t> all_positions(kGridPositions);
  for (std::size_t i = 0; i < kGridPositions; ++i) all_positions[i] = i;
  std::vector<float> feature(cfg.feature_dim * kGridPositions);

  auto emit_sample = [&](std::size_t a, std::size_t o, std::size_t k,
                         int split_tag) {
    const std::string id =
        attr_tokens[a] + "_" + obj_tokens[o] + "_" + std::to_string(k);
    // disjoint random block sets
    std::vector<std::size_t> order = all_positions;
    sample_rng.shuffle(order);
    SampleMask mask;
    mask.attr_blocks.assign(order.begin(), order.begin() + cfg.blocks_per_factor);
    mask.obj_blocks.assign(order.begin() + cfg.blocks_per_factor,
                           order.begin() + 2 * cfg.blocks_per_factor);
    std::sort(mask.attr_blocks.begin(), mask.attr_blocks.end());
    std::sort(mask.obj_blocks.begin(), mask.obj_blocks.end());
    // column j = planted latent (if masked) + noise
    const float noise = static_cast<float>(cfg.noise);
    for (std::size_t j = 0; j < kGridPositions; ++j) {
      for (std::size_t i = 0; i < cfg.feature_dim; ++i) {
        feature[i * kGridPositions + j] =
            noise * static_cast<float>(sample_rng.normal());
      }
    }
    for (std::size_t j : mask.attr_blocks) {
      for (std::size_t i = 0; i < cfg.feature_dim; ++i)
        feature[i * kGridPositions + j] += attr_lifted[a][i];
    }
    for (std::size_t j : mask.obj_blocks) {
      for (std::size_t i = 0; i < cfg.feature_dim; ++i)
        feature[i * kGridPositions + j] += obj_lifted[o][i];
    }
    ds.features.add(id, feature);
    ds.manifest.samples.push_back({id, attr_tokens[a], obj_tokens[o]});
    ds.masks[id] = mask;
    switch (split_tag) {
      case 0: ds.split.train_ids.push_back(id); break;
      case 1: ds.split.val_ids.push_back(id); break;
      case 2: ds.split.test_ids.push_back(id); break;
    }
  };

  for (std::size_t a = 0; a < cfg.num_attrs; ++a) {
    for (std::size_t o = 0; o < cfg.num_objects; ++o) {
      const std::size_t pair_idx = a * cfg.num_objects + o;
      const int role = pair_role[pair_idx];
      const PairLabel pair{attr_tokens[a], obj_tokens[o]};
      std::size_t k = 0;
      if (role == 0) {
        ds.split.train_pairs.push_back(pair);
        ds.split.val_seen_pairs.push_back(pair);
        ds.split.test_seen_pairs.push_back(pair);
        for (std::size_t s = 0; s < cfg.samples_per_pair; ++s)
          emit_sample(a, o, k++, 0);
        for (std::size_t s = 0; s < cfg.eval_samples_per_pair; ++s)
          emit_sample(a, o, k++, 1);
        for (std::size_t s = 0; s < cfg.eval_samples_per_pair; ++s)
          emit_sample(a, o, k++, 2);
      } else {
        if (role == 1) {
          ds.split.val_unseen_pairs.push_back(pair);
        } else {
          ds.split.test_unseen_pairs.push_back(pair);
        }
        for (std::size_t s = 0; s < cfg.samples_per_pair; ++s)
          emit_sample(a, o, k++, role);
      }
    }
  }

  // random unit word vectors; the model's own training aligns visuals to them
  Rng emb_rng(cfg.seed, 5);
  for (const auto& t : attr_tokens)
    ds.embeddings.add(t, unit_normal_vector(cfg.embedding_dim, emb_rng));
  for (const auto& t : obj_tokens)
    ds.embeddings.add(t, unit_normal_vector(cfg.embedding_dim, emb_rng));

  return ds;
}

double attention_mass_on_mask(std::span<const float> weights,
                              const std::vector<std::size_t>& mask) {
  if (mask.empty()) throw ContractError("attention_mass_on_mask: empty mask");
  double total = 0;
  for (float w : weights) total += w;
  if (!(total > 0)) {
    throw ContractError("attention_mass_on_mask: non-positive total mass");
  }
  double on_mask = 0;
  for (std::size_t j : mask) {
    if (j >= weights.size()) {
      throw ContractError("attention_mass_on_mask: block index " +
                          std::to_string(j) + " out of range");
    }
    on_mask += weights[j];
  }
  return on_mask / total;
}

}  // namespace oadis
