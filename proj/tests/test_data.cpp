#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>

#include "oadis/data.hpp"
#include "testutil.hpp"

using namespace oadis;

namespace {

// randomized toy corpus for split-builder property tests
RawManifest random_corpus(Rng& rng, std::size_t attrs, std::size_t objs,
                          std::size_t samples) {
  RawManifest m;
  for (std::size_t i = 0; i < samples; ++i) {
    RawSample s;
    s.id = "r" + std::to_string(i);
    s.obj = "obj" + std::to_string(rng.uniform_index(objs));
    const std::size_t n_attrs = 1 + rng.uniform_index(3);
    std::set<std::string> chosen;
    for (std::size_t k = 0; k < n_attrs; ++k)
      chosen.insert("attr" + std::to_string(rng.uniform_index(attrs)));
    s.attrs.assign(chosen.begin(), chosen.end());
    m.samples.push_back(std::move(s));
  }
  return m;
}

void check_split_invariants(const SplitBuildResult& r,
                            std::size_t min_frequency) {
  const auto& split = r.split;
  std::set<PairLabel> train_pairs(split.train_pairs.begin(),
                                  split.train_pairs.end());
  std::set<PairLabel> unseen;
  for (const auto& p : split.val_unseen_pairs) {
    CHECK(!train_pairs.count(p));
    unseen.insert(p);
  }
  for (const auto& p : split.test_unseen_pairs) {
    CHECK(!train_pairs.count(p));
    unseen.insert(p);
  }
  // unseen-pair primitives must appear in training pairs
  std::set<std::string> train_attrs, train_objs;
  for (const auto& [a, o] : train_pairs) {
    train_attrs.insert(a);
    train_objs.insert(o);
  }
  for (const auto& [a, o] : unseen) {
    CHECK(train_attrs.count(a));
    CHECK(train_objs.count(o));
  }
  // no training sample carries an unseen pair; ids unique across splits
  std::map<std::string, const Sample*> by_id;
  for (const auto& s : r.manifest.samples) by_id[s.id] = &s;
  std::set<std::string> seen_ids;
  for (const auto* ids :
       {&split.train_ids, &split.val_ids, &split.test_ids}) {
    for (const auto& id : *ids) {
      CHECK(seen_ids.insert(id).second);
      CHECK(by_id.count(id));
    }
  }
  for (const auto& id : split.train_ids) {
    const Sample& s = *by_id[id];
    CHECK(train_pairs.count({s.attr, s.obj}));
  }
  // frequency filter holds on the training portion
  std::map<std::string, std::size_t> fa, fo;
  for (const auto& id : split.train_ids) {
    const Sample& s = *by_id[id];
    ++fa[s.attr];
    ++fo[s.obj];
  }
  for (const auto& s : r.manifest.samples) {
    CHECK(fa[s.attr] > min_frequency);
    CHECK(fo[s.obj] > min_frequency);
  }
}

}  // namespace

TEST_CASE("feature container: empty store round-trips") {
  testutil::TempDir dir("feat");
  FeatureStore store;
  store.n0 = 4;
  store.positions = 49;
  save_features(store, dir.file("empty.oadt"));
  auto loaded = load_features(dir.file("empty.oadt"));
  CHECK(loaded.size() == 0);
  CHECK(loaded.n0 == 4);
}

TEST_CASE("feature container: bits survive a write/read cycle") {
  testutil::TempDir dir("feat");
  Rng rng(51);
  FeatureStore store;
  store.n0 = 3;
  store.positions = 49;
  std::vector<float> buf(3 * 49);
  for (int s = 0; s < 5; ++s) {
    for (auto& v : buf) v = static_cast<float>(rng.normal() * 1e-7);
    store.add("sample_" + std::to_string(s), buf);
  }
  save_features(store, dir.file("f.oadt"));
  auto loaded = load_features(dir.file("f.oadt"));
  REQUIRE(loaded.size() == 5);
  CHECK(loaded.ids == store.ids);
  REQUIRE(loaded.data.size() == store.data.size());
  for (std::size_t i = 0; i < store.data.size(); ++i) {
    CHECK(std::memcmp(&loaded.data[i], &store.data[i], 4) == 0);
  }
  CHECK_THROWS_AS(loaded.raw("missing"), VocabError);
}

TEST_CASE("feature container: truncation and bad magic fail closed") {
  testutil::TempDir dir("feat");
  FeatureStore store;
  store.n0 = 2;
  store.positions = 49;
  std::vector<float> buf(2 * 49, 1.0f);
  store.add("a", buf);
  save_features(store, dir.file("f.oadt"));

  auto bytes = testutil::read_file_bytes(dir.file("f.oadt"));
  {
    std::ofstream out(dir.file("trunc.oadt"), std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 7));
  }
  try {
    load_features(dir.file("trunc.oadt"));
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
  }

  bytes[0] = 'X';
  {
    std::ofstream out(dir.file("magic.oadt"), std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_AS(load_features(dir.file("magic.oadt")), FormatError);
}

TEST_CASE("word embeddings: round-trip, ragged line, duplicate, dim checks") {
  testutil::TempDir dir("emb");
  {
    std::ofstream out(dir.file("ok.txt"));
    out << "apple 0.25 -1.5 3\n" << "pear 1 2 0.125\n";
  }
  auto table = load_word_embeddings(dir.file("ok.txt"), 3);
  CHECK(table.dim == 3);
  CHECK(table.lookup("apple")[1] == -1.5f);
  CHECK_THROWS_AS(table.lookup("banana"), VocabError);
  save_word_embeddings(table, dir.file("copy.txt"));
  auto again = load_word_embeddings(dir.file("copy.txt"), 3);
  CHECK(again.vectors == table.vectors);
  CHECK(again.tokens == table.tokens);

  {
    std::ofstream out(dir.file("ragged.txt"));
    out << "a 1 2 3\n" << "b 1 2\n";
  }
  try {
    load_word_embeddings(dir.file("ragged.txt"), 0);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }

  {
    std::ofstream out(dir.file("dup.txt"));
    out << "a 1 2\n" << "a 3 4\n";
  }
  CHECK_THROWS_AS(load_word_embeddings(dir.file("dup.txt"), 0), FormatError);
  CHECK_THROWS_AS(load_word_embeddings(dir.file("ok.txt"), 7), ConfigError);
}

TEST_CASE("manifest: duplicate ids and unknown tokens are data errors") {
  testutil::TempDir dir("man");
  {
    std::ofstream out(dir.file("dup.json"));
    out << R"({"samples":[{"id":"x","attr":"a","obj":"o"},
               {"id":"x","attr":"a","obj":"o"}],
               "attributes":["a"],"objects":["o"]})";
  }
  CHECK_THROWS_AS(load_manifest(dir.file("dup.json")), DataError);
  {
    std::ofstream out(dir.file("unk.json"));
    out << R"({"samples":[{"id":"x","attr":"zzz","obj":"o"}],
               "attributes":["a"],"objects":["o"]})";
  }
  CHECK_THROWS_AS(load_manifest(dir.file("unk.json")), DataError);
  CHECK_THROWS_AS(load_manifest(dir.file("missing.json")), FormatError);
}

TEST_CASE("split builder: defaults, canonicalization and the reduction rule") {
  CHECK(SplitBuildOptions{}.min_frequency == 30);

  RawManifest raw;
  // "wet" is rarer than "red" after synonym folding, so multi-attribute
  // samples keep it
  for (int i = 0; i < 6; ++i) {
    raw.samples.push_back({"a" + std::to_string(i), {"red"}, "car"});
  }
  raw.samples.push_back({"m0", {"red", "wet"}, "car"});
  raw.samples.push_back({"m1", {"crimson", "wet"}, "automobile"});
  for (int i = 0; i < 4; ++i) {
    raw.samples.push_back({"w" + std::to_string(i), {"wet"}, "dog"});
    raw.samples.push_back({"r" + std::to_string(i), {"red"}, "dog"});
  }
  SplitBuildOptions opts;
  opts.min_frequency = 1;
  opts.unseen_fraction = 0.0;
  opts.eval_sample_fraction = 0.0;
  opts.synonyms = {{"crimson", "red"}, {"automobile", "car"}};
  auto result = build_czsl_split(raw, opts);

  std::map<std::string, Sample> by_id;
  for (const auto& s : result.manifest.samples) by_id[s.id] = s;
  CHECK(by_id.at("m0").attr == "wet");   // lowest corpus frequency kept
  CHECK(by_id.at("m1").attr == "wet");
  CHECK(by_id.at("m1").obj == "car");    // synonym canonicalized
  for (const auto& a : result.manifest.attributes) CHECK(a != "crimson");
}

TEST_CASE("split builder: single-pair corpus degenerates with a warning") {
  RawManifest raw;
  for (int i = 0; i < 5; ++i)
    raw.samples.push_back({"s" + std::to_string(i), {"red"}, "car"});
  SplitBuildOptions opts;
  opts.min_frequency = 1;
  opts.unseen_fraction = 0.5;
  auto result = build_czsl_split(raw, opts);
  CHECK(result.split.train_pairs.size() == 1);
  CHECK(result.split.val_unseen_pairs.empty());
  CHECK(result.split.test_unseen_pairs.empty());
  bool warned = false;
  for (const auto& w : result.warnings)
    warned = warned || w.find("degenerate") != std::string::npos;
  CHECK(warned);
}

TEST_CASE("split builder: everything filtered is a degenerate-dataset error") {
  RawManifest raw;
  raw.samples.push_back({"s0", {"a"}, "o"});
  SplitBuildOptions opts;
  opts.min_frequency = 30;
  CHECK_THROWS_AS(build_czsl_split(raw, opts), DegenerateDatasetError);
}

TEST_CASE("split builder: invariants hold on a 10x10 toy corpus") {
  Rng rng(61);
  RawManifest raw = random_corpus(rng, 10, 10, 600);
  SplitBuildOptions opts;
  opts.min_frequency = 2;
  opts.unseen_fraction = 0.3;
  opts.eval_sample_fraction = 0.3;
  opts.seed = 9;
  auto result = build_czsl_split(raw, opts);
  CHECK(!result.split.val_unseen_pairs.empty());
  check_split_invariants(result, opts.min_frequency);
}

TEST_CASE("split builder: property check over random toy corpora") {
  Rng rng(67);
  int built = 0;
  for (int trial = 0; trial < 25; ++trial) {
    RawManifest raw = random_corpus(rng, 3 + rng.uniform_index(6),
                                    3 + rng.uniform_index(6),
                                    150 + rng.uniform_index(250));
    SplitBuildOptions opts;
    opts.min_frequency = rng.uniform_index(3);
    opts.unseen_fraction = 0.15 + 0.3 * rng.uniform();
    opts.eval_sample_fraction = 0.1 + 0.3 * rng.uniform();
    opts.seed = rng.next_u64();
    SplitBuildResult result;
    try {
      result = build_czsl_split(raw, opts);
    } catch (const DegenerateDatasetError&) {
      continue;
    }
    ++built;
    check_split_invariants(result, opts.min_frequency);
  }
  CHECK(built >= 20);
}

TEST_CASE("triplet sampler: forced mates, missing mates, reproducibility") {
  Manifest m;
  m.attributes = {"peeled", "sliced", "lonely"};
  m.objects = {"apple", "orange", "kiwi"};
  m.samples = {{"s0", "peeled", "apple"},
               {"s1", "peeled", "orange"},
               {"s2", "sliced", "apple"},
               {"s3", "lonely", "kiwi"}};
  TripletIndex index(m, {"s0", "s1", "s2", "s3"});

  Rng rng(5);
  auto t = index.sample(0, rng);
  CHECK(t.anchor == 0);
  CHECK(t.attr_mate == 1);
  CHECK(t.obj_mate == 2);

  // s3's attribute and object occur once: no mates on either side
  CHECK_THROWS_AS(index.sample(3, rng), MateNotFoundError);

  // reproducible mate sequence for a fixed seed
  Manifest big;
  big.attributes = {"a0", "a1"};
  big.objects = {"o0", "o1", "o2"};
  std::vector<std::string> ids;
  for (int a = 0; a < 2; ++a)
    for (int o = 0; o < 3; ++o) {
      const std::string id = "b" + std::to_string(a * 3 + o);
      big.samples.push_back({id, "a" + std::to_string(a), "o" + std::to_string(o)});
      ids.push_back(id);
    }
  TripletIndex bindex(big, ids);
  auto run = [&](std::uint64_t seed) {
    Rng r(seed);
    std::vector<std::size_t> picks;
    for (int rep = 0; rep < 10; ++rep) {
      auto trip = bindex.sample(rep % big.samples.size(), r);
      picks.push_back(trip.attr_mate);
      picks.push_back(trip.obj_mate);
    }
    return picks;
  };
  CHECK(run(77) == run(77));
}

TEST_CASE("synthetic: zero noise plants the lifted latent exactly") {
  SyntheticConfig cfg;
  cfg.num_attrs = 3;
  cfg.num_objects = 3;
  cfg.latent_dim = 4;
  cfg.feature_dim = 6;
  cfg.blocks_per_factor = 1;
  cfg.noise = 0.0;
  cfg.samples_per_pair = 2;
  cfg.eval_samples_per_pair = 1;
  cfg.embedding_dim = 5;
  cfg.seed = 11;
  auto ds = generate_synthetic(cfg);

  // all samples with the same attribute share the same lifted column values
  std::map<std::string, std::vector<float>> attr_column;
  for (const auto& s : ds.manifest.samples) {
    const auto& mask = ds.masks.at(s.id);
    REQUIRE(mask.attr_blocks.size() == 1);
    auto raw = ds.features.raw(s.id);
    std::vector<float> col(cfg.feature_dim);
    for (std::size_t i = 0; i < cfg.feature_dim; ++i)
      col[i] = raw[i * 49 + mask.attr_blocks[0]];
    auto [it, inserted] = attr_column.emplace(s.attr, col);
    if (!inserted) CHECK(it->second == col);
    // off-mask columns are exactly zero at noise 0
    std::set<std::size_t> blocks(mask.attr_blocks.begin(), mask.attr_blocks.end());
    blocks.insert(mask.obj_blocks.begin(), mask.obj_blocks.end());
    for (std::size_t j = 0; j < 49; ++j) {
      if (blocks.count(j)) continue;
      for (std::size_t i = 0; i < cfg.feature_dim; ++i)
        CHECK(raw[i * 49 + j] == 0.0f);
    }
  }
}

TEST_CASE("synthetic: same seed gives identical datasets, counts match") {
  SyntheticConfig cfg;
  cfg.num_attrs = 4;
  cfg.num_objects = 5;
  cfg.latent_dim = 3;
  cfg.feature_dim = 4;
  cfg.blocks_per_factor = 2;
  cfg.samples_per_pair = 3;
  cfg.eval_samples_per_pair = 1;
  cfg.embedding_dim = 4;
  cfg.seen_fraction = 0.8;
  cfg.seed = 123;
  auto a = generate_synthetic(cfg);
  auto b = generate_synthetic(cfg);
  CHECK(a.features.data == b.features.data);
  CHECK(a.features.ids == b.features.ids);
  CHECK(a.embeddings.vectors == b.embeddings.vectors);
  CHECK(a.split.train_ids == b.split.train_ids);

  const std::size_t seen = a.split.train_pairs.size();
  CHECK(seen == 16);  // round(0.8 * 20)
  CHECK(a.split.train_ids.size() == seen * cfg.samples_per_pair);
  CHECK(a.split.val_unseen_pairs.size() + a.split.test_unseen_pairs.size() ==
        20 - seen);
  // masks are disjoint and the right size
  for (const auto& [id, mask] : a.masks) {
    CHECK(mask.attr_blocks.size() == 2);
    CHECK(mask.obj_blocks.size() == 2);
    for (auto x : mask.attr_blocks)
      for (auto y : mask.obj_blocks) CHECK(x != y);
  }
  CHECK_THROWS_AS(
      [] {
        SyntheticConfig bad;
        bad.blocks_per_factor = 25;
        generate_synthetic(bad);
      }(),
      ConfigError);
}

TEST_CASE("synthetic: full round-trip through the container formats is bit-exact") {
  testutil::TempDir dir("synth");
  SyntheticConfig cfg;
  cfg.num_attrs = 3;
  cfg.num_objects = 3;
  cfg.latent_dim = 3;
  cfg.feature_dim = 5;
  cfg.blocks_per_factor = 2;
  cfg.samples_per_pair = 2;
  cfg.embedding_dim = 4;
  cfg.seed = 5;
  auto ds = generate_synthetic(cfg);
  save_features(ds.features, dir.file("f.oadt"));
  save_manifest(ds.manifest, dir.file("m.json"));
  save_split(ds.split, dir.file("s.json"));
  save_masks(ds.masks, dir.file("k.json"));

  auto f = load_features(dir.file("f.oadt"));
  CHECK(f.data == ds.features.data);
  auto m = load_manifest(dir.file("m.json"));
  CHECK(m.samples.size() == ds.manifest.samples.size());
  CHECK(m.attributes == ds.manifest.attributes);
  auto s = load_split(dir.file("s.json"));
  CHECK(s.train_pairs == ds.split.train_pairs);
  CHECK(s.val_ids == ds.split.val_ids);
  auto k = load_masks(dir.file("k.json"));
  REQUIRE(k.size() == ds.masks.size());
  for (const auto& [id, mask] : ds.masks) {
    CHECK(k.at(id).attr_blocks == mask.attr_blocks);
    CHECK(k.at(id).obj_blocks == mask.obj_blocks);
  }
}

TEST_CASE("attention_mass_on_mask: uniform share, full mask, empty mask") {
  std::vector<float> uniform(49, 1.0f);
  CHECK(attention_mass_on_mask(uniform, {0, 1, 2}) ==
        doctest::Approx(3.0 / 49.0));
  std::vector<std::size_t> all;
  for (std::size_t i = 0; i < 49; ++i) all.push_back(i);
  CHECK(attention_mass_on_mask(uniform, all) == doctest::Approx(1.0));
  CHECK_THROWS_AS(attention_mass_on_mask(uniform, {}), ContractError);
  CHECK_THROWS_AS(attention_mass_on_mask(uniform, {100}), ContractError);
}
