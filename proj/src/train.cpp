#include "oadis/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>

#include "oadis/adam.hpp"
#include "oadis/checkpoint.hpp"
#include "oadis/eval.hpp"
#include "oadis/losses.hpp"
#include "oadis/ops.hpp"

namespace oadis {

LoadedDataset load_dataset(const RunConfig& cfg, bool need_embeddings) {
  LoadedDataset d;
  if (cfg.data_manifest.empty() || cfg.data_features.empty() ||
      cfg.data_split.empty()) {
    throw ConfigError(
        "config: data.manifest, data.features and data.split are required");
  }
  d.manifest = load_manifest(cfg.data_manifest);
  d.features = load_features(cfg.data_features);
  d.split = load_split(cfg.data_split);
  d.vocab = Vocab::from_manifest(d.manifest);
  if (d.features.n0 != cfg.n0) {
    throw ConfigError("config: model.n0=" + std::to_string(cfg.n0) +
                      " but feature container has n0=" +
                      std::to_string(d.features.n0));
  }
  for (const auto& s : d.manifest.samples) {
    if (!d.features.contains(s.id)) {
      throw DataError("dataset: sample " + s.id + " has no stored features");
    }
  }
  if (need_embeddings) {
    if (cfg.data_embeddings.empty()) {
      throw ConfigError("config: data.embeddings is required for training");
    }
    d.embeddings = load_word_embeddings(cfg.data_embeddings, cfg.d_w);
  }
  return d;
}

ModelParams make_model(const RunConfig& cfg, const Vocab& vocab,
                       const EmbeddingTable& embeddings) {
  ModelDims dims{cfg.n0, cfg.n, cfg.d_emb, cfg.d_w};
  Rng init_rng(cfg.seed, 0);
  ModelParams params = make_model_params<float>(
      dims, ocn_variant_from_string(cfg.ocn_variant), vocab.size(), init_rng);
  params.ie_dropout = static_cast<float>(cfg.ie_dropout);
  params.head_dropout = static_cast<float>(cfg.head_dropout);
  params.ocn_dropout = static_cast<float>(cfg.ocn_dropout);
  for (std::size_t i = 0; i < vocab.attrs.size(); ++i) {
    auto v = embeddings.lookup(vocab.attrs[i]);
    for (std::size_t k = 0; k < cfg.d_w; ++k)
      params.word_table.at(i, k) = v[k];
  }
  for (std::size_t i = 0; i < vocab.objs.size(); ++i) {
    auto v = embeddings.lookup(vocab.objs[i]);
    for (std::size_t k = 0; k < cfg.d_w; ++k)
      params.word_table.at(vocab.attrs.size() + i, k) = v[k];
  }
  return params;
}

namespace {

double lr_scale_for_epoch(const RunConfig& cfg, std::size_t epoch_1based) {
  double scale = 1.0;
  for (std::size_t d : cfg.lr_decay_epochs) {
    if (epoch_1based >= d) scale *= cfg.lr_decay_factor;
  }
  return scale;
}

}  // namespace

TrainOutcome train_model(const RunConfig& cfg, const LoadedDataset& data,
                         const std::string& out_dir, std::ostream& log) {
  cfg.validate_for_training();
  std::filesystem::create_directories(out_dir);

  const float delta = static_cast<float>(cfg.delta);
  const float lambda = static_cast<float>(cfg.lambda);
  const float gamma = static_cast<float>(cfg.gamma);
  const LossWeights weights{static_cast<float>(cfg.alpha1),
                            static_cast<float>(cfg.alpha2),
                            static_cast<float>(cfg.alpha3),
                            static_cast<float>(cfg.alpha4)};

  ModelParams params = make_model(cfg, data.vocab, data.embeddings);
  params.set_trainable(true);

  AdamConfig<float> adam_cfg;
  adam_cfg.beta1 = static_cast<float>(cfg.beta1);
  adam_cfg.beta2 = static_cast<float>(cfg.beta2);
  adam_cfg.eps = static_cast<float>(cfg.epsilon);
  adam_cfg.weight_decay = static_cast<float>(cfg.weight_decay);
  Adam adam(adam_cfg);
  adam.add_group(params.main_group(), static_cast<float>(cfg.lr));
  adam.add_group({params.word_table}, static_cast<float>(cfg.embedding_lr));

  // pair / primitive indexing
  if (data.split.train_pairs.empty()) {
    throw DataError("train: empty training pair list");
  }
  std::map<PairLabel, std::size_t> pair_index;
  std::vector<std::pair<std::size_t, std::size_t>> pair_rows;
  for (const auto& p : data.split.train_pairs) {
    pair_index.emplace(p, pair_rows.size());
    pair_rows.push_back({data.vocab.attr_row(p.first), data.vocab.obj_row(p.second)});
  }
  std::vector<std::pair<std::size_t, std::size_t>> extra_vocab_rows;
  std::vector<PairLabel> extra_vocab_pairs;
  if (cfg.unseen_anchors == "full_vocab") {
    for (const auto* list : {&data.split.val_unseen_pairs,
                             &data.split.test_unseen_pairs}) {
      for (const auto& p : *list) {
        if (pair_index.count(p)) continue;
        extra_vocab_pairs.push_back(p);
        extra_vocab_rows.push_back(
            {data.vocab.attr_row(p.first), data.vocab.obj_row(p.second)});
      }
    }
  }

  std::vector<std::size_t> attr_rows(data.vocab.attrs.size());
  for (std::size_t i = 0; i < attr_rows.size(); ++i) attr_rows[i] = i;
  std::vector<std::size_t> obj_rows(data.vocab.objs.size());
  for (std::size_t i = 0; i < obj_rows.size(); ++i)
    obj_rows[i] = data.vocab.attrs.size() + i;

  TripletIndex triplets(data.manifest, data.split.train_ids);
  std::vector<std::size_t> anchors;
  for (const auto& id : data.split.train_ids)
    anchors.push_back(triplets.sample_index(id));

  TrainOutcome outcome;
  outcome.final_checkpoint = out_dir + "/checkpoint_final.oadc";
  outcome.best_checkpoint = out_dir + "/checkpoint_best.oadc";
  double best_val = -1;
  bool best_saved = false;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double scale = lr_scale_for_epoch(cfg, epoch);
    adam.set_lr_scale(static_cast<float>(scale));
    Rng rng(cfg.seed, 1000 + epoch);
    std::vector<std::size_t> order = anchors;
    rng.shuffle(order);

    EpochLog ep;
    ep.epoch = epoch;
    ep.lr_scale = scale;

    for (std::size_t anchor_idx : order) {
      TripletSample triplet;
      try {
        triplet = triplets.sample(anchor_idx, rng);
      } catch (const MateNotFoundError&) {
        ++ep.skipped;
        continue;
      }
      const Sample& anchor = data.manifest.samples[triplet.anchor];
      const Sample& attr_mate = data.manifest.samples[triplet.attr_mate];
      const Sample& obj_mate = data.manifest.samples[triplet.obj_mate];

      Tape tape(true);
      auto f = image_encode(tape, params, data.features.tensor(anchor.id),
                            true, rng);
      auto f_attr = image_encode(tape, params,
                                 data.features.tensor(attr_mate.id), true, rng);
      auto f_obj = image_encode(tape, params,
                                data.features.tensor(obj_mate.id), true, rng);
      auto v_pair = label_embed(tape, params, f);
      auto dis = disentangle(tape, f, f_attr, f_obj, lambda, gamma);
      auto proj_a = project_attr(tape, params, dis.v_attr, true, rng);
      auto proj_o = project_obj(tape, params, dis.v_obj, true, rng);

      // anchor matrices (rebuilt per step: their parameters are training)
      std::vector<Tensor> pair_vecs;
      pair_vecs.reserve(pair_rows.size());
      for (const auto& [ar, orow] : pair_rows) {
        pair_vecs.push_back(ocn_compose(
            tape, params, lookup_row(tape, params.word_table, ar),
            lookup_row(tape, params.word_table, orow), true, rng));
      }
      auto pair_cols = stack_cols(tape, pair_vecs);
      auto attr_cols = gather_cols(tape, params.word_table, attr_rows);
      auto obj_cols = gather_cols(tape, params.word_table, obj_rows);

      // hallucinated pair: attribute of the object-mate, object of the
      // attribute-mate
      const PairLabel hal{obj_mate.attr, attr_mate.obj};
      Tensor unseen_cols;
      std::size_t unseen_target = 0;
      {
        std::vector<Tensor> vecs = pair_vecs;
        auto it = pair_index.find(hal);
        if (cfg.unseen_anchors == "full_vocab") {
          std::size_t hal_at = it != pair_index.end() ? it->second : 0;
          bool found = it != pair_index.end();
          for (std::size_t e = 0; e < extra_vocab_pairs.size(); ++e) {
            vecs.push_back(ocn_compose(
                tape, params,
                lookup_row(tape, params.word_table, extra_vocab_rows[e].first),
                lookup_row(tape, params.word_table, extra_vocab_rows[e].second),
                true, rng));
            if (!found && extra_vocab_pairs[e] == hal) {
              hal_at = vecs.size() - 1;
              found = true;
            }
          }
          if (!found) {
            vecs.push_back(ocn_compose(
                tape, params,
                lookup_row(tape, params.word_table, data.vocab.attr_row(hal.first)),
                lookup_row(tape, params.word_table, data.vocab.obj_row(hal.second)),
                true, rng));
            hal_at = vecs.size() - 1;
          }
          unseen_target = hal_at;
        } else if (it != pair_index.end()) {
          unseen_target = it->second;
        } else {
          vecs.push_back(ocn_compose(
              tape, params,
              lookup_row(tape, params.word_table, data.vocab.attr_row(hal.first)),
              lookup_row(tape, params.word_table, data.vocab.obj_row(hal.second)),
              true, rng));
          unseen_target = vecs.size() - 1;
        }
        unseen_cols = stack_cols(tape, vecs);
      }

      LossTerms terms;
      terms.cls = l_cls(tape, v_pair, pair_cols,
                        pair_index.at({anchor.attr, anchor.obj}), delta);
      terms.attr = l_attr(tape, proj_a, attr_cols,
                          data.vocab.attr_index.at(anchor.attr), delta);
      terms.obj = l_obj(tape, proj_o, obj_cols,
                        data.vocab.obj_index.at(anchor.obj), delta);
      terms.seen = l_seen(tape, params, dis.v_attr, dis.v_obj, pair_cols,
                          pair_index.at({anchor.attr, anchor.obj}), delta);
      terms.unseen = l_unseen(tape, params, dis.hal_attr, dis.hal_obj,
                              unseen_cols, unseen_target, delta);
      auto loss = total_loss(tape, terms, weights);

      tape.backward(loss);
      adam.step();
      adam.zero_grad();

      ep.total += loss.at(0);
      ep.cls += terms.cls.at(0);
      ep.attr += terms.attr.at(0);
      ep.obj += terms.obj.at(0);
      ep.seen += terms.seen.at(0);
      ep.unseen += terms.unseen.at(0);
      ++ep.steps;
    }

    if (ep.steps == 0 ||
        static_cast<double>(ep.skipped) >
            cfg.max_skip_fraction * static_cast<double>(order.size())) {
      throw DataError("train: " + std::to_string(ep.skipped) + "/" +
                      std::to_string(order.size()) +
                      " anchors skipped (no triplet mates)");
    }
    const double steps = static_cast<double>(ep.steps);
    ep.total /= steps;
    ep.cls /= steps;
    ep.attr /= steps;
    ep.obj /= steps;
    ep.seen /= steps;
    ep.unseen /= steps;

    // per-epoch validation AUC@1 for best-checkpoint tracking
    try {
      MetricsReport r = evaluate(params, data.manifest, data.features,
                                 data.split, "val", cfg.delta, {1});
      ep.val_auc1 = r.per_k[0].auc;
    } catch (const ContractError&) {
      ep.val_auc1 = -1;  // val split not sweepable (missing seen or unseen rows)
    }
    if (ep.val_auc1 >= 0 && ep.val_auc1 > best_val) {
      best_val = ep.val_auc1;
      save_checkpoint(outcome.best_checkpoint, params, cfg, data.vocab);
      best_saved = true;
    }

    char line[256];
    std::snprintf(line, sizeof(line),
                  "epoch %zu/%zu lr %.3g total %.4f cls %.4f attr %.4f "
                  "obj %.4f seen %.4f unseen %.4f skipped %zu/%zu val_auc1 %.6f",
                  epoch, cfg.epochs, cfg.lr * scale, ep.total, ep.cls, ep.attr,
                  ep.obj, ep.seen, ep.unseen, ep.skipped, order.size(),
                  ep.val_auc1);
    log << line << "\n";
    log.flush();
    outcome.epochs.push_back(ep);
  }

  save_checkpoint(outcome.final_checkpoint, params, cfg, data.vocab);
  if (!best_saved) {
    save_checkpoint(outcome.best_checkpoint, params, cfg, data.vocab);
  }
  return outcome;
}

}  // namespace oadis
