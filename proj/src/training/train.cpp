#include "btr/training/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>

#include "btr/common/error.hpp"
#include "btr/model/transformer.hpp"
#include "btr/nn/ops.hpp"
#include "btr/nn/optim.hpp"

namespace btr::training {

using model::ModelConfig;
using model::Role;
using nn::ParamBinder;
using nn::ParamStore;
using nn::Var;

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("train." + field + ": " + why);
  };
  if (epochs < 0) fail("epochs", "must be non-negative");
  if (batch_tokens < 1) fail("batch_tokens", "must be positive");
  if (!(lr > 0.0)) fail("lr", "must be positive");
  if (warmup < 0) fail("warmup", "must be non-negative");
  if (clip_norm < 0.0) fail("clip_norm", "must be non-negative");
  if (a_train < 0) fail("a_train", "must be non-negative");
  if (!(mask_rate > 0.0 && mask_rate < 1.0)) fail("mask_rate", "must lie in (0, 1)");
  if (!(unlikelihood_floor > 0.0 && unlikelihood_floor < 1.0)) fail("unlikelihood_floor", "must lie in (0, 1)");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_tokens", c.batch_tokens},
       {"lr", c.lr},
       {"warmup", c.warmup},
       {"clip_norm", c.clip_norm},
       {"seed", c.seed},
       {"a_train", c.a_train},
       {"mask_rate", c.mask_rate},
       {"unlikelihood_floor", c.unlikelihood_floor}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_tokens = j.value("batch_tokens", c.batch_tokens);
  c.lr = j.value("lr", c.lr);
  c.warmup = j.value("warmup", c.warmup);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.seed = j.value("seed", c.seed);
  c.a_train = j.value("a_train", c.a_train);
  c.mask_rate = j.value("mask_rate", c.mask_rate);
  c.unlikelihood_floor = j.value("unlikelihood_floor", c.unlikelihood_floor);
}

void to_json(nlohmann::json& j, const EpochReport& r) {
  j = {{"epoch", r.epoch}, {"loss", r.loss}, {"wall_time", r.wall_time}};
  j["val_metric"] = r.val_metric ? nlohmann::json(*r.val_metric) : nlohmann::json(nullptr);
}

double learning_rate(const TrainConfig& c, long step) {
  if (c.warmup <= 0) return c.lr;
  return c.lr * std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(c.warmup));
}

std::vector<std::vector<std::size_t>> token_batches(const std::vector<int>& sizes, int budget, Rng& rng) {
  std::vector<std::size_t> order(sizes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order.begin(), order.end());
  std::vector<std::vector<std::size_t>> out;
  int used = 0;
  for (std::size_t i : order) {
    if (out.empty() || (used + sizes[i] > budget && !out.back().empty())) {
      out.emplace_back();
      used = 0;
    }
    out.back().push_back(i);
    used += sizes[i];
  }
  return out;
}

TokenSeq reversed(const TokenSeq& y) { return TokenSeq(y.rbegin(), y.rend()); }

namespace {

using LossFn = std::function<Var(ParamBinder&)>;
using EpochBatches = std::function<std::vector<LossFn>(int epoch)>;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

TrainResult optimize(ParamStore params, const TrainConfig& tc, const EpochBatches& batches, const EpochCallback& cb,
                     const char* what) {
  TrainResult res;
  nn::AdamConfig adam;
  bool first = true;
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto fns = batches(epoch);
    double total = 0.0;
    for (std::size_t s = 0; s < fns.size(); ++s) {
      params.zero_grad();
      double value = 0.0;
      try {
        ParamBinder b(params, true);
        Var loss = fns[s](b);
        value = loss.value()[0];
        if (!std::isfinite(value)) throw NumericError("loss is not finite");
        nn::backward(loss);
      } catch (const NumericError& e) {
        throw NumericError(std::string(what) + ": training diverged at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(s + 1) + ": " + e.what());
      }
      if (first) res.initial_loss = value;
      first = false;
      total += value;
      if (tc.clip_norm > 0.0) params.clip_grad_norm(tc.clip_norm);
      adam.lr = learning_rate(tc, params.step);
      nn::adam_step(params, adam);
    }
    EpochReport rep;
    rep.epoch = epoch;
    rep.loss = fns.empty() ? 0.0 : total / static_cast<double>(fns.size());
    if (cb) rep.val_metric = cb(params, epoch);
    rep.wall_time = seconds_since(t0);
    res.epochs.push_back(rep);
  }
  params.zero_grad();
  res.params = std::move(params);
  return res;
}

Rng epoch_rng(const TrainConfig& tc, int epoch) { return Rng(tc.seed).split("epochs").split(static_cast<std::uint64_t>(epoch)); }

ParamStore fresh_params(const ModelConfig& cfg, const TrainConfig& tc) {
  Rng rng = Rng(tc.seed).split("init");
  return model::init_params(cfg, rng);
}

}  // namespace

Var mle_loss(ParamBinder& p, const ModelConfig& cfg, const std::vector<SeqPair>& batch) {
  if (batch.empty()) throw ArgumentError("mle_loss: empty batch");
  model::PackedBatch b;
  std::vector<int> targets;
  for (const auto& pr : batch) {
    const int s = b.add_source(pr.src);
    const TokenSeq full = model::with_eos(pr.tgt);
    b.add_target(s, model::decoder_input(full));
    targets.insert(targets.end(), full.begin(), full.end());
  }
  return nn::mean(nn::softmax_cross_entropy(model::decoder_logits(p, cfg, b), targets));
}

TrainResult train_mle(const ModelConfig& cfg, const std::vector<SeqPair>& data, const TrainConfig& tc,
                      const EpochCallback& on_epoch) {
  cfg.validate();
  tc.validate();
  model::require_role(cfg, {Role::base_l2r, Role::r2l}, "train_mle");
  if (data.empty()) throw DataError("train_mle: no training pairs");
  std::vector<SeqPair> pairs = data;
  if (cfg.role == Role::r2l)
    for (auto& pr : pairs) pr.tgt = reversed(pr.tgt);
  std::vector<int> sizes;
  for (const auto& pr : pairs) sizes.push_back(static_cast<int>(pr.src.size() + pr.tgt.size()) + 1);

  auto batches = [&](int epoch) {
    Rng rng = epoch_rng(tc, epoch);
    std::vector<LossFn> fns;
    for (auto& idx : token_batches(sizes, tc.batch_tokens, rng)) {
      std::vector<SeqPair> batch;
      for (std::size_t i : idx) batch.push_back(pairs[i]);
      fns.push_back([&cfg, batch = std::move(batch)](ParamBinder& p) { return mle_loss(p, cfg, batch); });
    }
    return fns;
  };
  return optimize(fresh_params(cfg, tc), tc, batches, on_epoch, "train_mle");
}

std::vector<BtrInstance> build_btr_batch(const std::vector<decode::CandidateSet>& sets, int a_train,
                                         double mask_rate, const text::Vocabulary& vocab, Rng& rng) {
  if (a_train < 0) throw ArgumentError("build_btr_batch: a_train must be non-negative");
  text::BertMaskOptions opt;
  opt.rate = mask_rate;
  std::vector<BtrInstance> out;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const auto& s = sets[i];
    if (!s.gold) throw DataError("build_btr_batch: source " + std::to_string(i) + " has no gold target");
    std::vector<TokenSeq> members;
    std::set<TokenSeq> seen;
    for (const auto& c : s.candidates) {
      if (c.rank > a_train) continue;
      if (seen.insert(c.text).second) members.push_back(c.text);
    }
    if (seen.insert(*s.gold).second) members.push_back(*s.gold);
    for (const auto& y : members) {
      BtrInstance inst;
      inst.x = s.source;
      inst.y = text::bert_mask(model::with_eos(y), vocab, opt, rng);
      inst.is_gold = y == *s.gold;
      out.push_back(std::move(inst));
    }
  }
  return out;
}

Var btr_loss(ParamBinder& p, const ModelConfig& cfg, const std::vector<BtrInstance>& batch, double floor) {
  model::require_role(cfg, {Role::btr, Role::encoder_only}, "btr_loss");
  if (batch.empty()) throw ArgumentError("btr_loss: empty batch");
  std::vector<int> rows, targets;
  std::vector<double> weights;
  std::vector<bool> gold;
  const double n_inst = static_cast<double>(batch.size());
  auto add_positions = [&](const BtrInstance& inst, int first_row) {
    if (inst.y.kappa.empty()) throw ArgumentError("btr_loss: instance with empty masked position set");
    for (int k : inst.y.kappa) {
      rows.push_back(first_row + k);
      targets.push_back(inst.y.original[static_cast<std::size_t>(k)]);
      weights.push_back(-1.0 / (static_cast<double>(inst.y.kappa.size()) * n_inst));
      gold.push_back(inst.is_gold);
    }
  };

  Var logits;
  if (cfg.role == Role::btr) {
    model::PackedBatch b;
    int src = -1;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (i == 0 || batch[i].x != batch[i - 1].x) src = b.add_source(batch[i].x);
      add_positions(batch[i], b.add_target(src, model::decoder_input(batch[i].y.masked)));
    }
    logits = model::decoder_logits(p, cfg, b);
  } else {
    std::vector<TokenSeq> seqs;
    int offset = 0;
    for (const auto& inst : batch) {
      seqs.push_back(model::encoder_only_input(inst.x, inst.y.masked));
      add_positions(inst, offset + static_cast<int>(inst.x.size()) + 2);
      offset += static_cast<int>(seqs.back().size());
    }
    logits = model::encoder_mlm_logits(p, cfg, seqs);
  }

  const Var lsm = nn::log_softmax_rows(nn::select_rows(logits, rows));
  std::vector<int> gr, gc, nr, nc;
  std::vector<double> gw, nw;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto& r = gold[i] ? gr : nr;
    auto& c = gold[i] ? gc : nc;
    auto& w = gold[i] ? gw : nw;
    r.push_back(static_cast<int>(i));
    c.push_back(targets[i]);
    w.push_back(weights[i]);
  }
  Var loss;
  if (!gr.empty()) loss = nn::weighted_sum(nn::gather(lsm, gr, gc), gw);
  if (!nr.empty()) {
    Var neg = nn::weighted_sum(nn::log1m_exp(nn::gather(lsm, nr, nc), floor), nw);
    loss = loss ? nn::add(loss, neg) : neg;
  }
  return loss;
}

TrainResult train_btr(const ModelConfig& cfg, const std::vector<decode::CandidateSet>& sets,
                      const text::Vocabulary& vocab, const TrainConfig& tc,
                      const std::optional<ParamStore>& warm_start, const EpochCallback& on_epoch) {
  cfg.validate();
  tc.validate();
  model::require_role(cfg, {Role::btr, Role::encoder_only}, "train_btr");
  if (sets.empty()) throw DataError("train_btr: no candidate sets");
  ParamStore params = fresh_params(cfg, tc);
  if (warm_start) {
    model::check_params(*warm_start, cfg);
    for (auto& [name, e] : params) e.value = warm_start->value(name);
  }

  auto batches = [&](int epoch) {
    Rng rng = epoch_rng(tc, epoch);
    Rng mask_rng = rng.split("mask");
    const auto instances = build_btr_batch(sets, tc.a_train, tc.mask_rate, vocab, mask_rng);
    // Batch by source so each source's instances share one encoder pass.
    std::vector<std::vector<std::size_t>> groups;
    std::vector<int> sizes;
    for (std::size_t i = 0; i < instances.size(); ++i) {
      const auto& inst = instances[i];
      if (i == 0 || inst.x != instances[i - 1].x) {
        groups.emplace_back();
        sizes.push_back(static_cast<int>(inst.x.size()));
      }
      groups.back().push_back(i);
      sizes.back() += static_cast<int>(inst.y.original.size());
    }
    Rng order = rng.split("order");
    std::vector<LossFn> fns;
    for (auto& idx : token_batches(sizes, tc.batch_tokens, order)) {
      std::vector<BtrInstance> batch;
      for (std::size_t g : idx)
        for (std::size_t i : groups[g]) batch.push_back(instances[i]);
      fns.push_back([&cfg, &tc, batch = std::move(batch)](ParamBinder& p) {
        return btr_loss(p, cfg, batch, tc.unlikelihood_floor);
      });
    }
    return fns;
  };
  return optimize(std::move(params), tc, batches, on_epoch, "train_btr");
}

std::vector<LabeledSeq> classifier_data(const std::vector<SeqPair>& pairs) {
  std::vector<LabeledSeq> out;
  for (const auto& pr : pairs) {
    if (pr.src != pr.tgt) out.push_back({pr.src, 0});
    out.push_back({pr.tgt, 1});
  }
  return out;
}

Var classifier_loss(ParamBinder& p, const ModelConfig& cfg, const std::vector<LabeledSeq>& batch) {
  if (batch.empty()) throw ArgumentError("classifier_loss: empty batch");
  std::vector<TokenSeq> seqs;
  std::vector<int> labels;
  for (const auto& l : batch) {
    if (l.label != 0 && l.label != 1) throw DataError("classifier label must be 0 or 1");
    seqs.push_back(model::classifier_input(l.seq));
    labels.push_back(l.label);
  }
  return nn::mean(nn::softmax_cross_entropy(model::class_logits(p, cfg, seqs), labels));
}

TrainResult train_classifier(const ModelConfig& cfg, const std::vector<LabeledSeq>& data, const TrainConfig& tc,
                             const EpochCallback& on_epoch) {
  cfg.validate();
  tc.validate();
  model::require_role(cfg, {Role::encoder_only}, "train_classifier");
  if (data.empty()) throw DataError("train_classifier: no labeled sequences");
  for (const auto& l : data)
    if (l.label != 0 && l.label != 1) throw DataError("classifier label must be 0 or 1");
  std::vector<int> sizes;
  for (const auto& l : data) sizes.push_back(static_cast<int>(l.seq.size()) + 2);
  auto batches = [&](int epoch) {
    Rng rng = epoch_rng(tc, epoch);
    std::vector<LossFn> fns;
    for (auto& idx : token_batches(sizes, tc.batch_tokens, rng)) {
      std::vector<LabeledSeq> batch;
      for (std::size_t i : idx) batch.push_back(data[i]);
      fns.push_back([&cfg, batch = std::move(batch)](ParamBinder& p) { return classifier_loss(p, cfg, batch); });
    }
    return fns;
  };
  return optimize(fresh_params(cfg, tc), tc, batches, on_epoch, "train_classifier");
}

}  // namespace btr::training
