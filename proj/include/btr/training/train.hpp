#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "btr/common/rng.hpp"
#include "btr/common/tokens.hpp"
#include "btr/decode/search.hpp"
#include "btr/model/config.hpp"
#include "btr/nn/param_store.hpp"
#include "btr/text/masking.hpp"
#include "json.hpp"

namespace btr::training {

struct SeqPair {
  TokenSeq src;
  TokenSeq tgt;
};

struct TrainConfig {
  int epochs = 10;
  int batch_tokens = 800;  // source plus target tokens per batch
  double lr = 2e-3;
  int warmup = 100;        // linear warmup steps, then constant
  double clip_norm = 1.0;  // 0 disables clipping
  std::uint64_t seed = 0;
  int a_train = 0;
  double mask_rate = 0.15;
  double unlikelihood_floor = 1e-6;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochReport {
  int epoch = 0;
  double loss = 0.0;  // mean batch loss over the epoch
  std::optional<double> val_metric;
  double wall_time = 0.0;  // seconds
};

void to_json(nlohmann::json& j, const EpochReport& r);

struct TrainResult {
  nn::ParamStore params;
  double initial_loss = 0.0;  // first batch, before any update
  std::vector<EpochReport> epochs;
};

/// Called after each epoch; the returned value is recorded as val_metric.
using EpochCallback = std::function<std::optional<double>(const nn::ParamStore& params, int epoch)>;

double learning_rate(const TrainConfig& c, long step);

/// Shuffles item order and packs consecutive items into batches of at most
/// `budget` tokens. An item larger than the budget forms its own batch.
std::vector<std::vector<std::size_t>> token_batches(const std::vector<int>& sizes, int budget, Rng& rng);

TokenSeq reversed(const TokenSeq& y);

/// Mean per-token cross-entropy of the targets (each closed by </s>).
nn::Var mle_loss(nn::ParamBinder& p, const model::ModelConfig& cfg, const std::vector<SeqPair>& batch);

/// Maximum-likelihood training of a causal model. For the r2l role the
/// targets are reversed by the loop. Throws NumericError if the loss stops
/// being finite.
TrainResult train_mle(const model::ModelConfig& cfg, const std::vector<SeqPair>& data, const TrainConfig& tc,
                      const EpochCallback& on_epoch = {});

struct BtrInstance {
  TokenSeq x;
  text::MaskedExample y;  // over the target including </s>
  bool is_gold = false;
};

/// One masked instance per member of the top-a_train candidates united with
/// the gold target. Instances of a source are contiguous. Candidate sets
/// without gold throw DataError.
std::vector<BtrInstance> build_btr_batch(const std::vector<decode::CandidateSet>& sets, int a_train,
                                         double mask_rate, const text::Vocabulary& vocab, Rng& rng);

/// Likelihood on gold instances, unlikelihood log(1 - p) on the others,
/// averaged over masked positions within an instance and then over
/// instances. Works for the btr and encoder_only roles.
nn::Var btr_loss(nn::ParamBinder& p, const model::ModelConfig& cfg, const std::vector<BtrInstance>& batch,
                 double unlikelihood_floor);

/// Trains a btr or encoder_only model on the candidate sets. `warm_start`
/// must match the configuration's parameter shapes (CheckpointError
/// otherwise); its values are copied, optimizer state starts fresh.
TrainResult train_btr(const model::ModelConfig& cfg, const std::vector<decode::CandidateSet>& sets,
                      const text::Vocabulary& vocab, const TrainConfig& tc,
                      const std::optional<nn::ParamStore>& warm_start = std::nullopt,
                      const EpochCallback& on_epoch = {});

struct LabeledSeq {
  TokenSeq seq;
  int label = 0;  // 1 grammatical, 0 not
};

/// Sources differing from their target are labeled 0, targets 1.
std::vector<LabeledSeq> classifier_data(const std::vector<SeqPair>& pairs);

nn::Var classifier_loss(nn::ParamBinder& p, const model::ModelConfig& cfg, const std::vector<LabeledSeq>& batch);

TrainResult train_classifier(const model::ModelConfig& cfg, const std::vector<LabeledSeq>& data,
                             const TrainConfig& tc, const EpochCallback& on_epoch = {});

}  // namespace btr::training
