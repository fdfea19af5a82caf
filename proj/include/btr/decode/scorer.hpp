#pragma once

#include <functional>
#include <map>
#include <vector>

#include "btr/common/tokens.hpp"
#include "btr/model/incremental.hpp"

namespace btr::decode {

/// Next-token distributions for prefixes of one source. Prefixes are the
/// generated tokens so far, without <s>. Entries of -inf are never
/// expanded.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual int vocab_size() const = 0;
  virtual int eos() const = 0;
  virtual std::vector<std::vector<double>> next_log_probs(const std::vector<TokenSeq>& prefixes) = 0;
};

/// Stub backed by a function of the prefix.
class FunctionScorer : public Scorer {
 public:
  using Fn = std::function<std::vector<double>(const TokenSeq& prefix)>;
  FunctionScorer(int vocab_size, int eos, Fn fn) : vocab_(vocab_size), eos_(eos), fn_(std::move(fn)) {}

  int vocab_size() const override { return vocab_; }
  int eos() const override { return eos_; }
  std::vector<std::vector<double>> next_log_probs(const std::vector<TokenSeq>& prefixes) override;

 private:
  int vocab_, eos_;
  Fn fn_;
};

/// A causal model for one source. Keeps the decoder cache of every prefix
/// it has extended; entries shorter than the shortest requested prefix are
/// dropped. Tokens with `allowed[id] == false` get -inf.
class ModelScorer : public Scorer {
 public:
  ModelScorer(const nn::ParamStore& params, const model::ModelConfig& cfg, const TokenSeq& x,
              std::vector<bool> allowed);

  int vocab_size() const override { return cfg_.vocab_size; }
  int eos() const override;
  std::vector<std::vector<double>> next_log_probs(const std::vector<TokenSeq>& prefixes) override;

 private:
  struct Entry {
    model::DecoderCache cache;
    std::vector<double> log_probs;
  };
  void extend(const std::vector<TokenSeq>& missing);

  model::ModelConfig cfg_;
  model::IncrementalDecoder decoder_;
  std::vector<bool> allowed_;
  std::map<TokenSeq, Entry> entries_;
};

/// Content tokens and </s>; every other reserved id is excluded.
std::vector<bool> generation_mask(int vocab_size, int first_content_id);

}  // namespace btr::decode
