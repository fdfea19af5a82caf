#pragma once

#include <vector>

#include "btr/common/rng.hpp"
#include "btr/common/tokens.hpp"
#include "btr/model/config.hpp"
#include "btr/nn/autodiff.hpp"
#include "btr/nn/param_store.hpp"
#include "btr/text/masking.hpp"

// Pre-LN Transformer encoder-decoder with learned absolute positions, and
// the encoder-only variant. Targets handed to the public functions are
// content tokens; the trailing </s> is appended here so that |y| always
// counts it. The decoder input is <s> followed by y without its last token,
// and logits row j predicts y_j.
namespace btr::model {

/// Fresh parameters for `cfg`: weights N(0, init_std), biases 0, layer-norm
/// gains 1.
nn::ParamStore init_params(const ModelConfig& cfg, Rng& rng);

/// Throws CheckpointError unless `params` holds exactly the tensors `cfg`
/// needs with matching shapes.
void check_params(const nn::ParamStore& params, const ModelConfig& cfg);

TokenSeq with_eos(const TokenSeq& y);
/// <s> + y_full[0 .. m-2]
TokenSeq decoder_input(const TokenSeq& y_full);
/// [<s>] x [<sep>] y_full
TokenSeq encoder_only_input(const TokenSeq& x, const TokenSeq& y_full);
/// [<s>] y [</s>], the classifier's view of one sentence.
TokenSeq classifier_input(const TokenSeq& y);

/// Several sequences sharing one graph. Attention masks are block-diagonal
/// so segments never see each other; several decoder segments may attend
/// to the same encoder segment.
struct PackedBatch {
  std::vector<TokenSeq> sources;
  std::vector<TokenSeq> dec_inputs;
  std::vector<int> source_of;

  int add_source(TokenSeq x);
  /// Returns the first logits row of the new segment.
  int add_target(int source, TokenSeq dec_in);
  int dec_rows() const;
};

struct Encoded {
  nn::Var h;                     // [total source rows, d_model]
  std::vector<int> offsets;      // first row of each source, plus the end
};

/// Encoder stack (final layer norm applied). Also the body of the
/// encoder-only model.
Encoded encode_packed(nn::ParamBinder& p, const ModelConfig& cfg, const std::vector<TokenSeq>& sources);

/// Decoder logits [dec_rows, V] for a packed batch.
nn::Var decoder_logits(nn::ParamBinder& p, const ModelConfig& cfg, const PackedBatch& batch);
nn::Var decoder_logits(nn::ParamBinder& p, const ModelConfig& cfg, const PackedBatch& batch, const Encoded& enc);

/// Encoder-only MLM logits [total rows, V] over the given full sequences.
nn::Var encoder_mlm_logits(nn::ParamBinder& p, const ModelConfig& cfg, const std::vector<TokenSeq>& seqs);
/// Two-way classification logits [n, 2] pooled from each sequence's first
/// position.
nn::Var class_logits(nn::ParamBinder& p, const ModelConfig& cfg, const std::vector<TokenSeq>& seqs);

// Single-example conveniences on frozen parameters.

nn::Tensor encode(const nn::ParamStore& params, const ModelConfig& cfg, const TokenSeq& x);
/// Logits [|dec_in|, V] for an explicit <s>-prefixed decoder input, given
/// the encoder output of `encode`.
nn::Tensor decode_step_logits(const nn::ParamStore& params, const ModelConfig& cfg, const nn::Tensor& h,
                              const TokenSeq& dec_in);

/// Sum of log p(y_j | x, y_<j) over y plus </s>. Causal models only.
double seq_log_prob(const nn::ParamStore& params, const ModelConfig& cfg, const TokenSeq& x, const TokenSeq& y);
std::vector<double> seq_log_probs(const nn::ParamStore& params, const ModelConfig& cfg, const TokenSeq& x,
                                  const std::vector<TokenSeq>& ys);
/// Per-token log-probabilities of y plus </s>.
std::vector<double> token_log_probs(const nn::ParamStore& params, const ModelConfig& cfg, const TokenSeq& x,
                                    const TokenSeq& y);

/// log p(y_k | x, y_\kappa) for each k in ex.kappa (same order). `ex` covers
/// the full target including </s>. BTR role only.
std::vector<double> btr_masked_log_probs(const nn::ParamStore& params, const ModelConfig& cfg, const TokenSeq& x,
                                         const text::MaskedExample& ex);
/// Batched form: all examples share the source and its encoder pass.
std::vector<std::vector<double>> btr_masked_log_probs(const nn::ParamStore& params, const ModelConfig& cfg,
                                                      const TokenSeq& x,
                                                      const std::vector<text::MaskedExample>& exs);

/// Encoder-only analog: the target segment of [<s>] x [<sep>] y_full is
/// masked per `ex` and each masked token is predicted at its own position.
std::vector<std::vector<double>> encoder_masked_log_probs(const nn::ParamStore& params, const ModelConfig& cfg,
                                                          const TokenSeq& x,
                                                          const std::vector<text::MaskedExample>& exs);

/// p(<1>) for a sequence. Encoder-only role only.
double classify(const nn::ParamStore& params, const ModelConfig& cfg, const TokenSeq& seq);
std::vector<double> classify_batch(const nn::ParamStore& params, const ModelConfig& cfg,
                                   const std::vector<TokenSeq>& seqs);

void require_role(const ModelConfig& cfg, std::initializer_list<Role> roles, const char* what);

}  // namespace btr::model
