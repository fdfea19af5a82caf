#include "btr/model/transformer.hpp"

#include <algorithm>
#include <cmath>

#include "btr/common/error.hpp"
#include "btr/nn/ops.hpp"
#include "btr/text/vocab.hpp"

namespace btr::model {

using nn::ParamBinder;
using nn::ParamStore;
using nn::Tensor;
using nn::Var;
using Mask = nn::kernels::AttentionMask;
using text::Vocabulary;

namespace {

struct Shaped {
  std::string name;
  nn::Shape shape;
  enum { weight, zero, one } init;
};

void attention_shapes(std::vector<Shaped>& out, const std::string& pre, int d) {
  for (const char* w : {"wq", "wk", "wv", "wo"}) out.push_back({pre + w, {d, d}, Shaped::weight});
  for (const char* b : {"bq", "bk", "bv", "bo"}) out.push_back({pre + b, {d}, Shaped::zero});
}

void norm_shapes(std::vector<Shaped>& out, const std::string& pre, int d) {
  out.push_back({pre + "g", {d}, Shaped::one});
  out.push_back({pre + "b", {d}, Shaped::zero});
}

void ff_shapes(std::vector<Shaped>& out, const std::string& pre, int d, int f) {
  out.push_back({pre + "w1", {d, f}, Shaped::weight});
  out.push_back({pre + "b1", {f}, Shaped::zero});
  out.push_back({pre + "w2", {f, d}, Shaped::weight});
  out.push_back({pre + "b2", {d}, Shaped::zero});
}

std::vector<Shaped> param_shapes(const ModelConfig& cfg) {
  const int d = cfg.d_model, v = cfg.vocab_size, f = cfg.d_ff;
  std::vector<Shaped> s;
  s.push_back({"emb.tok", {v, d}, Shaped::weight});
  s.push_back({"emb.src_pos", {cfg.max_len, d}, Shaped::weight});
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = "enc." + std::to_string(l) + ".";
    norm_shapes(s, pre + "ln1.", d);
    attention_shapes(s, pre + "self.", d);
    norm_shapes(s, pre + "ln2.", d);
    ff_shapes(s, pre + "ff.", d, f);
  }
  norm_shapes(s, "enc.ln.", d);
  if (cfg.has_decoder()) {
    s.push_back({"emb.tgt_pos", {cfg.max_len, d}, Shaped::weight});
    for (int l = 0; l < cfg.n_layers; ++l) {
      const std::string pre = "dec." + std::to_string(l) + ".";
      norm_shapes(s, pre + "ln1.", d);
      attention_shapes(s, pre + "self.", d);
      norm_shapes(s, pre + "ln2.", d);
      attention_shapes(s, pre + "cross.", d);
      norm_shapes(s, pre + "ln3.", d);
      ff_shapes(s, pre + "ff.", d, f);
    }
    norm_shapes(s, "dec.ln.", d);
  } else {
    s.push_back({"cls.w", {d, 2}, Shaped::weight});
    s.push_back({"cls.b", {2}, Shaped::zero});
  }
  if (!cfg.tie_embeddings) s.push_back({"out.w", {d, v}, Shaped::weight});
  s.push_back({"out.b", {v}, Shaped::zero});
  return s;
}

nn::AttentionWeights attn_weights(ParamBinder& p, const std::string& pre) {
  return {p(pre + "wq"), p(pre + "bq"), p(pre + "wk"), p(pre + "bk"),
          p(pre + "wv"), p(pre + "bv"), p(pre + "wo"), p(pre + "bo")};
}

Var norm(ParamBinder& p, const Var& x, const std::string& pre) { return nn::layer_norm(x, p(pre + "g"), p(pre + "b")); }

Var feed_forward(ParamBinder& p, const Var& x, const std::string& pre) {
  return nn::linear(nn::gelu(nn::linear(x, p(pre + "w1"), p(pre + "b1"))), p(pre + "w2"), p(pre + "b2"));
}

Var output_logits(ParamBinder& p, const ModelConfig& cfg, const Var& h) {
  Var raw = cfg.tie_embeddings ? nn::matmul_nt(h, p("emb.tok")) : nn::matmul(h, p("out.w"));
  return nn::add_row(raw, p("out.b"));
}

void check_tokens(const ModelConfig& cfg, const TokenSeq& s, const char* what) {
  if (s.empty()) throw ArgumentError(std::string(what) + ": empty sequence");
  if (static_cast<int>(s.size()) > cfg.max_len) {
    throw LengthError(std::string(what) + ": length " + std::to_string(s.size()) + " exceeds max_len " +
                      std::to_string(cfg.max_len));
  }
  for (int t : s) {
    if (t < 0 || t >= cfg.vocab_size) throw ArgumentError(std::string(what) + ": token id " + std::to_string(t) + " out of range");
  }
}

// Token plus position embeddings of concatenated segments.
Var embed(ParamBinder& p, const std::vector<TokenSeq>& segs, const char* pos_table, std::vector<int>& offsets) {
  std::vector<int> ids, pos;
  offsets.assign(1, 0);
  for (const TokenSeq& s : segs) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      ids.push_back(s[i]);
      pos.push_back(static_cast<int>(i));
    }
    offsets.push_back(static_cast<int>(ids.size()));
  }
  return nn::add(nn::embedding(p("emb.tok"), ids), nn::embedding(p(pos_table), pos));
}

Mask block_mask(const std::vector<int>& offsets, bool causal) {
  const int n = offsets.back();
  Mask m(n, n, false);
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    for (int i = offsets[s]; i < offsets[s + 1]; ++i)
      for (int j = offsets[s]; j < (causal ? i + 1 : offsets[s + 1]); ++j) m.set(i, j, true);
  }
  return m;
}

}  // namespace

ParamStore init_params(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ParamStore ps;
  for (const Shaped& s : param_shapes(cfg)) {
    Tensor t(s.shape);
    if (s.init == Shaped::weight)
      for (double& x : t.data()) x = rng.normal(0.0, cfg.init_std);
    if (s.init == Shaped::one) t.fill(1.0);
    ps.add(s.name, std::move(t));
  }
  return ps;
}

void check_params(const ParamStore& params, const ModelConfig& cfg) {
  const auto shapes = param_shapes(cfg);
  for (const Shaped& s : shapes) {
    if (!params.contains(s.name)) throw CheckpointError("parameters lack tensor '" + s.name + "'");
    if (params.value(s.name).shape() != s.shape) {
      throw CheckpointError("tensor '" + s.name + "' has shape " + nn::shape_string(params.value(s.name).shape()) +
                            ", model expects " + nn::shape_string(s.shape));
    }
  }
  if (params.size() != shapes.size()) throw CheckpointError("parameters hold tensors the model does not use");
}

TokenSeq with_eos(const TokenSeq& y) {
  TokenSeq out = y;
  out.push_back(Vocabulary::kEos);
  return out;
}

TokenSeq decoder_input(const TokenSeq& y_full) {
  if (y_full.empty()) throw ArgumentError("decoder_input: empty target");
  TokenSeq in{Vocabulary::kBos};
  in.insert(in.end(), y_full.begin(), y_full.end() - 1);
  return in;
}

TokenSeq encoder_only_input(const TokenSeq& x, const TokenSeq& y_full) {
  TokenSeq in{Vocabulary::kBos};
  in.insert(in.end(), x.begin(), x.end());
  in.push_back(Vocabulary::kSep);
  in.insert(in.end(), y_full.begin(), y_full.end());
  return in;
}

TokenSeq classifier_input(const TokenSeq& y) {
  TokenSeq in{Vocabulary::kBos};
  in.insert(in.end(), y.begin(), y.end());
  in.push_back(Vocabulary::kEos);
  return in;
}

int PackedBatch::add_source(TokenSeq x) {
  sources.push_back(std::move(x));
  return static_cast<int>(sources.size()) - 1;
}

int PackedBatch::add_target(int source, TokenSeq dec_in) {
  if (source < 0 || source >= static_cast<int>(sources.size())) throw ArgumentError("packed batch: unknown source");
  const int row = dec_rows();
  dec_inputs.push_back(std::move(dec_in));
  source_of.push_back(source);
  return row;
}

int PackedBatch::dec_rows() const {
  int n = 0;
  for (const auto& d : dec_inputs) n += static_cast<int>(d.size());
  return n;
}

void require_role(const ModelConfig& cfg, std::initializer_list<Role> roles, const char* what) {
  if (std::find(roles.begin(), roles.end(), cfg.role) != roles.end()) return;
  throw RoleError(std::string(what) + ": not available for role " + to_string(cfg.role));
}

Encoded encode_packed(ParamBinder& p, const ModelConfig& cfg, const std::vector<TokenSeq>& sources) {
  if (sources.empty()) throw ArgumentError("encode: no sources");
  for (const auto& s : sources) check_tokens(cfg, s, "encoder input");
  Encoded e;
  Var h = embed(p, sources, "emb.src_pos", e.offsets);
  const Mask mask = block_mask(e.offsets, false);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = "enc." + std::to_string(l) + ".";
    Var a = norm(p, h, pre + "ln1.");
    h = nn::add(h, nn::multi_head_attention(a, a, mask, cfg.n_heads, attn_weights(p, pre + "self.")));
    h = nn::add(h, feed_forward(p, norm(p, h, pre + "ln2."), pre + "ff."));
  }
  e.h = norm(p, h, "enc.ln.");
  return e;
}

Var decoder_logits(ParamBinder& p, const ModelConfig& cfg, const PackedBatch& batch) {
  return decoder_logits(p, cfg, batch, encode_packed(p, cfg, batch.sources));
}

Var decoder_logits(ParamBinder& p, const ModelConfig& cfg, const PackedBatch& batch, const Encoded& enc) {
  require_role(cfg, {Role::base_l2r, Role::r2l, Role::btr}, "decoder");
  if (batch.dec_inputs.empty()) throw ArgumentError("decoder: no targets");
  for (const auto& s : batch.dec_inputs) {
    check_tokens(cfg, s, "decoder input");
    if (s.front() != Vocabulary::kBos) throw ArgumentError("decoder input must start with <s>");
  }
  std::vector<int> offsets;
  Var h = embed(p, batch.dec_inputs, "emb.tgt_pos", offsets);
  const Mask self_mask = block_mask(offsets, cfg.causal());
  Mask cross(offsets.back(), enc.offsets.back(), false);
  for (std::size_t s = 0; s < batch.dec_inputs.size(); ++s) {
    const int src = batch.source_of[s];
    for (int i = offsets[s]; i < offsets[s + 1]; ++i)
      for (int j = enc.offsets[static_cast<std::size_t>(src)]; j < enc.offsets[static_cast<std::size_t>(src) + 1]; ++j)
        cross.set(i, j, true);
  }
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = "dec." + std::to_string(l) + ".";
    Var a = norm(p, h, pre + "ln1.");
    h = nn::add(h, nn::multi_head_attention(a, a, self_mask, cfg.n_heads, attn_weights(p, pre + "self.")));
    Var c = norm(p, h, pre + "ln2.");
    h = nn::add(h, nn::multi_head_attention(c, enc.h, cross, cfg.n_heads, attn_weights(p, pre + "cross.")));
    h = nn::add(h, feed_forward(p, norm(p, h, pre + "ln3."), pre + "ff."));
  }
  return output_logits(p, cfg, norm(p, h, "dec.ln."));
}

Var encoder_mlm_logits(ParamBinder& p, const ModelConfig& cfg, const std::vector<TokenSeq>& seqs) {
  require_role(cfg, {Role::encoder_only}, "masked-LM head");
  return output_logits(p, cfg, encode_packed(p, cfg, seqs).h);
}

Var class_logits(ParamBinder& p, const ModelConfig& cfg, const std::vector<TokenSeq>& seqs) {
  require_role(cfg, {Role::encoder_only}, "classification head");
  Encoded e = encode_packed(p, cfg, seqs);
  std::vector<int> first(e.offsets.begin(), e.offsets.end() - 1);
  return nn::linear(nn::select_rows(e.h, first), p("cls.w"), p("cls.b"));
}

Tensor encode(const ParamStore& params, const ModelConfig& cfg, const TokenSeq& x) {
  ParamBinder p(params);
  return encode_packed(p, cfg, {x}).h.value();
}

Tensor decode_step_logits(const ParamStore& params, const ModelConfig& cfg, const Tensor& h, const TokenSeq& dec_in) {
  ParamBinder p(params);
  PackedBatch b;
  b.sources.push_back(TokenSeq(static_cast<std::size_t>(h.rows()), 0));
  b.add_target(0, dec_in);
  Encoded enc{nn::constant(h), {0, h.rows()}};
  return decoder_logits(p, cfg, b, enc).value();
}

std::vector<double> token_log_probs(const ParamStore& params, const ModelConfig& cfg, const TokenSeq& x,
                                    const TokenSeq& y) {
  require_role(cfg, {Role::base_l2r, Role::r2l}, "seq_log_prob");
  ParamBinder p(params);
  PackedBatch b;
  b.add_source(x);
  const TokenSeq full = with_eos(y);
  b.add_target(0, decoder_input(full));
  const Tensor lsm = nn::log_softmax_rows(decoder_logits(p, cfg, b)).value();
  std::vector<double> out(full.size());
  for (std::size_t j = 0; j < full.size(); ++j) out[j] = lsm.at(static_cast<int>(j), full[j]);
  return out;
}

double seq_log_prob(const ParamStore& params, const ModelConfig& cfg, const TokenSeq& x, const TokenSeq& y) {
  double s = 0.0;
  for (double v : token_log_probs(params, cfg, x, y)) s += v;
  return s;
}

std::vector<double> seq_log_probs(const ParamStore& params, const ModelConfig& cfg, const TokenSeq& x,
                                  const std::vector<TokenSeq>& ys) {
  require_role(cfg, {Role::base_l2r, Role::r2l}, "seq_log_prob");
  if (ys.empty()) return {};
  ParamBinder p(params);
  PackedBatch b;
  b.add_source(x);
  std::vector<TokenSeq> fulls;
  std::vector<int> rows;
  for (const auto& y : ys) {
    fulls.push_back(with_eos(y));
    rows.push_back(b.add_target(0, decoder_input(fulls.back())));
  }
  const Tensor lsm = nn::log_softmax_rows(decoder_logits(p, cfg, b)).value();
  std::vector<double> out;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < fulls[i].size(); ++j) s += lsm.at(rows[i] + static_cast<int>(j), fulls[i][j]);
    out.push_back(s);
  }
  return out;
}

std::vector<double> btr_masked_log_probs(const ParamStore& params, const ModelConfig& cfg, const TokenSeq& x,
                                         const text::MaskedExample& ex) {
  return btr_masked_log_probs(params, cfg, x, std::vector<text::MaskedExample>{ex}).front();
}

std::vector<std::vector<double>> btr_masked_log_probs(const ParamStore& params, const ModelConfig& cfg,
                                                      const TokenSeq& x,
                                                      const std::vector<text::MaskedExample>& exs) {
  require_role(cfg, {Role::btr}, "btr_masked_log_probs");
  ParamBinder p(params);
  PackedBatch b;
  b.add_source(x);
  std::vector<int> rows;
  for (const auto& ex : exs) {
    if (ex.kappa.empty()) throw ArgumentError("btr_masked_log_probs: empty masked position set");
    rows.push_back(b.add_target(0, decoder_input(ex.masked)));
  }
  const Tensor lsm = nn::log_softmax_rows(decoder_logits(p, cfg, b)).value();
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < exs.size(); ++i) {
    std::vector<double> lp;
    for (int k : exs[i].kappa) lp.push_back(lsm.at(rows[i] + k, exs[i].original[static_cast<std::size_t>(k)]));
    out.push_back(std::move(lp));
  }
  return out;
}

std::vector<std::vector<double>> encoder_masked_log_probs(const ParamStore& params, const ModelConfig& cfg,
                                                          const TokenSeq& x,
                                                          const std::vector<text::MaskedExample>& exs) {
  require_role(cfg, {Role::encoder_only}, "encoder_masked_log_probs");
  ParamBinder p(params);
  std::vector<TokenSeq> seqs;
  for (const auto& ex : exs) {
    if (ex.kappa.empty()) throw ArgumentError("encoder_masked_log_probs: empty masked position set");
    seqs.push_back(encoder_only_input(x, ex.masked));
  }
  const Tensor lsm = nn::log_softmax_rows(encoder_mlm_logits(p, cfg, seqs)).value();
  std::vector<std::vector<double>> out;
  int base = 0;
  const int shift = static_cast<int>(x.size()) + 2;
  for (std::size_t i = 0; i < exs.size(); ++i) {
    std::vector<double> lp;
    for (int k : exs[i].kappa) lp.push_back(lsm.at(base + shift + k, exs[i].original[static_cast<std::size_t>(k)]));
    out.push_back(std::move(lp));
    base += static_cast<int>(seqs[i].size());
  }
  return out;
}

std::vector<double> classify_batch(const ParamStore& params, const ModelConfig& cfg, const std::vector<TokenSeq>& seqs) {
  ParamBinder p(params);
  const Tensor lsm = nn::log_softmax_rows(class_logits(p, cfg, seqs)).value();
  std::vector<double> out;
  for (int i = 0; i < lsm.rows(); ++i) out.push_back(std::exp(lsm.at(i, 1)));
  return out;
}

double classify(const ParamStore& params, const ModelConfig& cfg, const TokenSeq& seq) {
  return classify_batch(params, cfg, {seq}).front();
}

}  // namespace btr::model
