#include "btr/model/incremental.hpp"

#include "btr/common/error.hpp"
#include "btr/model/transformer.hpp"
#include "btr/nn/ops.hpp"

namespace btr::model {

using nn::Tensor;
using nn::Var;

IncrementalDecoder::IncrementalDecoder(const nn::ParamStore& params, const ModelConfig& cfg, const TokenSeq& x)
    : params_(params), cfg_(cfg), binder_(params) {
  require_role(cfg, {Role::base_l2r, Role::r2l}, "incremental decoding");
  Encoded enc = encode_packed(binder_, cfg_, {x});
  src_len_ = static_cast<int>(x.size());
  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string pre = "dec." + std::to_string(l) + ".cross.";
    cross_k_.push_back(nn::constant(nn::linear(enc.h, binder_(pre + "wk"), binder_(pre + "bk")).value()));
    cross_v_.push_back(nn::constant(nn::linear(enc.h, binder_(pre + "wv"), binder_(pre + "bv")).value()));
  }
}

DecoderCache IncrementalDecoder::empty_cache() const {
  DecoderCache c;
  c.k.resize(static_cast<std::size_t>(cfg_.n_layers));
  c.v.resize(static_cast<std::size_t>(cfg_.n_layers));
  return c;
}

Tensor IncrementalDecoder::step(const std::vector<DecoderCache*>& caches, const std::vector<int>& tokens) {
  if (caches.size() != tokens.size() || caches.empty()) throw ArgumentError("decoder step: one token per cache required");
  const int b = static_cast<int>(caches.size()), d = cfg_.d_model;
  std::vector<int> pos;
  for (DecoderCache* c : caches) {
    if (c->length >= cfg_.max_len) throw LengthError("decoder step: prefix reached max_len " + std::to_string(cfg_.max_len));
    pos.push_back(c->length);
  }
  auto& p = binder_;
  Var h = nn::add(nn::embedding(p("emb.tok"), tokens), nn::embedding(p("emb.tgt_pos"), pos));
  const nn::kernels::AttentionMask cross_mask = nn::kernels::AttentionMask::full(b, src_len_);

  for (int l = 0; l < cfg_.n_layers; ++l) {
    const auto lu = static_cast<std::size_t>(l);
    const std::string pre = "dec." + std::to_string(l) + ".";
    auto ln = [&](const Var& x, const std::string& n) { return nn::layer_norm(x, p(pre + n + "g"), p(pre + n + "b")); };

    Var a = ln(h, "ln1.");
    Var q = nn::linear(a, p(pre + "self.wq"), p(pre + "self.bq"));
    const Tensor k_new = nn::linear(a, p(pre + "self.wk"), p(pre + "self.bk")).value();
    const Tensor v_new = nn::linear(a, p(pre + "self.wv"), p(pre + "self.bv")).value();
    int total = 0;
    for (int i = 0; i < b; ++i) {
      DecoderCache& c = *caches[static_cast<std::size_t>(i)];
      c.k[lu].insert(c.k[lu].end(), k_new.row(i).begin(), k_new.row(i).end());
      c.v[lu].insert(c.v[lu].end(), v_new.row(i).begin(), v_new.row(i).end());
      total += c.length + 1;
    }
    Tensor keys({total, d}), values({total, d});
    nn::kernels::AttentionMask mask(b, total, false);
    int row = 0;
    for (int i = 0; i < b; ++i) {
      const DecoderCache& c = *caches[static_cast<std::size_t>(i)];
      std::copy(c.k[lu].begin(), c.k[lu].end(), keys.ptr() + static_cast<std::size_t>(row) * d);
      std::copy(c.v[lu].begin(), c.v[lu].end(), values.ptr() + static_cast<std::size_t>(row) * d);
      for (int j = 0; j <= c.length; ++j) mask.set(i, row + j, true);
      row += c.length + 1;
    }
    Var att = nn::attention(q, nn::constant(std::move(keys)), nn::constant(std::move(values)), mask, cfg_.n_heads);
    h = nn::add(h, nn::linear(att, p(pre + "self.wo"), p(pre + "self.bo")));

    Var qc = nn::linear(ln(h, "ln2."), p(pre + "cross.wq"), p(pre + "cross.bq"));
    Var catt = nn::attention(qc, cross_k_[lu], cross_v_[lu], cross_mask, cfg_.n_heads);
    h = nn::add(h, nn::linear(catt, p(pre + "cross.wo"), p(pre + "cross.bo")));

    Var f = ln(h, "ln3.");
    f = nn::linear(nn::gelu(nn::linear(f, p(pre + "ff.w1"), p(pre + "ff.b1"))), p(pre + "ff.w2"), p(pre + "ff.b2"));
    h = nn::add(h, f);
  }
  for (DecoderCache* c : caches) ++c->length;
  Var out = nn::layer_norm(h, p("dec.ln.g"), p("dec.ln.b"));
  Var logits = cfg_.tie_embeddings ? nn::matmul_nt(out, p("emb.tok")) : nn::matmul(out, p("out.w"));
  return nn::log_softmax_rows(nn::add_row(logits, p("out.b"))).value();
}

}  // namespace btr::model
