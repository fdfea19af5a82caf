#pragma once

#include "btr/common/rng.hpp"
#include "btr/model/transformer.hpp"
#include "btr/text/vocab.hpp"

namespace btr::testing {

// Tiny vocabulary: reserved ids, 4 sentinels and `n` content symbols.
inline text::Vocabulary small_vocab(int n = 6) {
  text::Vocabulary v(4);
  for (int i = 0; i < n; ++i) v.add(std::string(1, static_cast<char>('a' + i)));
  return v;
}

inline model::ModelConfig tiny_config(int vocab_size, model::Role role, double init_std = 0.3) {
  model::ModelConfig c;
  c.vocab_size = vocab_size;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = 2;
  c.d_ff = 16;
  c.max_len = 24;
  c.init_std = init_std;
  return c.with_role(role);
}

inline TokenSeq random_seq(const text::Vocabulary& v, int len, Rng& rng) {
  TokenSeq s;
  const int first = v.first_content_id();
  for (int i = 0; i < len; ++i) s.push_back(first + rng.below(v.size() - first));
  return s;
}

inline int other_token(const text::Vocabulary& v, int tok, Rng& rng) {
  const int first = v.first_content_id();
  int t = tok;
  while (t == tok) t = first + rng.below(v.size() - first);
  return t;
}

}  // namespace btr::testing
