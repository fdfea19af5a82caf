#include "btr/text/corpus.hpp"

#include <algorithm>
#include <numeric>

#include "btr/common/error.hpp"

namespace btr::text {

void to_json(nlohmann::json& j, const LanguageParams& p) {
  j = {{"alphabet_size", p.alphabet_size}, {"min_len", p.min_len},
       {"max_len", p.max_len},             {"preferred_successors", p.preferred_successors},
       {"preferred_mass", p.preferred_mass}, {"seed", p.seed}};
}

void from_json(const nlohmann::json& j, LanguageParams& p) {
  p.alphabet_size = j.value("alphabet_size", p.alphabet_size);
  p.min_len = j.value("min_len", p.min_len);
  p.max_len = j.value("max_len", p.max_len);
  p.preferred_successors = j.value("preferred_successors", p.preferred_successors);
  p.preferred_mass = j.value("preferred_mass", p.preferred_mass);
  p.seed = j.value("seed", p.seed);
}

void to_json(nlohmann::json& j, const NoiseParams& p) {
  j = {{"rate", p.rate}, {"clean_fraction", p.clean_fraction}, {"op_weights", p.op_weights}};
}

void from_json(const nlohmann::json& j, NoiseParams& p) {
  p.rate = j.value("rate", p.rate);
  p.clean_fraction = j.value("clean_fraction", p.clean_fraction);
  p.op_weights = j.value("op_weights", p.op_weights);
}

MarkovLanguage::MarkovLanguage(const LanguageParams& params) : params_(params) {
  if (params.alphabet_size < 2 || params.alphabet_size > 52) throw ConfigError("language: alphabet_size must be in [2, 52]");
  if (params.min_len < 1 || params.max_len < params.min_len) throw ConfigError("language: need 1 <= min_len <= max_len");
  if (params.preferred_successors < 1 || params.preferred_successors > params.alphabet_size) {
    throw ConfigError("language: preferred_successors out of range");
  }
  if (!(params.preferred_mass > 0.0 && params.preferred_mass <= 1.0)) throw ConfigError("language: preferred_mass in (0, 1]");
  for (int i = 0; i < params.alphabet_size; ++i) {
    symbols_.emplace_back(1, i < 26 ? static_cast<char>('a' + i) : static_cast<char>('A' + i - 26));
  }
  const int a = params.alphabet_size;
  const int ctx = a + 1;  // index a marks sentence start
  Rng rng(params.seed);
  cdf_.resize(static_cast<std::size_t>(ctx * ctx));
  std::vector<int> order(static_cast<std::size_t>(a));
  for (auto& row : cdf_) {
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order.begin(), order.end());
    std::vector<double> w(static_cast<std::size_t>(a), (1.0 - params.preferred_mass) / a);
    std::vector<double> pref(static_cast<std::size_t>(params.preferred_successors));
    double total = 0.0;
    for (double& x : pref) total += (x = 0.2 + rng.uniform());
    for (std::size_t i = 0; i < pref.size(); ++i) w[static_cast<std::size_t>(order[i])] += params.preferred_mass * pref[i] / total;
    row.resize(w.size());
    std::partial_sum(w.begin(), w.end(), row.begin());
    row.back() = 1.0;
  }
}

int MarkovLanguage::pick(int prev2, int prev1, Rng& rng) const {
  const auto& row = cdf_[static_cast<std::size_t>(prev2 * (params_.alphabet_size + 1) + prev1)];
  const double u = rng.uniform();
  return static_cast<int>(std::upper_bound(row.begin(), row.end(), u) - row.begin());
}

std::vector<std::string> MarkovLanguage::sample(Rng& rng) const {
  const int len = params_.min_len + rng.below(params_.max_len - params_.min_len + 1);
  std::vector<std::string> out;
  int p2 = params_.alphabet_size, p1 = params_.alphabet_size;
  for (int i = 0; i < len; ++i) {
    const int s = pick(p2, p1, rng);
    out.push_back(symbols_[static_cast<std::size_t>(s)]);
    p2 = p1;
    p1 = s;
  }
  return out;
}

Vocabulary MarkovLanguage::vocabulary(int n_sentinels) const {
  Vocabulary v(n_sentinels);
  for (const auto& s : symbols_) v.add(s);
  return v;
}

std::vector<std::string> corrupt(const std::vector<std::string>& tgt, const std::vector<std::string>& alphabet,
                                 const NoiseParams& noise, Rng& rng) {
  if (noise.op_weights.size() != 5) throw ConfigError("noise: op_weights needs 5 entries");
  const double wsum = std::accumulate(noise.op_weights.begin(), noise.op_weights.end(), 0.0);
  if (!(wsum > 0.0)) throw ConfigError("noise: op_weights must have positive mass");
  const int a = static_cast<int>(alphabet.size());
  auto other_than = [&](const std::string& s) {
    std::string t;
    do t = alphabet[static_cast<std::size_t>(rng.below(a))];
    while (t == s);
    return t;
  };

  std::vector<std::string> src;
  for (std::size_t i = 0; i < tgt.size(); ++i) {
    if (!rng.bernoulli(noise.rate)) {
      src.push_back(tgt[i]);
      continue;
    }
    double u = rng.uniform() * wsum;
    int op = 0;
    while (op < 4 && u >= noise.op_weights[static_cast<std::size_t>(op)]) u -= noise.op_weights[static_cast<std::size_t>(op++)];
    // A swap that would not change anything degrades to a substitution.
    if (op == 4 && (i + 1 >= tgt.size() || tgt[i] == tgt[i + 1])) op = 0;
    switch (op) {
      case 0: src.push_back(other_than(tgt[i])); break;
      case 1: break;
      case 2:
        src.push_back(alphabet[static_cast<std::size_t>(rng.below(a))]);
        src.push_back(tgt[i]);
        break;
      case 3:
        src.push_back(tgt[i]);
        src.push_back(tgt[i]);
        break;
      default:
        src.push_back(tgt[i + 1]);
        src.push_back(tgt[i]);
        ++i;
        break;
    }
  }
  if (src.empty()) src.push_back(other_than(tgt.front()));
  return src;
}

std::string join_tokens(const std::vector<std::string>& toks) {
  std::string out;
  for (std::size_t i = 0; i < toks.size(); ++i) {
    if (i) out.push_back(' ');
    out += toks[i];
  }
  return out;
}

std::vector<TextPair> synth_gec_corpus(int n, const LanguageParams& lang, const NoiseParams& noise, const Rng& rng) {
  if (n < 0) throw ConfigError("corpus: negative size");
  if (!(noise.rate >= 0.0 && noise.rate < 1.0)) throw ConfigError("noise: rate must lie in [0, 1)");
  if (!(noise.clean_fraction >= 0.0 && noise.clean_fraction <= 1.0)) throw ConfigError("noise: clean_fraction in [0, 1]");
  const MarkovLanguage language(lang);
  std::vector<TextPair> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng r = rng.split(static_cast<std::uint64_t>(i));
    const auto tgt = language.sample(r);
    const bool clean = noise.rate == 0.0 || r.bernoulli(noise.clean_fraction);
    const auto src = clean ? tgt : corrupt(tgt, language.symbols(), noise, r);
    out[static_cast<std::size_t>(i)] = {join_tokens(src), join_tokens(tgt)};
  }
  return out;
}

}  // namespace btr::text
