#include "btr/text/vocab.hpp"

#include <fstream>

#include "btr/common/error.hpp"

namespace btr::text {

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

Vocabulary::Vocabulary(int n_sentinels) : n_sentinels_(n_sentinels) {
  if (n_sentinels < 0) throw ConfigError("vocabulary: negative sentinel count");
  for (const char* t : {"<pad>", "<s>", "</s>", "<M>", "<sep>", "<unk>", "<0>", "<1>"}) {
    ids_.emplace(t, static_cast<TokenId>(tokens_.size()));
    tokens_.emplace_back(t);
  }
  for (int i = 0; i < n_sentinels; ++i) {
    std::string s = "<X" + std::to_string(i) + ">";
    ids_.emplace(s, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(std::move(s));
  }
}

TokenId Vocabulary::add(const std::string& token) {
  auto it = ids_.find(token);
  if (it != ids_.end()) return it->second;
  if (token.empty()) throw ArgumentError("vocabulary: empty token");
  const auto id = static_cast<TokenId>(tokens_.size());
  ids_.emplace(token, id);
  tokens_.push_back(token);
  return id;
}

bool Vocabulary::contains(std::string_view token) const { return ids_.count(std::string(token)) != 0; }

TokenId Vocabulary::id(std::string_view token) const {
  auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || id >= size()) throw ArgumentError("vocabulary: id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

TokenId Vocabulary::sentinel(int i) const {
  if (i < 0 || i >= n_sentinels_) {
    throw ConfigError("sentinel budget exhausted: need <X" + std::to_string(i) + "> but only " +
                      std::to_string(n_sentinels_) + " sentinels exist");
  }
  return kFirstSentinel + i;
}

std::vector<TokenId> Vocabulary::content_ids() const {
  std::vector<TokenId> out;
  for (TokenId i = first_content_id(); i < size(); ++i) out.push_back(i);
  return out;
}

TokenSeq Vocabulary::encode(std::string_view text) const {
  TokenSeq out;
  for (const std::string& w : split_whitespace(text)) {
    auto it = ids_.find(w);
    if (it != ids_.end()) {
      out.push_back(it->second);
      continue;
    }
    for (char c : w) out.push_back(id(std::string(1, c)));
  }
  return out;
}

std::string Vocabulary::decode(const TokenSeq& ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    out += token(ids[i]);
  }
  return out;
}

void Vocabulary::add_words(std::string_view text) {
  for (const std::string& w : split_whitespace(text)) add(w);
}

nlohmann::json Vocabulary::to_json() const { return tokens_; }

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw DataError("vocabulary file must hold a JSON list");
  const auto tokens = j.get<std::vector<std::string>>();
  int n_sentinels = 0;
  while (static_cast<std::size_t>(kFirstSentinel + n_sentinels) < tokens.size() &&
         tokens[static_cast<std::size_t>(kFirstSentinel + n_sentinels)] == "<X" + std::to_string(n_sentinels) + ">") {
    ++n_sentinels;
  }
  Vocabulary v(n_sentinels);
  for (std::size_t i = 0; i < static_cast<std::size_t>(v.first_content_id()); ++i) {
    if (i >= tokens.size() || tokens[i] != v.tokens_[i]) {
      throw DataError("vocabulary file: reserved token at id " + std::to_string(i) + " does not match");
    }
  }
  for (std::size_t i = static_cast<std::size_t>(v.first_content_id()); i < tokens.size(); ++i) {
    if (v.contains(tokens[i])) throw DataError("vocabulary file: duplicate token '" + tokens[i] + "'");
    v.add(tokens[i]);
  }
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary '" + path.string() + "'");
  out << to_json().dump() << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("vocabulary file '" + path.string() + "' not found");
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("vocabulary file '" + path.string() + "': " + e.what());
  }
}

}  // namespace btr::text
