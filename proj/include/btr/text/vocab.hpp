#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "btr/common/tokens.hpp"
#include "json.hpp"

namespace btr::text {

/// Token <-> id map. Ids below first_content_id() are reserved:
///   <pad> <s> </s> <M> <sep> <unk> <0> <1> followed by the sentinels
///   <X0> ... <X{n-1}>.
/// Reserved ids depend only on the sentinel count, so they are stable
/// across save/load.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kMask = 3;
  static constexpr TokenId kSep = 4;
  static constexpr TokenId kUnk = 5;
  static constexpr TokenId kLabel0 = 6;
  static constexpr TokenId kLabel1 = 7;
  static constexpr TokenId kFirstSentinel = 8;

  explicit Vocabulary(int n_sentinels = 16);

  /// Adds a content token (no-op if present) and returns its id.
  TokenId add(const std::string& token);

  int size() const { return static_cast<int>(tokens_.size()); }
  int n_sentinels() const { return n_sentinels_; }
  TokenId first_content_id() const { return kFirstSentinel + n_sentinels_; }
  bool contains(std::string_view token) const;
  /// Id of a token; unknown tokens map to <unk>.
  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;

  bool is_reserved(TokenId id) const { return id < first_content_id(); }
  bool is_sentinel(TokenId id) const { return id >= kFirstSentinel && id < first_content_id(); }
  TokenId sentinel(int i) const;
  std::vector<TokenId> content_ids() const;

  /// Whitespace tokenization. A word missing from the vocabulary falls back
  /// to its characters; characters that are also unknown become <unk>.
  TokenSeq encode(std::string_view text) const;
  std::string decode(const TokenSeq& ids) const;

  /// Adds every whitespace token of `text`.
  void add_words(std::string_view text);

  /// JSON list of tokens in id order.
  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  int n_sentinels_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> ids_;
};

std::vector<std::string> split_whitespace(std::string_view text);

}  // namespace btr::text
