#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace btr::text {

struct TextPair {
  std::string src;
  std::string tgt;
  bool operator==(const TextPair&) const = default;
};

enum class PairFormat { jsonl, tsv };

/// Picks the format from the extension (.tsv, otherwise jsonl).
PairFormat format_for(const std::filesystem::path& path);
PairFormat parse_format(const std::string& name);

/// JSONL records are objects with string keys "src" and "tgt"; TSV records
/// are two tab-separated columns. Blank lines are skipped. Malformed
/// records throw ParseError carrying the 1-based line number.
std::vector<TextPair> load_pairs(const std::filesystem::path& path, PairFormat format);
void save_pairs(const std::filesystem::path& path, const std::vector<TextPair>& pairs, PairFormat format);

std::vector<TextPair> load_pairs(const std::filesystem::path& path);
void save_pairs(const std::filesystem::path& path, const std::vector<TextPair>& pairs);

}  // namespace btr::text
