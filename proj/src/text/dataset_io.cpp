#include "btr/text/dataset_io.hpp"

#include <fstream>

#include "btr/common/error.hpp"
#include "json.hpp"

namespace btr::text {

PairFormat format_for(const std::filesystem::path& path) {
  return path.extension() == ".tsv" ? PairFormat::tsv : PairFormat::jsonl;
}

PairFormat parse_format(const std::string& name) {
  if (name == "jsonl") return PairFormat::jsonl;
  if (name == "tsv") return PairFormat::tsv;
  throw ConfigError("unknown pair format '" + name + "' (expected jsonl or tsv)");
}

namespace {

std::string field(const nlohmann::json& rec, const char* key, std::size_t line) {
  auto it = rec.find(key);
  if (it == rec.end()) throw ParseError(std::string("record missing field \"") + key + "\"", line);
  if (!it->is_string()) throw ParseError(std::string("field \"") + key + "\" must be a string", line);
  return it->get<std::string>();
}

}  // namespace

std::vector<TextPair> load_pairs(const std::filesystem::path& path, PairFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("pair file '" + path.string() + "' not found");
  std::vector<TextPair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (format == PairFormat::tsv) {
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw ParseError("expected two tab-separated columns", lineno);
      if (line.find('\t', tab + 1) != std::string::npos) throw ParseError("more than two columns", lineno);
      out.push_back({line.substr(0, tab), line.substr(tab + 1)});
      continue;
    }
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), lineno);
    }
    if (!rec.is_object()) throw ParseError("record must be a JSON object", lineno);
    out.push_back({field(rec, "src", lineno), field(rec, "tgt", lineno)});
  }
  return out;
}

void save_pairs(const std::filesystem::path& path, const std::vector<TextPair>& pairs, PairFormat format) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write pair file '" + path.string() + "'");
  for (const TextPair& p : pairs) {
    if (format == PairFormat::tsv) {
      for (const std::string* s : {&p.src, &p.tgt})
        if (s->find_first_of("\t\n\r") != std::string::npos)
          throw DataError("tsv cannot hold tabs or newlines inside a column");
      out << p.src << '\t' << p.tgt << '\n';
    } else {
      out << nlohmann::json{{"src", p.src}, {"tgt", p.tgt}}.dump() << '\n';
    }
  }
}

std::vector<TextPair> load_pairs(const std::filesystem::path& path) { return load_pairs(path, format_for(path)); }

void save_pairs(const std::filesystem::path& path, const std::vector<TextPair>& pairs) {
  save_pairs(path, pairs, format_for(path));
}

}  // namespace btr::text
