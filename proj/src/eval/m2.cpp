#include "btr/eval/m2.hpp"

#include <fstream>
#include <sstream>

#include "btr/common/error.hpp"
#include "btr/text/vocab.hpp"

namespace btr::eval {

namespace {

std::vector<std::string> split_fields(const std::string& s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto next = s.find("|||", pos);
    out.push_back(s.substr(pos, next == std::string::npos ? std::string::npos : next - pos));
    if (next == std::string::npos) return out;
    pos = next + 3;
  }
}

int parse_int(const std::string& s, std::size_t line, const char* what) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(std::string("bad ") + what + " '" + s + "'", line);
  }
}

}  // namespace

std::vector<EditSet> M2Sentence::gold_sets() const {
  std::vector<EditSet> out;
  for (const auto& ann : annotators) {
    EditSet set;
    for (const auto& e : ann) set.push_back(e.edit);
    std::sort(set.begin(), set.end());
    out.push_back(std::move(set));
  }
  return out;
}

std::vector<M2Sentence> parse_m2(std::istream& in) {
  std::vector<M2Sentence> out;
  bool open = false;
  std::string line;
  std::size_t lineno = 0;
  auto close = [&] {
    if (open && out.back().annotators.empty()) out.back().annotators.emplace_back();
    open = false;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      close();
      continue;
    }
    if (line.rfind("S", 0) == 0 && (line.size() == 1 || line[1] == ' ')) {
      close();
      out.push_back({text::split_whitespace(line.substr(1)), {}});
      open = true;
      continue;
    }
    if (line.rfind("A ", 0) != 0) throw ParseError("expected an S or A line", lineno);
    if (!open) throw ParseError("A line before any S line", lineno);
    const auto fields = split_fields(line.substr(2));
    if (fields.size() < 3) throw ParseError("A line needs at least span, type and correction fields", lineno);
    const auto span = text::split_whitespace(fields[0]);
    if (span.size() != 2) throw ParseError("A line span must be 'start end'", lineno);
    const int start = parse_int(span[0], lineno, "start offset");
    const int end = parse_int(span[1], lineno, "end offset");
    int annotator = 0;
    if (fields.size() >= 6) {
      const auto id = text::split_whitespace(fields[5]);
      if (id.size() != 1) throw ParseError("bad annotator id '" + fields[5] + "'", lineno);
      annotator = parse_int(id[0], lineno, "annotator id");
    }
    if (annotator < 0) throw ParseError("negative annotator id", lineno);
    M2Sentence& sent = out.back();
    if (sent.annotators.size() <= static_cast<std::size_t>(annotator)) sent.annotators.resize(static_cast<std::size_t>(annotator) + 1);
    if (fields[1] == "noop" || (start == -1 && end == -1)) continue;
    if (start < 0 || end < start || end > static_cast<int>(sent.source.size())) {
      throw ParseError("span " + span[0] + " " + span[1] + " outside the sentence", lineno);
    }
    Tokens repl = fields[2] == "-NONE-" ? Tokens{} : text::split_whitespace(fields[2]);
    sent.annotators[static_cast<std::size_t>(annotator)].push_back({{start, end, std::move(repl)}, fields[1]});
  }
  close();
  return out;
}

std::vector<M2Sentence> parse_m2(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("M2 file '" + path.string() + "' not found");
  return parse_m2(in);
}

void emit_m2(std::ostream& out, const std::vector<M2Sentence>& sentences) {
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    const M2Sentence& sent = sentences[s];
    out << "S";
    for (const auto& t : sent.source) out << ' ' << t;
    out << '\n';
    for (std::size_t a = 0; a < sent.annotators.size(); ++a) {
      if (sent.annotators[a].empty()) {
        out << "A -1 -1|||noop|||-NONE-|||REQUIRED|||-NONE-|||" << a << '\n';
        continue;
      }
      for (const M2Edit& e : sent.annotators[a]) {
        std::string repl;
        for (std::size_t i = 0; i < e.edit.repl.size(); ++i) repl += (i ? " " : "") + e.edit.repl[i];
        out << "A " << e.edit.start << ' ' << e.edit.end << "|||" << e.type << "|||"
            << (repl.empty() ? "-NONE-" : repl) << "|||REQUIRED|||-NONE-|||" << a << '\n';
      }
    }
    out << '\n';
  }
}

void emit_m2(const std::filesystem::path& path, const std::vector<M2Sentence>& sentences) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write M2 file '" + path.string() + "'");
  emit_m2(out, sentences);
}

M2Sentence m2_from_pair(const Tokens& source, const Tokens& target) {
  M2Sentence s{source, {{}}};
  for (Edit& e : extract_edits(source, target)) s.annotators[0].push_back({std::move(e), "R:OTHER"});
  return s;
}

}  // namespace btr::eval
