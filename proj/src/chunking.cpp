#include "biorag/chunking.hpp"

#include <algorithm>
#include <cctype>

#include <nlohmann/json.hpp>
#include <unicode/uchar.h>

#include "biorag/error.hpp"
#include "utf8.hpp"

namespace biorag {

ChunkStrategy parse_chunk_strategy(std::string_view name) {
  if (name == "recursive") return ChunkStrategy::Recursive;
  if (name == "sentence") return ChunkStrategy::Sentence;
  if (name == "adaptive") return ChunkStrategy::Adaptive;
  throw Error(ErrorCode::InvalidConfig, "unknown chunking strategy '" + std::string(name) + "'");
}

std::string_view to_string(ChunkStrategy strategy) {
  switch (strategy) {
    case ChunkStrategy::Recursive: return "recursive";
    case ChunkStrategy::Sentence: return "sentence";
    case ChunkStrategy::Adaptive: return "adaptive";
  }
  return "recursive";
}

std::vector<std::string> default_separators() { return {"\n\n", "\n", ". ", " ", ""}; }

std::vector<std::string> default_abbreviations() {
  return {"e.g.", "i.e.", "Dr.", "Fig.", "Figs.", "et al.", "vs.", "cf.", "Eq.", "Ref.", "No.",
          "Mr.",  "Mrs.", "Ms.", "Prof.", "St.",  "approx.", "Vol.", "pp.", "Jr.", "Sr."};
}

void ChunkingConfig::validate() const {
  if (chunk_size == 0) throw Error(ErrorCode::InvalidConfig, "chunk_size must be positive");
  if (overlap >= chunk_size) {
    throw Error(ErrorCode::InvalidConfig, "overlap (" + std::to_string(overlap) + ") must be smaller than chunk_size (" +
                                              std::to_string(chunk_size) + ")");
  }
  if (separators.empty() || !separators.back().empty()) {
    throw Error(ErrorCode::InvalidConfig, "separator list must end with the empty separator");
  }
}

std::size_t Chunk::overlap_length() const {
  const auto total = utf8::count(text);
  const auto core = char_end - char_start;
  return total > core ? total - core : 0;
}

std::string Chunk::core_text() const {
  auto skip = overlap_length();
  std::size_t pos = 0;
  while (skip-- > 0 && pos < text.size()) pos += utf8::sequence_length(text, pos);
  return text.substr(pos);
}

nlohmann::json chunk_to_json(const Chunk& chunk) {
  return {{"chunk_id", chunk.chunk_id}, {"doc_id", chunk.doc_id},         {"ordinal", chunk.ordinal},
          {"text", chunk.text},         {"char_start", chunk.char_start}, {"char_end", chunk.char_end}};
}

Chunk chunk_from_json(const nlohmann::json& j) {
  try {
    Chunk c;
    c.chunk_id = j.at("chunk_id").get<std::string>();
    c.doc_id = j.at("doc_id").get<std::string>();
    c.ordinal = j.at("ordinal").get<std::size_t>();
    c.text = j.at("text").get<std::string>();
    c.char_start = j.at("char_start").get<std::size_t>();
    c.char_end = j.at("char_end").get<std::size_t>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaViolation, std::string("chunk record: ") + e.what());
  }
}

std::string make_chunk_id(std::string_view doc_id, std::size_t ordinal) {
  return std::string(doc_id) + "::" + std::to_string(ordinal);
}

namespace {

// Byte range [begin, end) of the source text; length in code points.
struct Unit {
  std::size_t begin;
  std::size_t end;
  std::size_t length;
};

// Byte offsets of one chunk: text is [begin, end), core is [core, end).
struct Span {
  std::size_t begin;
  std::size_t core;
  std::size_t end;
};

Unit make_unit(std::string_view text, std::size_t begin, std::size_t end) {
  return {begin, end, utf8::count(text.substr(begin, end - begin))};
}

void split_codepoints(std::string_view text, std::size_t begin, std::size_t end, std::vector<Unit>& out) {
  for (std::size_t pos = begin; pos < end;) {
    const auto next = std::min(end, pos + utf8::sequence_length(text, pos));
    out.push_back({pos, next, 1});
    pos = next;
  }
}

void unitize(std::string_view text, std::size_t begin, std::size_t end, const std::vector<std::string>& separators,
             std::size_t first_separator, std::size_t limit, std::vector<Unit>& out) {
  const auto unit = make_unit(text, begin, end);
  if (unit.length <= limit) {
    out.push_back(unit);
    return;
  }
  const auto segment = text.substr(begin, end - begin);
  for (auto i = first_separator; i < separators.size(); ++i) {
    const auto& sep = separators[i];
    if (sep.empty()) {
      split_codepoints(text, begin, end, out);
      return;
    }
    if (segment.find(sep) == std::string_view::npos) continue;
    std::size_t piece = 0;
    for (auto hit = segment.find(sep); hit != std::string_view::npos; hit = segment.find(sep, piece)) {
      const auto piece_end = hit + sep.size();
      unitize(text, begin + piece, begin + piece_end, separators, i + 1, limit, out);
      piece = piece_end;
    }
    if (piece < segment.size()) unitize(text, begin + piece, end, separators, i + 1, limit, out);
    return;
  }
  split_codepoints(text, begin, end, out);
}

// Greedy packing. When the next unit overflows the current chunk, the chunk is
// emitted and the next one is seeded with the longest suffix of whole units
// that fits within `overlap` and still leaves room for the incoming unit.
std::vector<Span> pack(const std::vector<Unit>& units, std::size_t limit, std::size_t overlap) {
  std::vector<Span> spans;
  std::size_t first = 0;
  std::size_t core = 0;
  std::size_t length = 0;
  for (std::size_t i = 0; i < units.size(); ++i) {
    const auto& unit = units[i];
    if (i > core && length + unit.length > limit) {
      spans.push_back({units[first].begin, units[core].begin, units[i - 1].end});
      std::size_t seed = i;
      std::size_t seeded = 0;
      while (seed > first) {
        const auto next = seeded + units[seed - 1].length;
        if (next > overlap || next + unit.length > limit) break;
        seeded = next;
        --seed;
      }
      first = seed;
      core = i;
      length = seeded;
    }
    length += unit.length;
  }
  if (core < units.size()) spans.push_back({units[first].begin, units[core].begin, units.back().end});
  return spans;
}

std::vector<Span> recursive_spans(std::string_view text, std::size_t begin, std::size_t end,
                                  const std::vector<std::string>& separators, std::size_t limit,
                                  std::size_t overlap) {
  if (begin >= end) return {};
  std::vector<Unit> units;
  unitize(text, begin, end, separators, 0, limit, units);
  return pack(units, limit, overlap);
}

bool is_space(char c) { return c == ' ' || c == '\n' || c == '\t' || c == '\r'; }

bool is_closer(char c) { return c == '"' || c == '\'' || c == ')' || c == ']'; }

bool ends_with_abbreviation(std::string_view text, std::size_t end, const std::vector<std::string>& abbreviations) {
  const auto prefix = text.substr(0, end);
  for (const auto& abbr : abbreviations) {
    if (abbr.empty() || prefix.size() < abbr.size()) continue;
    if (prefix.compare(prefix.size() - abbr.size(), abbr.size(), abbr) != 0) continue;
    const auto before = prefix.size() - abbr.size();
    if (before == 0 || is_space(prefix[before - 1]) || prefix[before - 1] == '(') return true;
  }
  return false;
}

bool starts_sentence(std::string_view text, std::size_t pos) {
  auto p = pos;
  const auto c = static_cast<UChar32>(utf8::next(text, p));
  return u_isupper(c) || u_istitle(c) || u_isdigit(c);
}

// Byte ranges [begin, end) of sentences tiling text[begin, end). Inter-sentence
// whitespace belongs to the preceding sentence.
std::vector<Unit> sentence_units(std::string_view text, std::size_t begin, std::size_t end,
                                 const std::vector<std::string>& abbreviations) {
  std::vector<Unit> units;
  std::size_t start = begin;
  for (std::size_t i = begin; i < end; ++i) {
    const char c = text[i];
    if (c != '.' && c != '!' && c != '?') continue;
    auto j = i + 1;
    while (j < end && is_closer(text[j])) ++j;
    auto k = j;
    while (k < end && is_space(text[k])) ++k;
    if (k == j || k >= end) continue;
    if (!starts_sentence(text.substr(0, end), k)) continue;
    if (c == '.' && ends_with_abbreviation(text.substr(begin, end - begin), i + 1 - begin, abbreviations)) continue;
    units.push_back(make_unit(text, start, k));
    start = k;
    i = k - 1;
  }
  if (start < end) units.push_back(make_unit(text, start, end));
  return units;
}

std::vector<Span> sentence_spans(std::string_view text, std::size_t begin, std::size_t end,
                                 const ChunkingConfig& cfg) {
  static const std::vector<std::string> kWordSeparators = {" ", ""};
  std::vector<Unit> units;
  for (const auto& sentence : sentence_units(text, begin, end, cfg.abbreviations)) {
    if (sentence.length <= cfg.chunk_size) {
      units.push_back(sentence);
      continue;
    }
    for (const auto& piece : recursive_spans(text, sentence.begin, sentence.end, kWordSeparators, cfg.chunk_size, 0)) {
      units.push_back(make_unit(text, piece.begin, piece.end));
    }
  }
  return pack(units, cfg.chunk_size, cfg.overlap);
}

// Paragraphs tile the text; each carries the blank-line run that follows it.
std::vector<Unit> paragraph_units(std::string_view text) {
  std::vector<Unit> units;
  std::size_t start = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_space(text[i])) {
      ++i;
      continue;
    }
    auto j = i;
    std::size_t newlines = 0;
    while (j < text.size() && is_space(text[j])) newlines += text[j++] == '\n';
    if (newlines >= 2 && j < text.size() && i > start) {
      units.push_back(make_unit(text, start, j));
      start = j;
    }
    i = j;
  }
  if (start < text.size()) units.push_back(make_unit(text, start, text.size()));
  return units;
}

std::vector<Span> adaptive_spans(std::string_view text, const ChunkingConfig& cfg) {
  std::vector<Span> spans;
  std::vector<Unit> group;
  auto flush = [&] {
    const auto packed = pack(group, cfg.chunk_size, cfg.overlap);
    spans.insert(spans.end(), packed.begin(), packed.end());
    group.clear();
  };
  for (const auto& paragraph : paragraph_units(text)) {
    if (paragraph.length <= cfg.chunk_size) {
      group.push_back(paragraph);
      continue;
    }
    flush();
    const auto inner = sentence_spans(text, paragraph.begin, paragraph.end, cfg);
    spans.insert(spans.end(), inner.begin(), inner.end());
  }
  flush();
  return spans;
}

std::vector<Chunk> materialize(std::string_view text, const std::vector<Span>& spans, std::string_view doc_id) {
  std::vector<Chunk> chunks;
  chunks.reserve(spans.size());
  // Spans are ordered, so byte->code point conversion can advance a cursor.
  std::size_t cursor_byte = 0;
  std::size_t cursor_cp = 0;
  auto to_cp = [&](std::size_t byte) {
    if (byte < cursor_byte) {
      cursor_byte = 0;
      cursor_cp = 0;
    }
    while (cursor_byte < byte) {
      cursor_byte += utf8::sequence_length(text, cursor_byte);
      ++cursor_cp;
    }
    return cursor_cp;
  };
  for (const auto& span : spans) {
    Chunk c;
    c.doc_id = std::string(doc_id);
    c.ordinal = chunks.size();
    c.chunk_id = make_chunk_id(doc_id, c.ordinal);
    c.text = std::string(text.substr(span.begin, span.end - span.begin));
    c.char_start = to_cp(span.core);
    c.char_end = to_cp(span.end);
    chunks.push_back(std::move(c));
  }
  return chunks;
}

}  // namespace

std::vector<Chunk> split_recursive(std::string_view text, const ChunkingConfig& cfg, std::string_view doc_id) {
  cfg.validate();
  return materialize(text, recursive_spans(text, 0, text.size(), cfg.separators, cfg.chunk_size, cfg.overlap), doc_id);
}

std::vector<std::string> split_sentences(std::string_view text, const std::vector<std::string>& abbreviations) {
  std::vector<std::string> sentences;
  for (const auto& unit : sentence_units(text, 0, text.size(), abbreviations)) {
    auto s = text.substr(unit.begin, unit.end - unit.begin);
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    if (!s.empty()) sentences.emplace_back(s);
  }
  return sentences;
}

std::vector<Chunk> split_sentence_aware(std::string_view text, const ChunkingConfig& cfg, std::string_view doc_id) {
  cfg.validate();
  return materialize(text, sentence_spans(text, 0, text.size(), cfg), doc_id);
}

std::vector<Chunk> split_adaptive(std::string_view text, const ChunkingConfig& cfg, std::string_view doc_id) {
  cfg.validate();
  return materialize(text, adaptive_spans(text, cfg), doc_id);
}

std::vector<Chunk> chunk_text(std::string_view text, const ChunkingConfig& cfg, std::string_view doc_id) {
  switch (cfg.strategy) {
    case ChunkStrategy::Recursive: return split_recursive(text, cfg, doc_id);
    case ChunkStrategy::Sentence: return split_sentence_aware(text, cfg, doc_id);
    case ChunkStrategy::Adaptive: return split_adaptive(text, cfg, doc_id);
  }
  return {};
}

std::vector<Chunk> chunk_document(const Document& doc, const ChunkingConfig& cfg) {
  return chunk_text(doc.text, cfg, doc.doc_id);
}

std::vector<Chunk> chunk_corpus(const Corpus& corpus, const ChunkingConfig& cfg) {
  std::vector<Chunk> all;
  for (const auto& doc : corpus.documents()) {
    auto chunks = chunk_document(doc, cfg);
    std::move(chunks.begin(), chunks.end(), std::back_inserter(all));
  }
  return all;
}

std::string reconstruct(const std::vector<Chunk>& chunks) {
  std::string out;
  for (const auto& c : chunks) out += c.core_text();
  return out;
}

}  // namespace biorag
