#include "biorag/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <optional>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>
#include <unicode/normalizer2.h>
#include <unicode/unistr.h>

#include "biorag/error.hpp"
#include "utf8.hpp"

namespace biorag {

using json = nlohmann::json;

void Corpus::add(Document doc) {
  if (doc.doc_id.empty()) throw Error(ErrorCode::SchemaViolation, "document with empty doc_id");
  if (doc.text.empty()) throw Error(ErrorCode::SchemaViolation, "document '" + doc.doc_id + "' has empty text");
  if (contains(doc.doc_id)) throw Error(ErrorCode::DuplicateDocId, doc.doc_id);
  documents_.push_back(std::move(doc));
}

bool Corpus::contains(std::string_view doc_id) const {
  return std::any_of(documents_.begin(), documents_.end(),
                     [&](const Document& d) { return d.doc_id == doc_id; });
}

// ---------------------------------------------------------------------------
// HTML

namespace {

std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool is_html_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f'; }

// Elements whose content is never text.
bool is_opaque_element(std::string_view name) {
  return name == "script" || name == "style" || name == "noscript" || name == "template" || name == "title";
}

// Number of newlines a boundary of this element forces; 0 for inline.
int block_break(std::string_view name) {
  static constexpr std::array<std::string_view, 22> kParagraph = {
      "p",       "h1",     "h2",   "h3",  "h4",     "h5",     "h6",  "blockquote", "section", "article", "table",
      "ul",      "ol",     "pre",  "figure", "hr",  "header", "footer", "main",    "aside",   "nav",     "dl"};
  static constexpr std::array<std::string_view, 11> kLine = {
      "div", "br", "li", "tr", "dt", "dd", "figcaption", "caption", "address", "thead", "tbody"};
  if (std::find(kParagraph.begin(), kParagraph.end(), name) != kParagraph.end()) return 2;
  if (std::find(kLine.begin(), kLine.end(), name) != kLine.end()) return 1;
  return 0;
}

struct NamedEntity {
  std::string_view name;
  char32_t code;
};

constexpr std::array<NamedEntity, 40> kEntities = {{
    {"amp", U'&'},      {"lt", U'<'},       {"gt", U'>'},       {"quot", U'"'},     {"apos", U'\''},
    {"nbsp", U' '},     {"ensp", U' '},     {"emsp", U' '},     {"thinsp", U' '},   {"ndash", U'–'},
    {"mdash", U'—'}, {"lsquo", U'‘'}, {"rsquo", U'’'}, {"ldquo", U'“'}, {"rdquo", U'”'},
    {"hellip", U'…'}, {"copy", U'©'}, {"reg", U'®'}, {"trade", U'™'}, {"deg", U'°'},
    {"plusmn", U'±'}, {"times", U'×'}, {"divide", U'÷'}, {"micro", U'µ'}, {"middot", U'·'},
    {"bull", U'•'}, {"le", U'≤'},     {"ge", U'≥'},  {"ne", U'≠'},  {"alpha", U'α'},
    {"beta", U'β'}, {"gamma", U'γ'},  {"delta", U'δ'}, {"kappa", U'κ'}, {"mu", U'μ'},
    {"laquo", U'«'}, {"raquo", U'»'}, {"sect", U'§'}, {"para", U'¶'}, {"shy", 0x00AD},
}};

// Parses an entity at raw[pos] == '&'. On success returns the decoded code
// point and sets `consumed`.
bool decode_entity(std::string_view raw, std::size_t pos, char32_t& out, std::size_t& consumed) {
  const auto semi = raw.find(';', pos + 1);
  if (semi == std::string_view::npos || semi - pos > 12 || semi == pos + 1) return false;
  const auto body = raw.substr(pos + 1, semi - pos - 1);
  if (body[0] == '#') {
    unsigned long value = 0;
    try {
      std::size_t used = 0;
      const bool hex = body.size() > 1 && (body[1] == 'x' || body[1] == 'X');
      const std::string digits(body.substr(hex ? 2 : 1));
      if (digits.empty()) return false;
      value = std::stoul(digits, &used, hex ? 16 : 10);
      if (used != digits.size()) return false;
    } catch (const std::exception&) {
      return false;
    }
    if (value == 0 || value > 0x10FFFF || (value >= 0xD800 && value <= 0xDFFF)) return false;
    out = static_cast<char32_t>(value);
  } else {
    const auto it = std::find_if(kEntities.begin(), kEntities.end(),
                                 [&](const NamedEntity& e) { return e.name == body; });
    if (it == kEntities.end()) return false;
    out = it->code;
  }
  consumed = semi - pos + 1;
  return true;
}

// Accumulates text with HTML whitespace semantics: whitespace runs become a
// single space and element boundaries become pending line breaks that are only
// materialized between two pieces of text.
class HtmlTextSink {
 public:
  void space() { pending_space_ = true; }

  void boundary(int newlines) {
    pending_break_ = std::max(pending_break_, newlines);
    pending_space_ = false;
  }

  void text(std::string_view s) {
    if (!out_.empty()) {
      if (pending_break_ > 0) {
        out_.append(static_cast<std::size_t>(pending_break_), '\n');
      } else if (pending_space_) {
        out_ += ' ';
      }
    }
    pending_break_ = 0;
    pending_space_ = false;
    out_ += s;
  }

  std::string take() { return std::move(out_); }

 private:
  std::string out_;
  int pending_break_ = 0;
  bool pending_space_ = false;
};

// Finds the '>' closing a tag, skipping quoted attribute values.
std::size_t find_tag_end(std::string_view raw, std::size_t pos) {
  char quote = 0;
  for (; pos < raw.size(); ++pos) {
    const char c = raw[pos];
    if (quote) {
      if (c == quote) quote = 0;
    } else if (c == '"' || c == '\'') {
      quote = c;
    } else if (c == '>') {
      return pos;
    }
  }
  return std::string_view::npos;
}

std::size_t find_ci(std::string_view haystack, std::string_view needle, std::size_t from) {
  const auto it = std::search(haystack.begin() + static_cast<std::ptrdiff_t>(from), haystack.end(), needle.begin(),
                              needle.end(), [](char a, char b) {
                                return std::tolower(static_cast<unsigned char>(a)) ==
                                       std::tolower(static_cast<unsigned char>(b));
                              });
  return it == haystack.end() ? std::string_view::npos : static_cast<std::size_t>(it - haystack.begin());
}

struct TagToken {
  std::string name;
  bool closing = false;
  std::size_t end = 0;  // index one past '>'
};

// Parses a tag at raw[pos] == '<'. Returns false when the '<' does not start
// a tag and should be read as text.
bool parse_tag(std::string_view raw, std::size_t pos, TagToken& tag) {
  std::size_t i = pos + 1;
  tag.closing = i < raw.size() && raw[i] == '/';
  if (tag.closing) ++i;
  const auto name_start = i;
  while (i < raw.size() && (std::isalnum(static_cast<unsigned char>(raw[i])) || raw[i] == '-' || raw[i] == ':')) ++i;
  if (i == name_start || !std::isalpha(static_cast<unsigned char>(raw[name_start]))) return false;
  tag.name = ascii_lower(raw.substr(name_start, i - name_start));
  const auto gt = find_tag_end(raw, i);
  tag.end = gt == std::string_view::npos ? raw.size() : gt + 1;
  return true;
}

}  // namespace

std::string strip_html(std::string_view raw) {
  HtmlTextSink sink;
  std::size_t i = 0;
  std::size_t text_start = 0;
  auto flush_text = [&](std::size_t end) {
    // Splits a raw text run into words so the sink can collapse whitespace.
    std::size_t p = text_start;
    while (p < end) {
      if (is_html_space(raw[p])) {
        sink.space();
        ++p;
        continue;
      }
      auto q = p;
      while (q < end && !is_html_space(raw[q]) && raw[q] != '&') ++q;
      if (q > p) {
        sink.text(raw.substr(p, q - p));
        p = q;
        continue;
      }
      // raw[p] == '&'
      char32_t code = 0;
      std::size_t consumed = 0;
      if (decode_entity(raw, p, code, consumed)) {
        if (code == U' ') {
          sink.space();
        } else if (code != 0x00AD) {
          std::string decoded;
          utf8::append(decoded, code);
          sink.text(decoded);
        }
        p += consumed;
      } else {
        sink.text("&");
        ++p;
      }
    }
  };

  while (i < raw.size()) {
    if (raw[i] != '<') {
      ++i;
      continue;
    }
    if (raw.compare(i, 4, "<!--") == 0) {
      flush_text(i);
      const auto end = raw.find("-->", i + 4);
      i = end == std::string_view::npos ? raw.size() : end + 3;
      text_start = i;
      continue;
    }
    if (i + 1 < raw.size() && (raw[i + 1] == '!' || raw[i + 1] == '?')) {
      flush_text(i);
      const auto gt = raw.find('>', i);
      i = gt == std::string_view::npos ? raw.size() : gt + 1;
      text_start = i;
      continue;
    }
    TagToken tag;
    if (!parse_tag(raw, i, tag)) {
      ++i;  // literal '<'
      continue;
    }
    flush_text(i);
    i = tag.end;
    if (!tag.closing && is_opaque_element(tag.name)) {
      const auto close = find_ci(raw, "</" + tag.name, i);
      if (close == std::string_view::npos) {
        i = raw.size();
      } else {
        const auto gt = raw.find('>', close);
        i = gt == std::string_view::npos ? raw.size() : gt + 1;
      }
      sink.boundary(1);
    } else if (const int br = block_break(tag.name); br > 0) {
      sink.boundary(br);
    } else if (tag.name == "td" || tag.name == "th") {
      sink.space();
    }
    text_start = i;
  }
  flush_text(raw.size());
  return sink.take();
}

std::string extract_html_title(std::string_view raw) {
  for (const std::string_view name : {"title", "h1"}) {
    const auto open = find_ci(raw, "<" + std::string(name), 0);
    if (open == std::string_view::npos) continue;
    const auto gt = find_tag_end(raw, open);
    if (gt == std::string_view::npos) continue;
    const auto close = find_ci(raw, "</" + std::string(name), gt + 1);
    const auto inner = raw.substr(gt + 1, (close == std::string_view::npos ? raw.size() : close) - gt - 1);
    auto title = normalize_text(strip_html(inner));
    std::replace(title.begin(), title.end(), '\n', ' ');
    if (!title.empty()) return title;
  }
  return {};
}

// ---------------------------------------------------------------------------
// Normalization

namespace {

// Maps one code point to its replacement. Returns false to keep it as-is.
bool fold_codepoint(char32_t c, std::string& out) {
  switch (c) {
    case 0x2018: case 0x2019: case 0x201A: case 0x201B: case 0x2032:
      out += '\'';
      return true;
    case 0x201C: case 0x201D: case 0x201E: case 0x201F: case 0x2033: case 0x00AB: case 0x00BB:
      out += '"';
      return true;
    case 0x2010: case 0x2011: case 0x2012: case 0x2013: case 0x2014: case 0x2015: case 0x2212:
      out += '-';
      return true;
    case 0x2026:
      out += "...";
      return true;
    case '\t': case '\v': case '\f': case 0x00A0: case 0x202F: case 0x205F: case 0x3000:
      out += ' ';
      return true;
    case '\r': case 0x0085: case 0x2028: case 0x2029:
      out += '\n';
      return true;
    case 0x200B: case 0xFEFF: case 0x00AD: case 0x2060:
      return true;
    default:
      break;
  }
  if (c >= 0x2000 && c <= 0x200A) {
    out += ' ';
    return true;
  }
  if ((c < 0x20 && c != '\n') || c == 0x7F || (c >= 0x80 && c <= 0x9F)) return true;  // control
  return false;
}

std::string fold_characters(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  std::size_t pos = 0;
  while (pos < raw.size()) {
    const auto start = pos;
    const char32_t c = utf8::next(raw, pos);
    if (c == U'\r' && pos < raw.size() && raw[pos] == '\n') continue;  // CRLF -> the LF alone
    if (!fold_codepoint(c, out)) {
      if (c == 0xFFFD) utf8::append(out, c);
      else out.append(raw.substr(start, pos - start));
    }
  }
  return out;
}

std::string nfc(const std::string& s) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* normalizer = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) return s;
  const auto input = icu::UnicodeString::fromUTF8(s);
  const auto normalized = normalizer->normalize(input, status);
  if (U_FAILURE(status)) return s;
  std::string out;
  normalized.toUTF8String(out);
  return out;
}

// Input contains only ' ' and '\n' as whitespace.
std::string canonicalize_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  std::size_t newlines = 0;
  bool space = false;
  for (const char c : s) {
    if (c == '\n') {
      ++newlines;
      space = false;
    } else if (c == ' ') {
      space = true;
    } else {
      if (!out.empty()) {
        if (newlines > 0) out.append(std::min<std::size_t>(newlines, 2), '\n');
        else if (space) out += ' ';
      }
      newlines = 0;
      space = false;
      out += c;
    }
  }
  return out;
}

}  // namespace

std::string normalize_text(std::string_view raw) {
  return canonicalize_whitespace(nfc(fold_characters(raw)));
}

// ---------------------------------------------------------------------------
// Boilerplate

std::vector<BoilerplateRule> default_boilerplate_rules() {
  using Action = BoilerplateRule::Action;
  const auto flags = std::regex::ECMAScript | std::regex::icase;
  return {
      {Action::TruncateFrom, std::regex(R"(\s*(references|bibliography)\s*:?\s*)", flags), "reference section"},
      {Action::DropLine,
       std::regex(R"(\s*(author information|author affiliations?|corresponding author|author contributions)\b.*)",
                  flags),
       "author details"},
      {Action::DropLine, std::regex(R"(\s*(copyright\b|©|\(c\) \d{4}).*)", flags), "copyright notice"},
      {Action::RemoveSpan, std::regex(R"(\s*\[\d+(\s*(,|-|–)\s*\d+)*\])", flags), "citation marker"},
  };
}

namespace {

std::string collapse_spaces(std::string_view line) {
  std::string out;
  bool space = false;
  for (const char c : line) {
    if (c == ' ') {
      space = true;
      continue;
    }
    if (space && !out.empty()) out += ' ';
    space = false;
    out += c;
  }
  return out;
}

}  // namespace

std::string strip_boilerplate(std::string_view text, const std::vector<BoilerplateRule>& rules) {
  using Action = BoilerplateRule::Action;
  std::vector<std::string> kept;
  std::size_t pos = 0;
  bool truncated = false;
  while (pos <= text.size() && !truncated) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string line(text.substr(pos, nl - pos));
    pos = nl + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();

    bool drop = false;
    for (const auto& rule : rules) {
      if (rule.action == Action::RemoveSpan || !std::regex_match(line, rule.pattern)) continue;
      if (rule.action == Action::TruncateFrom) truncated = true;
      drop = true;
      break;
    }
    if (drop) continue;

    bool edited = false;
    for (const auto& rule : rules) {
      if (rule.action != Action::RemoveSpan) continue;
      auto replaced = std::regex_replace(line, rule.pattern, "");
      if (replaced != line) {
        line = std::move(replaced);
        edited = true;
      }
    }
    if (edited) {
      line = collapse_spaces(line);
      if (line.empty()) continue;
    }
    kept.push_back(std::move(line));
  }

  std::string out;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (i > 0) out += '\n';
    out += kept[i];
  }
  while (!out.empty() && std::isspace(static_cast<unsigned char>(out.back()))) out.pop_back();
  return out;
}

// ---------------------------------------------------------------------------
// Ingestion

InputFormat parse_input_format(std::string_view name) {
  const auto lower = ascii_lower(name);
  if (lower == "html" || lower == "htm") return InputFormat::Html;
  if (lower == "json") return InputFormat::Json;
  if (lower == "jsonl") return InputFormat::Jsonl;
  if (lower == "txt" || lower == "text") return InputFormat::Txt;
  throw Error(ErrorCode::InvalidConfig, "unknown input format '" + std::string(name) + "'");
}

std::string_view to_string(InputFormat format) {
  switch (format) {
    case InputFormat::Html: return "html";
    case InputFormat::Json: return "json";
    case InputFormat::Jsonl: return "jsonl";
    case InputFormat::Txt: return "txt";
  }
  return "txt";
}

namespace {

std::string read_file(const std::filesystem::path& path, ErrorCode code) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(code, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw Error(code, "read failed for " + path.string());
  return buf.str();
}

std::string scalar_to_string(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

struct RawRecord {
  std::optional<std::string> id;
  std::string title;
  std::string source;
  std::string text;
  Metadata metadata;
};

RawRecord record_from_json(const json& j, std::size_t index) {
  auto malformed = [&](const std::string& why) {
    return Error(ErrorCode::MalformedRecord, "record " + std::to_string(index) + ": " + why);
  };
  if (!j.is_object()) throw malformed("not a JSON object");
  const auto text = j.find("text");
  if (text == j.end() || !text->is_string()) throw malformed("missing string field 'text'");
  RawRecord r;
  r.text = text->get<std::string>();
  for (const char* key : {"doc_id", "id"}) {
    if (const auto it = j.find(key); it != j.end() && (it->is_string() || it->is_number_integer())) {
      r.id = scalar_to_string(*it);
      if (r.id->empty()) r.id.reset();
      break;
    }
  }
  if (const auto it = j.find("title"); it != j.end() && it->is_string()) r.title = it->get<std::string>();
  if (const auto it = j.find("source"); it != j.end() && it->is_string()) r.source = it->get<std::string>();
  if (const auto it = j.find("metadata"); it != j.end()) {
    if (!it->is_object()) throw malformed("'metadata' must be an object");
    for (const auto& [k, v] : it->items()) r.metadata[k] = scalar_to_string(v);
  }
  return r;
}

}  // namespace

IngestResult ingest_file(const std::filesystem::path& path, const IngestOptions& options) {
  const auto content = read_file(path, ErrorCode::UnreadableFile);
  const auto stem = path.stem().string();

  std::vector<RawRecord> records;
  switch (options.format) {
    case InputFormat::Txt:
      records.push_back({std::nullopt, stem, {}, content, {}});
      break;
    case InputFormat::Html: {
      auto title = extract_html_title(content);
      records.push_back({std::nullopt, title.empty() ? stem : title, {}, strip_html(content), {}});
      break;
    }
    case InputFormat::Json: {
      json j;
      try {
        j = json::parse(content);
      } catch (const json::parse_error& e) {
        throw Error(ErrorCode::MalformedRecord, "record 0: " + std::string(e.what()));
      }
      if (j.is_array()) {
        for (std::size_t i = 0; i < j.size(); ++i) records.push_back(record_from_json(j[i], i));
      } else {
        records.push_back(record_from_json(j, 0));
      }
      break;
    }
    case InputFormat::Jsonl: {
      std::istringstream in(content);
      std::string line;
      std::size_t index = 0;
      while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
          j = json::parse(line);
        } catch (const json::parse_error& e) {
          throw Error(ErrorCode::MalformedRecord, "record " + std::to_string(index) + ": " + e.what());
        }
        records.push_back(record_from_json(j, index));
        ++index;
      }
      break;
    }
  }

  IngestResult result;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& r = records[i];
    auto text = normalize_text(strip_boilerplate(r.text, options.boilerplate));
    if (text.empty()) {
      result.skipped.push_back({i, std::string(to_string(ErrorCode::EmptyAfterNormalization))});
      continue;
    }
    Document doc;
    doc.doc_id = r.id ? *r.id : stem + "#" + std::to_string(i);
    doc.title = normalize_text(r.title);
    doc.source = r.source.empty() ? path.string() : r.source;
    doc.text = std::move(text);
    doc.metadata = options.extra_metadata;
    for (auto& [k, v] : r.metadata) doc.metadata[k] = std::move(v);
    result.documents.push_back(std::move(doc));
  }
  return result;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  for (const auto& doc : corpus.documents()) {
    nlohmann::ordered_json j;
    j["doc_id"] = doc.doc_id;
    j["title"] = doc.title;
    j["source"] = doc.source;
    j["text"] = doc.text;
    j["metadata"] = doc.metadata;
    out << j.dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
  }
  out.flush();
  if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

Corpus read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  Corpus corpus(path.stem().string());
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto violation = [&](const std::string& why) {
      return Error(ErrorCode::SchemaViolation, "line " + std::to_string(line_no) + ": " + why);
    };
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error&) {
      throw violation("invalid JSON");
    }
    if (!j.is_object()) throw violation("expected an object");
    auto required_string = [&](const char* key) {
      const auto it = j.find(key);
      if (it == j.end() || !it->is_string()) throw violation(std::string("missing required field '") + key + "'");
      return it->get<std::string>();
    };
    Document doc;
    doc.doc_id = required_string("doc_id");
    doc.title = required_string("title");
    doc.source = required_string("source");
    doc.text = required_string("text");
    const auto meta = j.find("metadata");
    if (meta == j.end() || !meta->is_object()) throw violation("missing required field 'metadata'");
    for (const auto& [k, v] : meta->items()) {
      if (!v.is_string()) throw violation("metadata value for '" + k + "' is not a string");
      doc.metadata[k] = v.get<std::string>();
    }
    if (doc.doc_id.empty()) throw violation("empty doc_id");
    if (doc.text.empty()) throw violation("empty text");
    if (!seen.insert(doc.doc_id).second) throw violation("duplicate doc_id '" + doc.doc_id + "'");
    corpus.add(std::move(doc));
  }
  if (in.bad()) throw Error(ErrorCode::IoFailure, "read failed for " + path.string());
  return corpus;
}

}  // namespace biorag
