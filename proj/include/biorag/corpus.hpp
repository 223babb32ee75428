#pragma once

#include <filesystem>
#include <map>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

namespace biorag {

using Metadata = std::map<std::string, std::string>;

struct Document {
  std::string doc_id;
  std::string title;
  std::string source;
  std::string text;
  Metadata metadata;

  bool operator==(const Document&) const = default;
};

// An ordered, id-unique collection of documents.
class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::string name) : name_(std::move(name)) {}

  const std::string& name() const noexcept { return name_; }
  void set_name(std::string name) { name_ = std::move(name); }

  const std::vector<Document>& documents() const noexcept { return documents_; }
  std::size_t size() const noexcept { return documents_.size(); }
  bool empty() const noexcept { return documents_.empty(); }

  // Throws Error(DuplicateDocId) when the id is already present and
  // Error(SchemaViolation) for an empty id or empty text.
  void add(Document doc);
  bool contains(std::string_view doc_id) const;

  bool operator==(const Corpus& other) const {
    return name_ == other.name_ && documents_ == other.documents_;
  }

 private:
  std::string name_;
  std::vector<Document> documents_;
};

// Removes markup, drops script/style/noscript/template contents, decodes
// entities and turns block-level element boundaries into newlines.
std::string strip_html(std::string_view raw);

// Returns the text of the first <title> element, or of the first <h1> when
// there is no title. Empty when neither exists.
std::string extract_html_title(std::string_view raw);

// NFC composition, ASCII folding of typographic quotes and dashes, and
// whitespace canonicalization. Idempotent.
std::string normalize_text(std::string_view raw);

struct BoilerplateRule {
  enum class Action {
    DropLine,      // remove every line matching the pattern
    RemoveSpan,    // erase every match inside a line
    TruncateFrom,  // cut the document at the first matching line
  };

  Action action;
  std::regex pattern;
  std::string description;
};

// Default rules: a "References"/"Bibliography" heading cuts the document,
// author-information and correspondence lines are dropped, and bracketed
// numeric citation markers such as "[12]" or "[3, 4-6]" are removed.
std::vector<BoilerplateRule> default_boilerplate_rules();

std::string strip_boilerplate(std::string_view text, const std::vector<BoilerplateRule>& rules);

enum class InputFormat { Html, Json, Jsonl, Txt };

InputFormat parse_input_format(std::string_view name);
std::string_view to_string(InputFormat format);

struct IngestOptions {
  InputFormat format = InputFormat::Txt;
  std::vector<BoilerplateRule> boilerplate = default_boilerplate_rules();
  // Merged into every document's metadata; record-level keys win.
  Metadata extra_metadata;
};

struct SkippedRecord {
  std::size_t record_index = 0;
  std::string reason;
};

struct IngestResult {
  std::vector<Document> documents;
  std::vector<SkippedRecord> skipped;
};

// Throws Error(UnreadableFile) or Error(MalformedRecord). Records that are
// empty after cleaning are reported in IngestResult::skipped.
IngestResult ingest_file(const std::filesystem::path& path, const IngestOptions& options);

// Corpus JSONL: one object per line with keys doc_id, title, source, text,
// metadata. The corpus name is not stored; read_corpus names the corpus after
// the file stem.
void write_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus read_corpus(const std::filesystem::path& path);

}  // namespace biorag
