#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "biorag/corpus.hpp"

namespace biorag {

enum class ChunkStrategy { Recursive, Sentence, Adaptive };

ChunkStrategy parse_chunk_strategy(std::string_view name);
std::string_view to_string(ChunkStrategy strategy);

std::vector<std::string> default_separators();
std::vector<std::string> default_abbreviations();

// Sizes and offsets are measured in Unicode code points.
struct ChunkingConfig {
  ChunkStrategy strategy = ChunkStrategy::Recursive;
  std::size_t chunk_size = 1000;
  std::size_t overlap = 150;
  std::vector<std::string> separators = default_separators();
  std::vector<std::string> abbreviations = default_abbreviations();

  // Throws Error(InvalidConfig) unless 0 < chunk_size, overlap < chunk_size
  // and the separator list ends with "".
  void validate() const;
};

// A chunk is an overlap prefix (copied from the previous chunk) followed by a
// core. Cores tile the parent text: [char_start, char_end) of consecutive
// chunks are adjacent and their concatenation is the whole document.
struct Chunk {
  std::string chunk_id;
  std::string doc_id;
  std::size_t ordinal = 0;
  std::string text;
  std::size_t char_start = 0;
  std::size_t char_end = 0;

  // Length in code points of the prefix shared with the previous chunk.
  std::size_t overlap_length() const;
  // The chunk text without its overlap prefix.
  std::string core_text() const;

  bool operator==(const Chunk&) const = default;
};

nlohmann::json chunk_to_json(const Chunk& chunk);
Chunk chunk_from_json(const nlohmann::json& j);

std::string make_chunk_id(std::string_view doc_id, std::size_t ordinal);

// Hierarchical separator splitting followed by greedy packing with a
// whole-unit overlap suffix.
std::vector<Chunk> split_recursive(std::string_view text, const ChunkingConfig& cfg, std::string_view doc_id = {});

// Rule-based sentence segmentation. Sentences are returned without the
// whitespace separating them.
std::vector<std::string> split_sentences(std::string_view text,
                                         const std::vector<std::string>& abbreviations = default_abbreviations());

std::vector<Chunk> split_sentence_aware(std::string_view text, const ChunkingConfig& cfg,
                                        std::string_view doc_id = {});

// Paragraph merging with sentence-aware fallback for oversized paragraphs.
std::vector<Chunk> split_adaptive(std::string_view text, const ChunkingConfig& cfg, std::string_view doc_id = {});

// Dispatches on cfg.strategy.
std::vector<Chunk> chunk_text(std::string_view text, const ChunkingConfig& cfg, std::string_view doc_id = {});
std::vector<Chunk> chunk_document(const Document& doc, const ChunkingConfig& cfg);
std::vector<Chunk> chunk_corpus(const Corpus& corpus, const ChunkingConfig& cfg);

// Overlap-stripped concatenation of chunks, in order.
std::string reconstruct(const std::vector<Chunk>& chunks);

}  // namespace biorag
