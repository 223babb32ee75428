#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "biorag/chunking.hpp"
#include "biorag/embedding.hpp"
#include "biorag/vector_index.hpp"

namespace biorag {

inline constexpr std::string_view kSystemInstruction = "You are a concise and factual biomedical assistant.";
inline constexpr std::string_view kContextInstruction =
    "Use the following context to answer the question in 3–4 complete, non-repetitive sentences.";
inline constexpr std::string_view kNoContextInstruction =
    "Answer the question in 3–4 complete, non-repetitive sentences.";

enum class GenerationMode { Vanilla, Rag };

GenerationMode parse_generation_mode(std::string_view name);
std::string_view to_string(GenerationMode mode);

struct GenerationConfig {
  std::string endpoint_url;
  std::string model_name = "mistral-7b-v0.3";
  double temperature = 0.2;
  int max_new_tokens = 256;
  std::size_t context_char_budget = 6000;
  GenerationMode mode = GenerationMode::Rag;
  int timeout_ms = 60000;
  int max_attempts = 3;
  int retry_backoff_ms = 200;
};

struct RetrievedChunk {
  SearchHit hit;
  Chunk chunk;
};

struct PromptBundle {
  std::string system_instruction;
  std::string context_block;
  std::string query;
  // Everything after the system instruction; sent as the user message.
  std::string user_message;
  // system_instruction + "\n" + user_message.
  std::string rendered;
  std::vector<SearchHit> included_hits;
};

// Renders the grounded prompt. In rag mode, retrieved chunks are added whole
// in rank order as "[Source <rank>: <doc_id>]\n<text>" blocks separated by a
// blank line, stopping at the first one that would push the context block
// past context_char_budget code points. Throws Error(EmptyQuery).
PromptBundle build_prompt(std::string_view query, std::span<const RetrievedChunk> hits, const GenerationConfig& cfg);

struct Completion {
  std::string text;
  int attempts = 0;
  std::int64_t latency_ms = 0;
};

// One chat-completions call with retries on transient failures. Throws
// Error(BackendUnreachable), Error(BackendError) or Error(EmptyCompletion).
Completion generate(const PromptBundle& prompt, const GenerationConfig& cfg);

struct Answer {
  std::string text;
  std::vector<SearchHit> hits;  // the full retrieval result
  PromptBundle prompt;
  std::int64_t latency_ms = 0;
  std::string model_name;
};

// embed query -> search -> build_prompt -> generate. Errors carry the stage
// that raised them ("embed", "search", "prompt", "generate"). Vanilla mode
// skips the first two stages and never touches the index.
Answer ask(std::string_view query, const VectorIndex& index, const EmbeddingProviderConfig& provider,
           const RetrievalConfig& rcfg, const GenerationConfig& gcfg);

// The chunks behind a hit list, in hit order.
std::vector<RetrievedChunk> resolve_hits(const VectorIndex& index, const std::vector<SearchHit>& hits);

// Retrieval half of ask: embeds the query (checking the index fingerprint)
// and searches.
std::vector<SearchHit> retrieve(std::string_view query, const VectorIndex& index,
                                const EmbeddingProviderConfig& provider, const RetrievalConfig& rcfg);

}  // namespace biorag
