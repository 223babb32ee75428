#include "biorag/config.hpp"

#include <nlohmann/json.hpp>

#include "biorag/error.hpp"

namespace biorag {

namespace {

using json = nlohmann::json;

template <typename T>
void read_key(const json& j, const char* key, T& out) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::InvalidConfig, std::string("config key '") + key + "' has the wrong type");
  }
}

void require_object(const json& j, const char* what) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, std::string(what) + " must be a JSON object");
}

}  // namespace

ChunkingConfig chunking_config_from_json(const json& j) {
  require_object(j, "chunking config");
  ChunkingConfig cfg;
  std::string strategy(to_string(cfg.strategy));
  read_key(j, "strategy", strategy);
  cfg.strategy = parse_chunk_strategy(strategy);
  read_key(j, "chunk_size", cfg.chunk_size);
  read_key(j, "overlap", cfg.overlap);
  read_key(j, "separators", cfg.separators);
  read_key(j, "abbreviations", cfg.abbreviations);
  cfg.validate();
  return cfg;
}

RetrievalConfig retrieval_config_from_json(const json& j) {
  require_object(j, "retrieval config");
  RetrievalConfig cfg;
  read_key(j, "top_k", cfg.top_k);
  read_key(j, "min_score", cfg.min_score);
  if (cfg.top_k == 0) throw Error(ErrorCode::InvalidConfig, "top_k must be at least 1");
  return cfg;
}

GenerationConfig generation_config_from_json(const json& j) {
  require_object(j, "generation config");
  GenerationConfig cfg;
  read_key(j, "endpoint_url", cfg.endpoint_url);
  read_key(j, "model_name", cfg.model_name);
  read_key(j, "temperature", cfg.temperature);
  read_key(j, "max_new_tokens", cfg.max_new_tokens);
  read_key(j, "context_char_budget", cfg.context_char_budget);
  std::string mode(to_string(cfg.mode));
  read_key(j, "mode", mode);
  cfg.mode = parse_generation_mode(mode);
  read_key(j, "timeout_ms", cfg.timeout_ms);
  read_key(j, "max_attempts", cfg.max_attempts);
  read_key(j, "retry_backoff_ms", cfg.retry_backoff_ms);
  if (cfg.temperature < 0) throw Error(ErrorCode::InvalidConfig, "temperature must be >= 0");
  if (cfg.max_new_tokens <= 0) throw Error(ErrorCode::InvalidConfig, "max_new_tokens must be positive");
  if (cfg.context_char_budget == 0) throw Error(ErrorCode::InvalidConfig, "context_char_budget must be positive");
  return cfg;
}

EmbeddingProviderConfig provider_config_from_json(const json& j) {
  require_object(j, "embedding config");
  EmbeddingProviderConfig cfg;
  std::string kind(to_string(cfg.kind));
  read_key(j, "kind", kind);
  cfg.kind = parse_provider_kind(kind);
  read_key(j, "endpoint_url", cfg.endpoint_url);
  read_key(j, "model_name", cfg.model_name);
  read_key(j, "dimension", cfg.dimension);
  read_key(j, "timeout_ms", cfg.timeout_ms);
  read_key(j, "max_batch", cfg.max_batch);
  read_key(j, "max_concurrency", cfg.max_concurrency);
  read_key(j, "max_attempts", cfg.max_attempts);
  read_key(j, "retry_backoff_ms", cfg.retry_backoff_ms);
  if (cfg.dimension == 0) throw Error(ErrorCode::InvalidConfig, "dimension must be positive");
  if (cfg.kind == ProviderKind::Remote && cfg.endpoint_url.empty()) {
    throw Error(ErrorCode::InvalidConfig, "remote embedding provider needs endpoint_url");
  }
  return cfg;
}

json to_json(const ChunkingConfig& cfg) {
  return {{"strategy", to_string(cfg.strategy)},
          {"chunk_size", cfg.chunk_size},
          {"overlap", cfg.overlap},
          {"separators", cfg.separators}};
}

json to_json(const RetrievalConfig& cfg) { return {{"top_k", cfg.top_k}, {"min_score", cfg.min_score}}; }

json to_json(const GenerationConfig& cfg) {
  return {{"endpoint_url", cfg.endpoint_url},
          {"model_name", cfg.model_name},
          {"temperature", cfg.temperature},
          {"max_new_tokens", cfg.max_new_tokens},
          {"context_char_budget", cfg.context_char_budget},
          {"mode", to_string(cfg.mode)}};
}

}  // namespace biorag
