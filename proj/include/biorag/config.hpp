#pragma once

#include <nlohmann/json_fwd.hpp>

#include "biorag/chunking.hpp"
#include "biorag/embedding.hpp"
#include "biorag/rag_engine.hpp"
#include "biorag/vector_index.hpp"

namespace biorag {

// JSON views of the configuration structs. Missing keys keep their defaults;
// present keys of the wrong type throw Error(InvalidConfig).

ChunkingConfig chunking_config_from_json(const nlohmann::json& j);
RetrievalConfig retrieval_config_from_json(const nlohmann::json& j);
GenerationConfig generation_config_from_json(const nlohmann::json& j);
EmbeddingProviderConfig provider_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ChunkingConfig& cfg);
nlohmann::json to_json(const RetrievalConfig& cfg);
nlohmann::json to_json(const GenerationConfig& cfg);

}  // namespace biorag
