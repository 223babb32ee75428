#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "biorag/embedding.hpp"
#include "biorag/rag_engine.hpp"
#include "biorag/vector_index.hpp"

namespace biorag {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path index_path;
  EmbeddingProviderConfig provider;
  RetrievalConfig retrieval;
  GenerationConfig generation;
  std::vector<std::string> cors_allowed_origins;
};

// "host:port"; throws Error(InvalidConfig).
std::pair<std::string, int> parse_listen_addr(std::string_view addr);

// Reads a TOML service file:
//
//   listen_addr = "127.0.0.1:8080"
//   index_path = "index.ragidx"
//   cors_allowed_origins = ["http://localhost:5173"]
//   [embedding]   kind, endpoint_url, model_name, dimension, timeout_ms, max_batch
//   [retrieval]   top_k, min_score
//   [generation]  endpoint_url, model_name, temperature, max_new_tokens,
//                 context_char_budget, mode
//
// then applies environment overrides. Relative index paths resolve against
// the config file's directory.
ServiceConfig load_service_config(const std::filesystem::path& path);

// BIORAG_LISTEN_ADDR, BIORAG_EMBEDDING_ENDPOINT, BIORAG_GENERATION_ENDPOINT.
void apply_env_overrides(ServiceConfig& cfg);

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

class QaService {
 public:
  explicit QaService(ServiceConfig cfg);
  ~QaService();

  QaService(const QaService&) = delete;
  QaService& operator=(const QaService&) = delete;

  const ServiceConfig& config() const noexcept { return cfg_; }

  // Loads config().index_path and checks it against the configured embedder.
  // Throws on any failure so a misconfigured service never starts.
  void load_index();
  void set_index(std::shared_ptr<const VectorIndex> index);
  std::shared_ptr<const VectorIndex> index() const;

  ApiResponse handle_ask(const nlohmann::json& request) const;
  ApiResponse handle_search(const nlohmann::json& request) const;
  ApiResponse handle_health() const;
  ApiResponse handle_reindex(const nlohmann::json& request);

  // Holding the returned lease makes concurrent reindex requests fail with
  // 409 until it is released.
  class ReindexLease {
   public:
    explicit ReindexLease(std::atomic<bool>& flag) : flag_(&flag) {}
    ReindexLease(ReindexLease&& other) noexcept : flag_(std::exchange(other.flag_, nullptr)) {}
    ReindexLease& operator=(ReindexLease&&) = delete;
    ~ReindexLease() {
      if (flag_) flag_->store(false);
    }

   private:
    std::atomic<bool>* flag_;
  };
  std::optional<ReindexLease> try_begin_reindex();

  // Binds the HTTP listener; port 0 picks a free port. Returns the bound port.
  int bind();
  // Serves until stop(); call after bind().
  void run();
  void stop();

 private:
  struct Http;

  ServiceConfig cfg_;
  mutable std::mutex index_mutex_;
  std::shared_ptr<const VectorIndex> index_;
  std::atomic<bool> reindexing_{false};
  std::unique_ptr<Http> http_;
};

}  // namespace biorag
