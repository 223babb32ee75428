// biorag command line: ingest, chunk, index, query, eval, serve.
//
// Exit codes: 0 success, 1 operational error, 2 usage error.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "biorag/chunking.hpp"
#include "biorag/corpus.hpp"
#include "biorag/embedding.hpp"
#include "biorag/error.hpp"
#include "biorag/eval.hpp"
#include "biorag/rag_engine.hpp"
#include "biorag/service.hpp"
#include "biorag/vector_index.hpp"

namespace {

using namespace biorag;

struct IngestArgs {
  std::vector<std::string> inputs;
  std::string format = "txt";
  std::string out;
  std::vector<std::string> tags;
};

struct ChunkArgs {
  std::string corpus;
  std::string strategy = "recursive";
  std::size_t chunk_size = 1000;
  std::size_t overlap = 150;
  std::string out;
};

struct EmbedArgs {
  std::string provider = "deterministic";
  std::string endpoint;
  std::string model;
  std::size_t dimension = kDefaultDimension;
};

struct QueryArgs {
  std::string index;
  std::string question;
  std::size_t top_k = 5;
  std::string mode = "rag";
  bool show_sources = false;
  std::string llm_endpoint;
  std::string llm_model;
  std::string embed_endpoint;
};

struct EvalArgs {
  std::string index;
  std::string pairs;
  std::string configs;
  std::string out;
  std::string embed_endpoint;
};

Metadata parse_tags(const std::vector<std::string>& tags) {
  Metadata out;
  for (const auto& tag : tags) {
    const auto eq = tag.find('=');
    if (eq == std::string::npos || eq == 0) throw Error(ErrorCode::InvalidConfig, "tag must be key=value: " + tag);
    out[tag.substr(0, eq)] = tag.substr(eq + 1);
  }
  return out;
}

int run_ingest(const IngestArgs& a) {
  IngestOptions opts;
  opts.format = parse_input_format(a.format);
  opts.extra_metadata = parse_tags(a.tags);

  Corpus corpus(std::filesystem::path(a.out).stem().string());
  std::size_t skipped = 0;
  for (const auto& input : a.inputs) {
    auto result = ingest_file(input, opts);
    for (auto& doc : result.documents) corpus.add(std::move(doc));
    for (const auto& s : result.skipped) {
      std::cerr << "skipped " << input << " record " << s.record_index << ": " << s.reason << "\n";
    }
    skipped += result.skipped.size();
  }
  write_corpus(corpus, a.out);
  std::cout << "documents: " << corpus.size() << "\nskipped: " << skipped << "\n";
  return 0;
}

ChunkingConfig chunking_from(const ChunkArgs& a) {
  ChunkingConfig cfg;
  cfg.strategy = parse_chunk_strategy(a.strategy);
  cfg.chunk_size = a.chunk_size;
  cfg.overlap = a.overlap;
  cfg.validate();
  return cfg;
}

int run_chunk(const ChunkArgs& a) {
  const auto chunks = chunk_corpus(read_corpus(a.corpus), chunking_from(a));
  std::ofstream out(a.out, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + a.out);
  for (const auto& c : chunks) out << chunk_to_json(c).dump() << "\n";
  if (!out) throw Error(ErrorCode::IoFailure, "write failed: " + a.out);
  std::cout << "chunks: " << chunks.size() << "\n";
  return 0;
}

EmbeddingProviderConfig provider_from(const EmbedArgs& a) {
  EmbeddingProviderConfig p;
  p.kind = parse_provider_kind(a.provider);
  p.dimension = a.dimension;
  p.endpoint_url = a.endpoint;
  if (p.kind == ProviderKind::Deterministic) {
    p.model_name = std::string(kDeterministicModel);
  } else {
    if (p.endpoint_url.empty()) throw Error(ErrorCode::InvalidConfig, "--endpoint is required with --provider remote");
    if (!a.model.empty()) p.model_name = a.model;
  }
  return p;
}

int run_index(const ChunkArgs& c, const EmbedArgs& e) {
  const auto corpus = read_corpus(c.corpus);
  const auto chunks = chunk_corpus(corpus, chunking_from(c));
  const auto index = build_index(chunks, provider_from(e), corpus.name());
  save_index(index, c.out);
  std::cout << "chunks: " << index.size() << "\ndimension: " << index.dimension()
            << "\nfingerprint: " << index.embedder_fingerprint() << "\n";
  return 0;
}

// The embedder is recovered from the index header; only a remote endpoint
// has to be supplied.
EmbeddingProviderConfig provider_for(const VectorIndex& index, const std::string& endpoint) {
  auto p = provider_from_fingerprint(index.embedder_fingerprint());
  if (!endpoint.empty()) p.endpoint_url = endpoint;
  if (const char* env = std::getenv("BIORAG_EMBEDDING_ENDPOINT"); env && p.endpoint_url.empty()) p.endpoint_url = env;
  if (p.kind == ProviderKind::Remote && p.endpoint_url.empty()) {
    throw Error(ErrorCode::InvalidConfig, "index uses a remote embedder; pass --embed-endpoint");
  }
  return p;
}

int run_query(const QueryArgs& a) {
  const auto index = load_index(a.index);
  const auto provider = provider_for(index, a.embed_endpoint);

  RetrievalConfig rcfg;
  rcfg.top_k = a.top_k;
  GenerationConfig gcfg;
  gcfg.mode = parse_generation_mode(a.mode);
  gcfg.endpoint_url = a.llm_endpoint;
  if (const char* env = std::getenv("BIORAG_GENERATION_ENDPOINT"); env && gcfg.endpoint_url.empty()) {
    gcfg.endpoint_url = env;
  }
  if (gcfg.endpoint_url.empty()) throw Error(ErrorCode::InvalidConfig, "--llm-endpoint is required");
  if (!a.llm_model.empty()) gcfg.model_name = a.llm_model;

  const auto answer = ask(a.question, index, provider, rcfg, gcfg);
  std::cout << answer.text << "\n";
  if (a.show_sources) {
    std::cout << "\nSources:\n";
    for (const auto& hit : answer.prompt.included_hits) {
      const auto* chunk = index.find_chunk(hit.chunk_id);
      std::printf("  [%zu] %s (%s) score=%.4f\n", hit.rank, hit.chunk_id.c_str(),
                  chunk ? chunk->doc_id.c_str() : "?", hit.score);
    }
  }
  return 0;
}

int run_eval_cmd(const EvalArgs& a) {
  const auto index = load_index(a.index);
  const auto provider = provider_for(index, a.embed_endpoint);
  const auto pairs = read_qa_pairs(a.pairs);
  const auto configs = read_eval_configs(a.configs);
  const auto run = run_eval(pairs, configs, index, provider);
  write_report(run.report, run.records, a.out);
  for (const auto& row : run.report.rows) {
    std::printf("%-16s n=%zu errors=%zu em=%.4f bleu=%.4f bert_f1=%.4f\n", row.config_name.c_str(), row.n,
                row.errors, row.mean_em, row.mean_bleu, row.mean_bert_f1);
  }
  return 0;
}

QaService* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

int run_serve(const std::string& config_path) {
  QaService service(load_service_config(config_path));
  service.load_index();
  const int port = service.bind();
  std::cerr << "listening on " << service.config().host << ":" << port << "\n";
  g_service = &service;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  service.run();
  g_service = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Biomedical retrieval-augmented QA pipeline"};
  app.require_subcommand(1);

  IngestArgs ingest;
  auto* ingest_cmd = app.add_subcommand("ingest", "Normalize raw documents into a corpus file");
  ingest_cmd->add_option("--input", ingest.inputs, "Input files")->required()->check(CLI::ExistingFile);
  ingest_cmd->add_option("--format", ingest.format, "html|json|jsonl|txt")->capture_default_str();
  ingest_cmd->add_option("--out", ingest.out, "Output corpus (.jsonl)")->required();
  ingest_cmd->add_option("--tag", ingest.tags, "Metadata key=value added to every document");

  ChunkArgs chunk;
  auto add_chunk_opts = [&chunk](CLI::App* cmd) {
    cmd->add_option("--corpus", chunk.corpus, "Corpus file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--strategy", chunk.strategy, "recursive|sentence|adaptive")->capture_default_str();
    cmd->add_option("--chunk-size", chunk.chunk_size, "Chunk size in characters")->capture_default_str();
    cmd->add_option("--overlap", chunk.overlap, "Overlap in characters")->capture_default_str();
    cmd->add_option("--out", chunk.out, "Output path")->required();
  };
  auto* chunk_cmd = app.add_subcommand("chunk", "Split a corpus into chunks (.jsonl)");
  add_chunk_opts(chunk_cmd);

  EmbedArgs embed;
  auto* index_cmd = app.add_subcommand("index", "Chunk, embed and persist a vector index");
  add_chunk_opts(index_cmd);
  index_cmd->add_option("--provider", embed.provider, "deterministic|remote")->capture_default_str();
  index_cmd->add_option("--endpoint", embed.endpoint, "Embedding service URL");
  index_cmd->add_option("--model", embed.model, "Embedding model name");
  index_cmd->add_option("--dimension", embed.dimension, "Embedding dimension")->capture_default_str();

  QueryArgs query;
  auto* query_cmd = app.add_subcommand("query", "Answer one question");
  query_cmd->add_option("--index", query.index, "Index file")->required()->check(CLI::ExistingFile);
  query_cmd->add_option("--question", query.question, "Question text")->required();
  query_cmd->add_option("--top-k", query.top_k, "Chunks to retrieve")->capture_default_str()->check(CLI::PositiveNumber);
  query_cmd->add_option("--mode", query.mode, "rag|vanilla")->capture_default_str();
  query_cmd->add_flag("--show-sources", query.show_sources, "Print the sources used in the prompt");
  query_cmd->add_option("--llm-endpoint", query.llm_endpoint, "Chat completion service URL");
  query_cmd->add_option("--llm-model", query.llm_model, "Generator model name");
  query_cmd->add_option("--embed-endpoint", query.embed_endpoint, "Embedding service URL for remote indexes");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Score configurations against reference answers");
  eval_cmd->add_option("--index", eval.index, "Index file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--pairs", eval.pairs, "QA pairs (.jsonl)")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--configs", eval.configs, "Configurations (.json)")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--out", eval.out, "Report directory")->required();
  eval_cmd->add_option("--embed-endpoint", eval.embed_endpoint, "Embedding service URL for remote indexes");

  std::string serve_config;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
  serve_cmd->add_option("--config", serve_config, "Service TOML file")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*ingest_cmd) return run_ingest(ingest);
    if (*chunk_cmd) return run_chunk(chunk);
    if (*index_cmd) return run_index(chunk, embed);
    if (*query_cmd) return run_query(query);
    if (*eval_cmd) return run_eval_cmd(eval);
    if (*serve_cmd) return run_serve(serve_config);
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.code()) << ": " << e.detail() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: IoFailure: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
