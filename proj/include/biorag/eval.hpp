#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "biorag/corpus.hpp"
#include "biorag/embedding.hpp"
#include "biorag/rag_engine.hpp"
#include "biorag/vector_index.hpp"

namespace biorag {

struct QAPair {
  std::string qid;
  std::string question;
  std::string reference_answer;
  Metadata tags;
};

// JSONL with keys qid, question, reference_answer, tags. Throws
// Error(IoFailure) or Error(SchemaViolation).
std::vector<QAPair> read_qa_pairs(const std::filesystem::path& path);

// Lowercase, drop Unicode punctuation, drop the articles a/an/the, collapse
// whitespace.
std::string normalize_answer(std::string_view s);

int exact_match(std::string_view candidate, std::string_view reference);

// Lowercases, splits punctuation off into its own tokens, splits on
// whitespace.
std::vector<std::string> bleu_tokenize(std::string_view s);

struct BleuResult {
  double score = 0.0;
  std::array<double, 4> precisions{};
  double brevity_penalty = 0.0;
  std::size_t candidate_len = 0;
  std::size_t reference_len = 0;
};

// Sentence BLEU-4 with clipped n-gram counts and uniform weights. With
// `smooth`, orders 2-4 use add-one smoothing.
BleuResult bleu4(std::span<const std::string> candidate, std::span<const std::string> reference,
                 bool smooth = false);

// Row-major matrix of unit-norm token embeddings.
struct TokenMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  std::span<const double> row(std::size_t i) const { return std::span<const double>(data).subspan(i * cols, cols); }
  static TokenMatrix from_vectors(std::span<const EmbeddingVector> vectors);
};

struct BertScoreResult {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Greedy matching over the similarity matrix. Throws Error(EmptyMatrix),
// Error(DimensionMismatch) or Error(RowNotNormalized).
BertScoreResult bert_score(const TokenMatrix& ref, const TokenMatrix& cand);

// Words of normalize_answer(s) that carry at least one letter or digit; the
// units BERTScore embeds.
std::vector<std::string> bert_tokens(std::string_view s);

// Embeds tokens of both texts with `provider` and scores them. Returns all
// zeros when either side has no tokens.
BertScoreResult bert_score_texts(std::string_view candidate, std::string_view reference,
                                 const EmbeddingProviderConfig& provider);

struct EvalConfig {
  std::string name;
  RetrievalConfig retrieval;
  GenerationConfig generation;
};

// JSON array of {name, retrieval: {top_k, min_score}, generation: {...}}.
std::vector<EvalConfig> read_eval_configs(const std::filesystem::path& path);

struct EvalRecord {
  std::string qid;
  std::string config_name;
  std::string generated_answer;
  int em = 0;
  BleuResult bleu;
  BertScoreResult bert;
  std::optional<std::string> error;  // set when the question failed
};

struct ConfigAggregate {
  std::string config_name;
  std::size_t n = 0;       // successful records
  std::size_t errors = 0;  // failed records, excluded from the means
  double mean_em = 0.0;
  double mean_bleu = 0.0;
  double mean_bert_f1 = 0.0;
};

struct MetricReport {
  std::vector<ConfigAggregate> rows;  // configuration input order
};

struct EvalRun {
  MetricReport report;
  std::vector<EvalRecord> records;  // ordered by configuration, then pair
};

MetricReport aggregate(const std::vector<EvalConfig>& configs, const std::vector<EvalRecord>& records);

// Runs every pair through every configuration. Per-question failures become
// errored records. Throws Error(EmptyInput) without pairs or configurations
// and Error(EmptyIndex) when a rag configuration meets an empty index.
EvalRun run_eval(const std::vector<QAPair>& pairs, const std::vector<EvalConfig>& configs, const VectorIndex& index,
                 const EmbeddingProviderConfig& provider);

// Writes <dir>/records.jsonl and <dir>/summary.csv.
void write_report(const MetricReport& report, const std::vector<EvalRecord>& records,
                  const std::filesystem::path& dir);

}  // namespace biorag
