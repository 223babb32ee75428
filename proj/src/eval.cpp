#include "biorag/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>
#include <unicode/uchar.h>

#include "biorag/config.hpp"
#include "biorag/error.hpp"
#include "utf8.hpp"

namespace biorag {

using json = nlohmann::json;

std::vector<QAPair> read_qa_pairs(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::vector<QAPair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto violation = [&](const std::string& why) {
      return Error(ErrorCode::SchemaViolation, path.string() + " line " + std::to_string(line_no) + ": " + why);
    };
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error&) {
      throw violation("invalid JSON");
    }
    QAPair p;
    try {
      p.qid = j.at("qid").is_string() ? j.at("qid").get<std::string>() : j.at("qid").dump();
      p.question = j.at("question").get<std::string>();
      p.reference_answer = j.at("reference_answer").get<std::string>();
      if (const auto it = j.find("tags"); it != j.end() && it->is_object()) {
        for (const auto& [k, v] : it->items()) p.tags[k] = v.is_string() ? v.get<std::string>() : v.dump();
      }
    } catch (const json::exception& e) {
      throw violation(e.what());
    }
    if (p.question.empty() || p.reference_answer.empty()) throw violation("question and reference must be non-empty");
    pairs.push_back(std::move(p));
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// Exact match

std::string normalize_answer(std::string_view s) {
  std::string folded;
  std::size_t pos = 0;
  while (pos < s.size()) {
    const auto c = static_cast<UChar32>(utf8::next(s, pos));
    if (u_ispunct(c)) continue;
    if (u_isUWhiteSpace(c)) {
      folded += ' ';
      continue;
    }
    utf8::append(folded, static_cast<char32_t>(u_tolower(c)));
  }
  std::string out;
  std::istringstream words(folded);
  std::string word;
  while (words >> word) {
    if (word == "a" || word == "an" || word == "the") continue;
    if (!out.empty()) out += ' ';
    out += word;
  }
  return out;
}

int exact_match(std::string_view candidate, std::string_view reference) {
  return normalize_answer(candidate) == normalize_answer(reference) ? 1 : 0;
}

// ---------------------------------------------------------------------------
// BLEU

std::vector<std::string> bleu_tokenize(std::string_view s) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  std::size_t pos = 0;
  while (pos < s.size()) {
    const auto c = static_cast<UChar32>(utf8::next(s, pos));
    if (u_isUWhiteSpace(c)) {
      flush();
    } else if (u_ispunct(c)) {
      flush();
      utf8::append(current, static_cast<char32_t>(c));
      flush();
    } else {
      utf8::append(current, static_cast<char32_t>(u_tolower(c)));
    }
  }
  flush();
  return tokens;
}

namespace {

std::map<std::vector<std::string_view>, std::size_t> ngram_counts(std::span<const std::string> tokens, std::size_t n) {
  std::map<std::vector<std::string_view>, std::size_t> counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::vector<std::string_view> gram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                       tokens.begin() + static_cast<std::ptrdiff_t>(i + n));
    ++counts[gram];
  }
  return counts;
}

}  // namespace

BleuResult bleu4(std::span<const std::string> candidate, std::span<const std::string> reference, bool smooth) {
  BleuResult result;
  result.candidate_len = candidate.size();
  result.reference_len = reference.size();
  if (candidate.empty()) return result;

  bool any_zero = false;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto cand_counts = ngram_counts(candidate, n);
    const auto ref_counts = ngram_counts(reference, n);
    std::size_t matches = 0;
    for (const auto& [gram, count] : cand_counts) {
      const auto it = ref_counts.find(gram);
      if (it != ref_counts.end()) matches += std::min(count, it->second);
    }
    const std::size_t total = candidate.size() >= n ? candidate.size() - n + 1 : 0;
    double p = 0.0;
    if (smooth && n > 1) {
      p = static_cast<double>(matches + 1) / static_cast<double>(total + 1);
    } else if (total > 0) {
      p = static_cast<double>(matches) / static_cast<double>(total);
    }
    result.precisions[n - 1] = p;
    if (p == 0.0) any_zero = true;
    else log_sum += 0.25 * std::log(p);
  }

  const auto c = static_cast<double>(candidate.size());
  const auto r = static_cast<double>(reference.size());
  result.brevity_penalty = c > r ? 1.0 : std::exp(1.0 - r / c);
  result.score = any_zero ? 0.0 : result.brevity_penalty * std::exp(log_sum);
  return result;
}

// ---------------------------------------------------------------------------
// BERTScore

TokenMatrix TokenMatrix::from_vectors(std::span<const EmbeddingVector> vectors) {
  TokenMatrix m;
  m.rows = vectors.size();
  m.cols = vectors.empty() ? 0 : vectors.front().dimension();
  m.data.reserve(m.rows * m.cols);
  for (const auto& v : vectors) {
    if (v.dimension() != m.cols) throw Error(ErrorCode::DimensionMismatch, "token vectors differ in dimension");
    for (const auto x : v.values()) m.data.push_back(static_cast<double>(x));
  }
  return m;
}

namespace {

constexpr double kUnitTolerance = 1e-6;

void check_matrix(const TokenMatrix& m, const char* name) {
  if (m.rows == 0 || m.cols == 0) throw Error(ErrorCode::EmptyMatrix, std::string(name) + " matrix is empty");
  if (m.data.size() != m.rows * m.cols) {
    throw Error(ErrorCode::DimensionMismatch, std::string(name) + " matrix data does not match its shape");
  }
  for (std::size_t i = 0; i < m.rows; ++i) {
    double sq = 0.0;
    for (const auto x : m.row(i)) sq += x * x;
    if (std::abs(std::sqrt(sq) - 1.0) > kUnitTolerance) {
      throw Error(ErrorCode::RowNotNormalized, std::string(name) + " row " + std::to_string(i));
    }
  }
}

double row_dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

}  // namespace

BertScoreResult bert_score(const TokenMatrix& ref, const TokenMatrix& cand) {
  check_matrix(ref, "reference");
  check_matrix(cand, "candidate");
  if (ref.cols != cand.cols) {
    throw Error(ErrorCode::DimensionMismatch,
                "reference dimension " + std::to_string(ref.cols) + " vs candidate " + std::to_string(cand.cols));
  }
  std::vector<double> sim(ref.rows * cand.rows);
  for (std::size_t i = 0; i < ref.rows; ++i) {
    for (std::size_t j = 0; j < cand.rows; ++j) sim[i * cand.rows + j] = row_dot(ref.row(i), cand.row(j));
  }
  double recall = 0.0;
  for (std::size_t i = 0; i < ref.rows; ++i) {
    double best = sim[i * cand.rows];
    for (std::size_t j = 1; j < cand.rows; ++j) best = std::max(best, sim[i * cand.rows + j]);
    recall += best;
  }
  double precision = 0.0;
  for (std::size_t j = 0; j < cand.rows; ++j) {
    double best = sim[j];
    for (std::size_t i = 1; i < ref.rows; ++i) best = std::max(best, sim[i * cand.rows + j]);
    precision += best;
  }
  BertScoreResult r;
  r.recall = recall / static_cast<double>(ref.rows);
  r.precision = precision / static_cast<double>(cand.rows);
  const double sum = r.precision + r.recall;
  if (sum > 0.0) {
    // Rounding can push 2PR/(P+R) one ulp outside [min(P,R), max(P,R)].
    const auto [lo, hi] = std::minmax(r.precision, r.recall);
    r.f1 = std::clamp(2.0 * r.precision * r.recall / sum, lo, hi);
  }
  return r;
}

std::vector<std::string> bert_tokens(std::string_view s) {
  std::vector<std::string> tokens;
  std::istringstream words(normalize_answer(s));
  std::string word;
  while (words >> word) {
    std::size_t pos = 0;
    bool has_alnum = false;
    while (pos < word.size() && !has_alnum) has_alnum = u_isalnum(static_cast<UChar32>(utf8::next(word, pos)));
    if (has_alnum) tokens.push_back(std::move(word));
  }
  return tokens;
}

BertScoreResult bert_score_texts(std::string_view candidate, std::string_view reference,
                                 const EmbeddingProviderConfig& provider) {
  const auto cand_tokens = bert_tokens(candidate);
  const auto ref_tokens = bert_tokens(reference);
  if (cand_tokens.empty() || ref_tokens.empty()) return {};
  const auto cand = TokenMatrix::from_vectors(embed_batch(cand_tokens, provider));
  const auto ref = TokenMatrix::from_vectors(embed_batch(ref_tokens, provider));
  return bert_score(ref, cand);
}

// ---------------------------------------------------------------------------
// Harness

std::vector<EvalConfig> read_eval_configs(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
  }
  if (!j.is_array()) throw Error(ErrorCode::InvalidConfig, path.string() + ": expected an array of configurations");
  std::vector<EvalConfig> configs;
  for (const auto& item : j) {
    if (!item.is_object() || !item.contains("name") || !item["name"].is_string()) {
      throw Error(ErrorCode::InvalidConfig, "every configuration needs a string 'name'");
    }
    EvalConfig c;
    c.name = item["name"].get<std::string>();
    if (item.contains("retrieval")) c.retrieval = retrieval_config_from_json(item["retrieval"]);
    if (item.contains("generation")) c.generation = generation_config_from_json(item["generation"]);
    configs.push_back(std::move(c));
  }
  return configs;
}

MetricReport aggregate(const std::vector<EvalConfig>& configs, const std::vector<EvalRecord>& records) {
  MetricReport report;
  for (const auto& cfg : configs) {
    ConfigAggregate row;
    row.config_name = cfg.name;
    double em = 0.0;
    double bleu = 0.0;
    double f1 = 0.0;
    for (const auto& r : records) {
      if (r.config_name != cfg.name) continue;
      if (r.error) {
        ++row.errors;
        continue;
      }
      ++row.n;
      em += r.em;
      bleu += r.bleu.score;
      f1 += r.bert.f1;
    }
    if (row.n > 0) {
      const auto n = static_cast<double>(row.n);
      row.mean_em = em / n;
      row.mean_bleu = bleu / n;
      row.mean_bert_f1 = f1 / n;
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

EvalRun run_eval(const std::vector<QAPair>& pairs, const std::vector<EvalConfig>& configs, const VectorIndex& index,
                 const EmbeddingProviderConfig& provider) {
  if (pairs.empty()) throw Error(ErrorCode::EmptyInput, "no QA pairs to evaluate");
  if (configs.empty()) throw Error(ErrorCode::EmptyInput, "no configurations to evaluate");
  for (const auto& cfg : configs) {
    if (cfg.generation.mode != GenerationMode::Rag) continue;
    if (index.empty()) throw Error(ErrorCode::EmptyIndex, "configuration '" + cfg.name + "' needs a non-empty index");
    if (index.embedder_fingerprint() != provider.fingerprint()) {
      throw Error(ErrorCode::FingerprintMismatch,
                  "index built with '" + index.embedder_fingerprint() + "', provider is '" + provider.fingerprint() + "'");
    }
  }

  EvalRun run;
  for (const auto& cfg : configs) {
    for (const auto& pair : pairs) {
      EvalRecord rec;
      rec.qid = pair.qid;
      rec.config_name = cfg.name;
      try {
        rec.generated_answer = ask(pair.question, index, provider, cfg.retrieval, cfg.generation).text;
        rec.em = exact_match(rec.generated_answer, pair.reference_answer);
        rec.bleu = bleu4(bleu_tokenize(rec.generated_answer), bleu_tokenize(pair.reference_answer));
        rec.bert = bert_score_texts(rec.generated_answer, pair.reference_answer, provider);
      } catch (const Error& e) {
        rec.error = e.what();
      }
      run.records.push_back(std::move(rec));
    }
  }
  run.report = aggregate(configs, run.records);
  return run;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

void write_report(const MetricReport& report, const std::vector<EvalRecord>& records,
                  const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message());

  std::ofstream jsonl(dir / "records.jsonl", std::ios::binary | std::ios::trunc);
  if (!jsonl) throw Error(ErrorCode::IoFailure, "cannot write " + (dir / "records.jsonl").string());
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["qid"] = r.qid;
    j["config_name"] = r.config_name;
    j["generated_answer"] = r.generated_answer;
    j["em"] = r.em;
    j["bleu"] = {{"score", r.bleu.score},
                 {"precisions", r.bleu.precisions},
                 {"brevity_penalty", r.bleu.brevity_penalty},
                 {"candidate_len", r.bleu.candidate_len},
                 {"reference_len", r.bleu.reference_len}};
    j["bert"] = {{"precision", r.bert.precision}, {"recall", r.bert.recall}, {"f1", r.bert.f1}};
    j["error"] = r.error ? json(*r.error) : json(nullptr);
    jsonl << j.dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
  }
  jsonl.flush();
  if (!jsonl) throw Error(ErrorCode::IoFailure, "write failed for records.jsonl");

  std::ofstream csv(dir / "summary.csv", std::ios::binary | std::ios::trunc);
  if (!csv) throw Error(ErrorCode::IoFailure, "cannot write " + (dir / "summary.csv").string());
  csv << "config_name,n,mean_em,mean_bleu,mean_bert_f1\n";
  for (const auto& row : report.rows) {
    if (row.n == 0 && row.errors == 0) continue;  // configuration with no records
    const bool empty = row.n == 0;
    csv << csv_field(row.config_name) << ',' << row.n << ',' << (empty ? "nan" : fixed6(row.mean_em)) << ','
        << (empty ? "nan" : fixed6(row.mean_bleu)) << ',' << (empty ? "nan" : fixed6(row.mean_bert_f1)) << '\n';
  }
  csv.flush();
  if (!csv) throw Error(ErrorCode::IoFailure, "write failed for summary.csv");
}

}  // namespace biorag
