#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "biorag/chunking.hpp"
#include "biorag/corpus.hpp"
#include "biorag/embedding.hpp"
#include "biorag/error.hpp"
#include "biorag/eval.hpp"
#include "biorag/vector_index.hpp"

namespace py = pybind11;
using namespace biorag;

namespace {

ChunkingConfig make_chunking(const std::string& strategy, std::size_t chunk_size, std::size_t overlap) {
  ChunkingConfig cfg;
  cfg.strategy = parse_chunk_strategy(strategy);
  cfg.chunk_size = chunk_size;
  cfg.overlap = overlap;
  cfg.validate();
  return cfg;
}

EmbeddingProviderConfig deterministic(std::size_t dimension) {
  EmbeddingProviderConfig p;
  p.model_name = std::string(kDeterministicModel);
  p.dimension = dimension;
  return p;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bindings for the biorag retrieval pipeline";

  static py::exception<Error> py_error(m, "BioragError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py_error((std::string(to_string(e.code())) + ": " + e.detail()).c_str());
    }
  });

  m.def("normalize_text", &normalize_text, py::arg("raw"));
  m.def("strip_html", &strip_html, py::arg("raw"));

  py::class_<Chunk>(m, "Chunk")
      .def_readonly("chunk_id", &Chunk::chunk_id)
      .def_readonly("doc_id", &Chunk::doc_id)
      .def_readonly("ordinal", &Chunk::ordinal)
      .def_readonly("text", &Chunk::text)
      .def_readonly("char_start", &Chunk::char_start)
      .def_readonly("char_end", &Chunk::char_end)
      .def_property_readonly("overlap_length", &Chunk::overlap_length)
      .def("__repr__", [](const Chunk& c) { return "<Chunk " + c.chunk_id + ">"; });

  m.def(
      "chunk_text",
      [](const std::string& text, const std::string& strategy, std::size_t chunk_size, std::size_t overlap,
         const std::string& doc_id) { return chunk_text(text, make_chunking(strategy, chunk_size, overlap), doc_id); },
      py::arg("text"), py::arg("strategy") = "recursive", py::arg("chunk_size") = 1000, py::arg("overlap") = 150,
      py::arg("doc_id") = "doc");
  m.def("reconstruct", &reconstruct, py::arg("chunks"));

  m.def(
      "embed",
      [](const std::string& text, std::size_t dimension) {
        const auto v = embed_deterministic(text, dimension);
        return std::vector<float>(v.values().begin(), v.values().end());
      },
      py::arg("text"), py::arg("dimension") = kDefaultDimension);

  py::class_<SearchHit>(m, "SearchHit")
      .def_readonly("chunk_id", &SearchHit::chunk_id)
      .def_readonly("score", &SearchHit::score)
      .def_readonly("rank", &SearchHit::rank);

  py::class_<VectorIndex>(m, "VectorIndex")
      .def_static(
          "build",
          [](const std::vector<Chunk>& chunks, std::size_t dimension) {
            return build_index(chunks, deterministic(dimension));
          },
          py::arg("chunks"), py::arg("dimension") = kDefaultDimension)
      .def_static("load", [](const std::filesystem::path& p) { return load_index(p); })
      .def("save", [](const VectorIndex& ix, const std::filesystem::path& p) { save_index(ix, p); })
      .def(
          "search",
          [](const VectorIndex& ix, const std::string& query, std::size_t top_k) {
            const auto provider = provider_from_fingerprint(ix.embedder_fingerprint());
            return ix.search(embed_one(query, provider), RetrievalConfig{top_k, -1.0});
          },
          py::arg("query"), py::arg("top_k") = 5)
      .def("__len__", &VectorIndex::size)
      .def_property_readonly("dimension", &VectorIndex::dimension)
      .def_property_readonly("fingerprint", &VectorIndex::embedder_fingerprint);

  m.def("normalize_answer", &normalize_answer);
  m.def("exact_match", &exact_match, py::arg("candidate"), py::arg("reference"));
  m.def(
      "bleu",
      [](const std::string& candidate, const std::string& reference, bool smooth) {
        return bleu4(bleu_tokenize(candidate), bleu_tokenize(reference), smooth).score;
      },
      py::arg("candidate"), py::arg("reference"), py::arg("smooth") = false);
  m.def(
      "bert_score",
      [](const std::string& candidate, const std::string& reference, std::size_t dimension) {
        const auto r = bert_score_texts(candidate, reference, deterministic(dimension));
        return py::make_tuple(r.precision, r.recall, r.f1);
      },
      py::arg("candidate"), py::arg("reference"), py::arg("dimension") = kDefaultDimension);
}
