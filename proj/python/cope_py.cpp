#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cope/errors.hpp"
#include "cope/evalsuite.hpp"
#include "cope/losses.hpp"
#include "cope/manifest.hpp"
#include "cope/synthetic.hpp"
#include "cope/trainer.hpp"

namespace py = pybind11;
using namespace cope;

namespace {

py::object to_python(const nlohmann::ordered_json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

EmbeddingTable make_table(const Matrix& rows, const std::vector<std::string>& sample_ids,
                          const std::vector<std::string>& product_ids, const std::vector<std::string>& domains) {
  if (sample_ids.size() != product_ids.size() || sample_ids.size() != domains.size()) {
    throw ShapeError("sample_ids, product_ids and domains must have one entry per row");
  }
  std::vector<EmbeddingRowMeta> meta;
  for (std::size_t i = 0; i < sample_ids.size(); ++i) {
    meta.push_back({sample_ids[i], product_ids[i], parse_domain(domains[i])});
  }
  return EmbeddingTable(rows, std::move(meta));
}

}  // namespace

PYBIND11_MODULE(cope_py, m) {
  m.doc() = "Cross-domain product representation toolkit";

  py::register_exception<Error>(m, "CopeError", PyExc_RuntimeError);

  m.def("lr_at", &lr_at, py::arg("step"), py::arg("total_steps"), py::arg("warmup_steps"), py::arg("max_lr"));

  m.def(
      "recall_mean", [](const std::vector<double>& r) { return recall_mean(r); }, py::arg("recalls"));

  m.def(
      "info_nce",
      [](const Vector& query, const Matrix& keys, const std::vector<bool>& positive, double tau) {
        std::vector<Vector> k;
        for (Eigen::Index i = 0; i < keys.rows(); ++i) k.push_back(keys.row(i).transpose());
        return info_nce(query, k, positive, tau);
      },
      py::arg("query"), py::arg("keys"), py::arg("positive"), py::arg("tau") = 0.07);

  m.def(
      "generate_manifest",
      [](const std::filesystem::path& path, std::uint32_t products, std::array<std::uint32_t, 3> per_domain,
         std::uint32_t frames, std::uint32_t image_size, std::uint64_t seed) {
        SyntheticConfig cfg;
        cfg.n_products = products;
        cfg.per_domain_counts = per_domain;
        cfg.frames_video = cfg.frames_live = frames;
        cfg.image_size = image_size;
        cfg.seed = seed;
        const Corpus corpus = generate_synthetic_corpus(cfg);
        save_manifest(corpus, path);
        return corpus.samples().size();
      },
      py::arg("path"), py::arg("products") = 10, py::arg("per_domain") = std::array<std::uint32_t, 3>{2, 2, 2},
      py::arg("frames") = 4, py::arg("image_size") = 16, py::arg("seed") = 0);

  m.def(
      "load_embeddings",
      [](const std::filesystem::path& path) {
        const EmbeddingTable t = load_embeddings(path);
        py::list meta;
        for (const auto& r : t.meta()) {
          py::dict d;
          d["sample_id"] = r.sample_id;
          d["product_id"] = r.product_id;
          d["domain"] = std::string(to_string(r.domain));
          meta.append(d);
        }
        return py::make_tuple(t.rows(), meta);
      },
      py::arg("path"));

  m.def(
      "retrieval_eval",
      [](const Matrix& rows, const std::vector<std::string>& sample_ids, const std::vector<std::string>& product_ids,
         const std::vector<std::string>& domains, const std::string& query, const std::string& gallery,
         const std::vector<int>& ks) {
        const EmbeddingTable t = make_table(rows, sample_ids, product_ids, domains);
        return to_python(retrieval_eval(t, parse_domain(query), parse_domain(gallery), ks).to_json());
      },
      py::arg("embeddings"), py::arg("sample_ids"), py::arg("product_ids"), py::arg("domains"), py::arg("query"),
      py::arg("gallery"), py::arg("ks") = kDefaultRecallKs);
}
