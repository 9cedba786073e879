#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "ideodepth/agreement.hpp"
#include "ideodepth/corpus.hpp"
#include "ideodepth/errors.hpp"
#include "ideodepth/factor.hpp"
#include "ideodepth/irt.hpp"
#include "ideodepth/pipeline.hpp"
#include "ideodepth/steer.hpp"

namespace py = pybind11;
using namespace ideodepth;

namespace {

corpus::Response to_response(const py::handle& h) {
    if (h.is_none()) return corpus::Response::Null;
    const int v = h.cast<int>();
    if (v == 0) return corpus::Response::Conservative;
    if (v == 1) return corpus::Response::Liberal;
    throw DomainError("response must be 0, 1 or None");
}

py::object from_response(corpus::Response r) {
    if (r == corpus::Response::Null) return py::none();
    return py::int_(static_cast<int>(r));
}

py::dict solution_dict(const factor::FactorSolution& s) {
    py::dict d;
    d["labels"] = s.labels;
    d["loadings"] = s.loadings;
    d["initial_eigenvalues"] = s.initial_eigenvalues;
    d["eigenvalues"] = s.eigenvalues;
    d["communalities"] = s.communalities;
    d["proportions"] = s.proportions;
    d["rotation"] = s.rotation;
    d["converged"] = s.converged;
    d["iterations"] = s.iterations;
    d["heywood"] = s.heywood;
    return d;
}

py::dict summary_dict(const steer::ScoreSummary& s) {
    py::dict d;
    d["n"] = s.n;
    d["mean"] = s.mean;
    d["std"] = s.stddev;
    d["min"] = s.min;
    d["q1"] = s.q1;
    d["median"] = s.median;
    d["q3"] = s.q3;
    d["max"] = s.max;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "ideodepth core bindings";
    m.attr("__version__") = IDEODEPTH_VERSION;

    // Derived types last: pybind11 tries the newest translator first.
    auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    auto validation = py::register_exception<ValidationError>(m, "ValidationError", error.ptr());
    py::register_exception<ParseError>(m, "ParseError", validation.ptr());
    py::register_exception<FormatError>(m, "FormatError", validation.ptr());
    py::register_exception<CorruptionError>(m, "CorruptionError", validation.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", validation.ptr());
    py::register_exception<DomainError>(m, "DomainError", validation.ptr());
    py::register_exception<InsufficientDataError>(m, "InsufficientDataError", validation.ptr());
    py::register_exception<CoverageError>(m, "CoverageError", validation.ptr());
    auto convergence = py::register_exception<ConvergenceError>(m, "ConvergenceError", error.ptr());
    py::register_exception<factor::PafConvergenceError>(m, "PafConvergenceError", convergence.ptr());

    // corpus
    m.def(
        "parse_response_matrix",
        [](std::string_view text) {
            auto rm = corpus::parse_response_matrix_text(text);
            py::list rows;
            for (std::size_t r = 0; r < rm.rows(); ++r) {
                py::list row;
                for (std::size_t c = 0; c < rm.cols(); ++c) row.append(from_response(rm(r, c)));
                rows.append(row);
            }
            return py::make_tuple(rm.row_labels(), rm.col_labels(), rows);
        },
        py::arg("text"), "Returns (row_labels, col_labels, cells) with cells 0, 1 or None.");

    m.def(
        "encode_tensor",
        [](const std::vector<std::int64_t>& shape, const std::vector<float>& data,
           const std::map<std::string, std::string>& metadata) {
            corpus::TensorContainer c{metadata, shape, data};
            return py::bytes(corpus::encode_tensor(c));
        },
        py::arg("shape"), py::arg("data"), py::arg("metadata") = std::map<std::string, std::string>{});
    m.def(
        "decode_tensor",
        [](py::bytes b) {
            auto c = corpus::decode_tensor(std::string(b));
            return py::make_tuple(c.shape, c.data, c.metadata);
        },
        py::arg("data"), "Returns (shape, values, metadata).");

    // agreement
    m.def(
        "consistency",
        [](const py::sequence& answers) {
            std::vector<corpus::Response> v;
            for (auto h : answers) v.push_back(to_response(h));
            return agreement::consistency(v);
        },
        py::arg("answers"));
    m.def("fleiss_kappa", &agreement::fleiss_kappa, py::arg("counts"));

    // factor
    m.def(
        "principal_axis_factor",
        [](const Eigen::MatrixXd& r, std::optional<std::size_t> factors, double tolerance, int max_iterations,
           bool rotate) {
            std::vector<std::string> labels;
            for (Eigen::Index i = 0; i < r.rows(); ++i) labels.push_back("v" + std::to_string(i + 1));
            auto corr = factor::CorrelationMatrix::from_dense(labels, r);
            auto ret = factors ? factor::Retention::fixed(*factors) : factor::Retention::kaiser();
            auto s = factor::principal_axis_factor(corr, ret, {tolerance, max_iterations});
            return solution_dict(rotate ? factor::rotate_varimax(s) : s);
        },
        py::arg("r"), py::arg("factors") = std::nullopt, py::arg("tolerance") = 1e-4,
        py::arg("max_iterations") = 100, py::arg("rotate") = false);
    m.def(
        "varimax",
        [](const Eigen::MatrixXd& loadings, bool kaiser_normalize) {
            auto res = factor::varimax(loadings, {kaiser_normalize});
            return py::make_tuple(res.loadings, res.rotation);
        },
        py::arg("loadings"), py::arg("kaiser_normalize") = true);
    m.def("varimax_criterion", &factor::varimax_criterion, py::arg("loadings"), py::arg("kaiser_normalize") = true);

    // irt
    m.def(
        "log_likelihood",
        [](const Eigen::MatrixXd& theta, const Eigen::MatrixXd& alpha, const Eigen::VectorXd& beta,
           std::string_view responses_csv) {
            return irt::log_likelihood(theta, alpha, beta, corpus::parse_response_matrix_text(responses_csv));
        },
        py::arg("theta"), py::arg("alpha"), py::arg("beta"), py::arg("responses_csv"));
    m.def("logistic", &irt::logistic, py::arg("x"));
    m.def("split_rhat", &irt::split_rhat, py::arg("chains"));
    m.def("effective_sample_size", &irt::effective_sample_size, py::arg("chains"));
    m.def(
        "sample_correlation_2d", [](double eta, std::uint64_t seed) { return irt::sample_correlation_2d(eta, seed); },
        py::arg("eta"), py::arg("seed"));

    // steer
    m.def(
        "output_score",
        [](std::size_t original_rank, double original_prob, std::size_t intervened_rank, double intervened_prob,
           std::size_t vocab_size) {
            return steer::output_score({original_rank, original_prob}, {intervened_rank, intervened_prob},
                                       vocab_size);
        },
        py::arg("original_rank"), py::arg("original_prob"), py::arg("intervened_rank"),
        py::arg("intervened_prob"), py::arg("vocab_size"));
    m.def(
        "score_summary", [](const std::vector<double>& v) { return summary_dict(steer::score_summary(v)); },
        py::arg("scores"));

    // pipeline
    m.def(
        "run_all",
        [](const std::filesystem::path& config, std::optional<std::filesystem::path> out) {
            auto cfg = pipeline::PipelineConfig::load(config);
            if (out) cfg.output_dir = *out;
            pipeline::ReportBundle bundle;
            {
                py::gil_scoped_release release;
                bundle = pipeline::run_all(cfg);
            }
            py::dict files;
            for (const auto& f : bundle.files) files[py::str(f.path)] = f.sha256;
            py::dict d;
            d["files"] = files;
            d["converged"] = bundle.converged;
            d["manifest"] = bundle.manifest;
            return d;
        },
        py::arg("config"), py::arg("out") = std::nullopt);
    m.def("sha256_hex", [](py::bytes b) { return pipeline::sha256_hex(std::string(b)); }, py::arg("data"));
}
