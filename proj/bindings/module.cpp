// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cmflow/data.hpp"
#include "cmflow/eval.hpp"
#include "cmflow/flow.hpp"
#include "cmflow/target.hpp"
#include "cmflow/train.hpp"

namespace py = pybind11;
using namespace cmflow;

PYBIND11_MODULE(_cmflow, m) {
    m.doc() = "Conditional matrix flows over SPD matrices: annealed variational "
              "inference for sparse precision-matrix estimation.";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_RuntimeError);
    py::register_exception<IoError>(m, "IoError", PyExc_IOError);

    py::class_<Rng>(m, "Rng")
        .def(py::init<std::uint64_t>(), py::arg("seed"))
        .def("stream", &Rng::stream, py::arg("name"))
        .def("normal", &Rng::normal)
        .def("uniform", py::overload_cast<>(&Rng::uniform));

    py::class_<GroundTruth>(m, "GroundTruth")
        .def_readonly("omega", &GroundTruth::omega)
        .def_readonly("edges", &GroundTruth::edges);

    py::class_<Dataset>(m, "Dataset")
        .def_readonly("X", &Dataset::X)
        .def_readonly("S", &Dataset::S)
        .def_readonly("n", &Dataset::n)
        .def_readonly("d", &Dataset::d)
        .def_readonly("columns", &Dataset::columns)
        .def_readonly("block_s", &Dataset::block_s)
        .def_readonly("block_t", &Dataset::block_t);

    m.def("generate_sparse_precision", &generate_sparse_precision, py::arg("d"),
          py::arg("alpha"), py::arg("rng"));
    m.def("sample_gaussian", &sample_gaussian, py::arg("truth"), py::arg("n"), py::arg("rng"));
    m.def("load_csv", &load_csv, py::arg("path"),
          py::arg("query_columns") = std::vector<std::string>{});
    m.def(
        "dataset_from_matrix",
        [](const Mat& x) { return dataset_from_matrix(x); },
        py::arg("x"));

    py::class_<FlowConfig>(m, "FlowConfig")
        .def(py::init<>())
        .def_readwrite("dim", &FlowConfig::dim)
        .def_readwrite("block_s", &FlowConfig::block_s)
        .def_readwrite("block_t", &FlowConfig::block_t)
        .def_readwrite("layers", &FlowConfig::layers)
        .def_readwrite("sigmoids", &FlowConfig::sigmoids)
        .def_readwrite("linear_range", &FlowConfig::linear_range)
        .def_readwrite("hidden", &FlowConfig::hidden)
        .def_readwrite("lambda_min", &FlowConfig::lambda_min)
        .def_readwrite("lambda_max", &FlowConfig::lambda_max)
        .def_readwrite("q_min", &FlowConfig::q_min)
        .def_readwrite("q_max", &FlowConfig::q_max)
        .def("flow_dim", &FlowConfig::flow_dim);

    py::class_<FlowParameters>(m, "FlowParameters")
        .def_readonly("config", &FlowParameters::config)
        .def_readonly("temperature", &FlowParameters::temperature)
        .def_property_readonly("theta",
                               [](const FlowParameters& p) { return p.theta; })
        .def("save", &FlowParameters::save, py::arg("path"))
        .def_static("load", &FlowParameters::load, py::arg("path"));

    py::class_<PrecisionSample>(m, "PrecisionSample")
        .def_readonly("omega", &PrecisionSample::omega)
        .def_readonly("omega12", &PrecisionSample::omega12)
        .def_readonly("log_q", &PrecisionSample::log_q)
        .def_readonly("z", &PrecisionSample::z);

    py::class_<GGMTarget>(m, "GGMTarget")
        .def_static("full", &GGMTarget::full, py::arg("scatter"), py::arg("n"))
        .def_static("block", &GGMTarget::block, py::arg("scatter"), py::arg("n"), py::arg("s"))
        .def_static("from_dataset", &GGMTarget::from_dataset, py::arg("dataset"))
        .def_readonly("n", &GGMTarget::n)
        .def_readonly("d", &GGMTarget::d);

    py::class_<Condition>(m, "Condition")
        .def(py::init([](double lambda, double q, double temperature) {
                 return Condition{lambda, q, temperature};
             }),
             py::arg("lambda"), py::arg("q"), py::arg("temperature") = 1.0)
        .def_readwrite("lambda_", &Condition::lambda)
        .def_readwrite("q", &Condition::q)
        .def_readwrite("temperature", &Condition::temperature);

    m.def("unnorm_log_posterior", &unnorm_log_posterior, py::arg("omega"), py::arg("target"),
          py::arg("cond"));
    m.def("cmf_generate", &cmf_generate, py::arg("params"), py::arg("z"), py::arg("lambda"),
          py::arg("q"));
    m.def("posterior_samples", &posterior_samples, py::arg("params"), py::arg("lambda"),
          py::arg("q"), py::arg("count"), py::arg("rng"), py::arg("threads") = 1);

    py::class_<AnnealingSchedule>(m, "AnnealingSchedule")
        .def(py::init([](double t0, double tn, int steps) {
                 return AnnealingSchedule{t0, tn, steps};
             }),
             py::arg("t0") = 5.0, py::arg("tn") = 0.01, py::arg("steps") = 100)
        .def_readwrite("t0", &AnnealingSchedule::t0)
        .def_readwrite("tn", &AnnealingSchedule::tn)
        .def_readwrite("steps", &AnnealingSchedule::steps)
        .def("temperature", &AnnealingSchedule::temperature, py::arg("i"));

    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("epochs", &TrainConfig::epochs)
        .def_readwrite("mc_samples", &TrainConfig::mc_samples)
        .def_readwrite("conditions_per_batch", &TrainConfig::conditions_per_batch)
        .def_readwrite("schedule", &TrainConfig::schedule)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("checkpoint_every", &TrainConfig::checkpoint_every);

    py::class_<TracePoint>(m, "TracePoint")
        .def_readonly("epoch", &TracePoint::epoch)
        .def_readonly("temperature", &TracePoint::temperature)
        .def_readonly("loss", &TracePoint::loss);

    py::class_<TrainResult>(m, "TrainResult")
        .def_readonly("final_params", &TrainResult::final_params)
        .def_readonly("bayes_params", &TrainResult::bayes_params)
        .def_readonly("trace", &TrainResult::trace);

    m.def("train", &train, py::arg("flow_config"), py::arg("train_config"), py::arg("target"),
          py::arg("hook") = nullptr);
    m.def("estimate_marginal_loglik", &estimate_marginal_loglik, py::arg("params"),
          py::arg("target"), py::arg("lambda"), py::arg("q"), py::arg("m_samples"),
          py::arg("rng"));

    py::class_<EntryId>(m, "EntryId")
        .def_readonly("i", &EntryId::i)
        .def_readonly("j", &EntryId::j)
        .def_readonly("cross", &EntryId::cross);

    py::class_<CredibleSummary>(m, "CredibleSummary")
        .def_readonly("entries", &CredibleSummary::entries)
        .def_readonly("lower", &CredibleSummary::lower)
        .def_readonly("upper", &CredibleSummary::upper)
        .def_readonly("median", &CredibleSummary::median)
        .def_readonly("mean", &CredibleSummary::mean)
        .def_readonly("count", &CredibleSummary::count)
        .def_readonly("gamma", &CredibleSummary::gamma);

    py::class_<Edge>(m, "Edge")
        .def_readonly("i", &Edge::i)
        .def_readonly("j", &Edge::j)
        .def_readonly("sign", &Edge::sign)
        .def_readonly("lower", &Edge::lower)
        .def_readonly("upper", &Edge::upper);

    m.def("credible_intervals", &credible_intervals, py::arg("samples"), py::arg("gamma"));
    m.def("edge_set", &edge_set, py::arg("summary"));
    m.def("f1_score", &f1_score, py::arg("predicted"), py::arg("truth"));

    py::class_<SolutionPath>(m, "SolutionPath")
        .def_readonly("lambdas", &SolutionPath::lambdas)
        .def_readonly("q", &SolutionPath::q)
        .def_readonly("temperature", &SolutionPath::temperature)
        .def_readonly("entries", &SolutionPath::entries)
        .def_readonly("estimates", &SolutionPath::estimates);

    m.def("solution_path", &solution_path, py::arg("params"), py::arg("lambdas"), py::arg("q"),
          py::arg("n_map"), py::arg("rng"), py::arg("threads") = 1);
    m.def("path_mse", &path_mse, py::arg("a"), py::arg("b"));
    m.def("log_spaced", &log_spaced, py::arg("lo"), py::arg("hi"), py::arg("points"));

    py::class_<GlassoResult>(m, "GlassoResult")
        .def_readonly("omega", &GlassoResult::omega)
        .def_readonly("iterations", &GlassoResult::iterations)
        .def_readonly("kkt_residual", &GlassoResult::kkt_residual)
        .def_readonly("objective", &GlassoResult::objective);

    m.def(
        "glasso_fit",
        [](const Mat& cov, double lambda) { return glasso_fit(cov, lambda, Mat()); },
        py::arg("cov"), py::arg("lambda"));
    m.def(
        "reference_glasso_path",
        [](const Mat& s, int n, const std::vector<double>& lambdas) {
            return reference_glasso_path(s, n, lambdas);
        },
        py::arg("S"), py::arg("n"), py::arg("lambdas"));
    m.def("lambda_bayes_to_freq", &lambda_bayes_to_freq, py::arg("lambda"), py::arg("n"));

    py::class_<EvidenceCurve>(m, "EvidenceCurve")
        .def_readonly("lambdas", &EvidenceCurve::lambdas)
        .def_readonly("loglik", &EvidenceCurve::loglik)
        .def_readonly("best_lambda", &EvidenceCurve::best_lambda);

    m.def("select_lambda", &select_lambda, py::arg("params"), py::arg("target"),
          py::arg("lambdas"), py::arg("q"), py::arg("m_samples"), py::arg("rng"));
}
