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

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cmflow/data.hpp"
#include "cmflow/errors.hpp"
#include "cmflow/eval.hpp"
#include "cmflow/flow.hpp"
#include "cmflow/log.hpp"
#include "cmflow/target.hpp"
#include "cmflow/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cmflow;

namespace {

// Exit codes: 0 success, 2 configuration error, 3 numeric divergence,
// 4 I/O error.
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

struct RunConfig {
    std::string mode = "full";
    std::string data_path;
    std::vector<std::string> query_columns;
    double lambda_min = 0.1, lambda_max = 10.0;
    double q_min = 0.25, q_max = 2.0;
    int layers = 4, sigmoids = 8, hidden = 64;
    double linear_range = 3.0;
    TrainConfig train;
    std::uint64_t seed = 1;
    int threads = 1;
    std::string out = "run";
};

void reject_unknown(const json& node, const std::vector<std::string>& allowed,
                    const std::string& where) {
    for (const auto& [key, value] : node.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw ConfigError("unknown config key '" + where + key + "'");
        }
    }
}

RunConfig parse_config(const json& j) {
    RunConfig cfg;
    reject_unknown(j, {"mode", "data", "lambda_range", "q_range", "flow", "train", "seed",
                       "threads", "out"},
                   "");
    if (j.contains("mode")) {
        cfg.mode = j.at("mode").get<std::string>();
        if (cfg.mode != "full" && cfg.mode != "block") {
            throw ConfigError("mode must be 'full' or 'block'");
        }
    }
    if (j.contains("data")) {
        const json& d = j.at("data");
        reject_unknown(d, {"path", "query_columns"}, "data.");
        if (d.contains("path")) cfg.data_path = d.at("path").get<std::string>();
        if (d.contains("query_columns")) {
            cfg.query_columns = d.at("query_columns").get<std::vector<std::string>>();
        }
    }
    auto range = [&](const char* key, double& lo, double& hi) {
        if (j.contains(key)) {
            const auto v = j.at(key).get<std::vector<double>>();
            if (v.size() != 2) {
                throw ConfigError(std::string(key) + " must be [min, max]");
            }
            lo = v[0];
            hi = v[1];
        }
    };
    range("lambda_range", cfg.lambda_min, cfg.lambda_max);
    range("q_range", cfg.q_min, cfg.q_max);
    if (j.contains("flow")) {
        const json& f = j.at("flow");
        reject_unknown(f, {"layers", "sigmoids", "linear_range", "hidden"}, "flow.");
        cfg.layers = f.value("layers", cfg.layers);
        cfg.sigmoids = f.value("sigmoids", cfg.sigmoids);
        cfg.linear_range = f.value("linear_range", cfg.linear_range);
        cfg.hidden = f.value("hidden", cfg.hidden);
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        reject_unknown(t,
                       {"epochs", "mc_samples", "conditions_per_batch", "learning_rate",
                        "beta1", "beta2", "epsilon", "grad_clip", "checkpoint_every",
                        "divergence_threshold", "divergence_patience", "schedule"},
                       "train.");
        cfg.train.epochs = t.value("epochs", cfg.train.epochs);
        cfg.train.mc_samples = t.value("mc_samples", cfg.train.mc_samples);
        cfg.train.conditions_per_batch =
            t.value("conditions_per_batch", cfg.train.conditions_per_batch);
        cfg.train.adam.learning_rate = t.value("learning_rate", cfg.train.adam.learning_rate);
        cfg.train.adam.beta1 = t.value("beta1", cfg.train.adam.beta1);
        cfg.train.adam.beta2 = t.value("beta2", cfg.train.adam.beta2);
        cfg.train.adam.epsilon = t.value("epsilon", cfg.train.adam.epsilon);
        cfg.train.adam.grad_clip = t.value("grad_clip", cfg.train.adam.grad_clip);
        cfg.train.checkpoint_every = t.value("checkpoint_every", cfg.train.checkpoint_every);
        cfg.train.divergence_threshold =
            t.value("divergence_threshold", cfg.train.divergence_threshold);
        cfg.train.divergence_patience =
            t.value("divergence_patience", cfg.train.divergence_patience);
        if (t.contains("schedule")) {
            const json& s = t.at("schedule");
            reject_unknown(s, {"t0", "tn", "steps"}, "train.schedule.");
            cfg.train.schedule.t0 = s.value("t0", cfg.train.schedule.t0);
            cfg.train.schedule.tn = s.value("tn", cfg.train.schedule.tn);
            cfg.train.schedule.steps = s.value("steps", cfg.train.schedule.steps);
        }
    }
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("threads")) cfg.threads = j.at("threads").get<int>();
    if (j.contains("out")) cfg.out = j.at("out").get<std::string>();
    return cfg;
}

// Every default materialized, for reproducible reruns.
json echo_config(const RunConfig& cfg) {
    json j;
    j["mode"] = cfg.mode;
    j["data"] = {{"path", cfg.data_path}, {"query_columns", cfg.query_columns}};
    j["lambda_range"] = {cfg.lambda_min, cfg.lambda_max};
    j["q_range"] = {cfg.q_min, cfg.q_max};
    j["flow"] = {{"layers", cfg.layers},
                 {"sigmoids", cfg.sigmoids},
                 {"linear_range", cfg.linear_range},
                 {"hidden", cfg.hidden}};
    j["train"] = {{"epochs", cfg.train.epochs},
                  {"mc_samples", cfg.train.mc_samples},
                  {"conditions_per_batch", cfg.train.conditions_per_batch},
                  {"learning_rate", cfg.train.adam.learning_rate},
                  {"beta1", cfg.train.adam.beta1},
                  {"beta2", cfg.train.adam.beta2},
                  {"epsilon", cfg.train.adam.epsilon},
                  {"grad_clip", cfg.train.adam.grad_clip},
                  {"checkpoint_every", cfg.train.checkpoint_every},
                  {"divergence_threshold", cfg.train.divergence_threshold},
                  {"divergence_patience", cfg.train.divergence_patience},
                  {"schedule",
                   {{"t0", cfg.train.schedule.t0},
                    {"tn", cfg.train.schedule.tn},
                    {"steps", cfg.train.schedule.steps}}}};
    j["seed"] = cfg.seed;
    j["threads"] = cfg.threads;
    j["out"] = cfg.out;
    return j;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open config " + path);
    }
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    return parse_config(j);
}

void ensure_out_dir(const std::string& out) {
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) {
        throw IoError("cannot create output directory " + out + ": " + ec.message());
    }
}

Dataset load_dataset(const RunConfig& cfg) {
    if (cfg.data_path.empty()) {
        throw ConfigError("config needs data.path");
    }
    if (cfg.mode == "block" && cfg.query_columns.empty()) {
        throw ConfigError("block mode needs data.query_columns");
    }
    return load_csv(cfg.data_path, cfg.mode == "block" ? cfg.query_columns
                                                       : std::vector<std::string>{});
}

FlowConfig flow_config_for(const RunConfig& cfg, const Dataset& ds) {
    FlowConfig fc;
    if (cfg.mode == "block") {
        fc.dim = 0;
        fc.block_s = ds.block_s;
        fc.block_t = ds.block_t;
    } else {
        fc.dim = ds.d;
    }
    fc.layers = cfg.layers;
    fc.sigmoids = cfg.sigmoids;
    fc.linear_range = cfg.linear_range;
    fc.hidden = cfg.hidden;
    fc.lambda_min = cfg.lambda_min;
    fc.lambda_max = cfg.lambda_max;
    fc.q_min = cfg.q_min;
    fc.q_max = cfg.q_max;
    return fc;
}

std::vector<std::pair<int, int>> load_truth_edges(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open truth file " + path);
    }
    std::string line;
    std::getline(in, line);  // header
    std::vector<std::pair<int, int>> edges;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() < 2) {
            throw IoError("truth file row needs at least i,j");
        }
        edges.emplace_back(std::stoi(cells[0]) - 1, std::stoi(cells[1]) - 1);
    }
    return edges;
}

// ---------------------------------------------------------------------------

int cmd_generate(int dim, double alpha, int samples, std::uint64_t seed,
                 const std::string& out) {
    ensure_out_dir(out);
    Rng root(seed);
    Rng truth_rng = root.stream("data.truth");
    Rng sample_rng = root.stream("data.samples");

    const GroundTruth truth = generate_sparse_precision(dim, alpha, truth_rng);
    const Dataset ds = sample_gaussian(truth, samples, sample_rng);

    write_csv(out + "/data.csv", ds.X, ds.columns);
    write_csv(out + "/truth_omega.csv", truth.omega, ds.columns);
    {
        std::ofstream edges(out + "/truth_edges.csv");
        if (!edges) {
            throw IoError("cannot write " + out + "/truth_edges.csv");
        }
        edges << "i,j,value\n";
        edges.precision(12);
        for (const auto& [i, j] : truth.edges) {
            edges << i + 1 << ',' << j + 1 << ',' << truth.omega(i, j) << '\n';
        }
    }
    json meta;
    meta["dim"] = dim;
    meta["alpha"] = alpha;
    meta["samples"] = samples;
    meta["seed"] = seed;
    meta["edges"] = truth.edges.size();
    std::ofstream mf(out + "/generate.json");
    mf << meta.dump(2) << '\n';
    std::cout << "wrote " << out << "/data.csv (" << ds.n << "x" << ds.d << "), "
              << truth.edges.size() << " true edges\n";
    return 0;
}

int cmd_train(const RunConfig& cfg) {
    ensure_out_dir(cfg.out);
    const Dataset ds = load_dataset(cfg);
    const GGMTarget target = GGMTarget::from_dataset(ds);
    const FlowConfig fc = flow_config_for(cfg, ds);

    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;

    {
        std::ofstream cj(cfg.out + "/config.json");
        if (!cj) {
            throw IoError("cannot write " + cfg.out + "/config.json");
        }
        cj << echo_config(cfg).dump(2) << '\n';
    }

    CheckpointHook hook;
    if (tc.checkpoint_every > 0) {
        hook = [&cfg](int epoch, const FlowParameters& p) {
            p.save(cfg.out + "/snapshot_epoch" + std::to_string(epoch + 1) + ".ckpt");
        };
    }
    const TrainResult result = train(fc, tc, target, hook);

    if (result.bayes_params) {
        result.bayes_params->save(cfg.out + "/checkpoint_T1.ckpt");
    }
    result.final_params.save(cfg.out + "/checkpoint_Tfinal.ckpt");
    {
        std::ofstream trace(cfg.out + "/loss_trace.csv");
        if (!trace) {
            throw IoError("cannot write " + cfg.out + "/loss_trace.csv");
        }
        trace.precision(12);
        trace << "epoch,T,loss\n";
        for (const TracePoint& p : result.trace) {
            trace << p.epoch << ',' << p.temperature << ',' << p.loss << '\n';
        }
    }
    std::cout << "final loss " << result.trace.back().loss << " at T="
              << result.trace.back().temperature << "; checkpoints in " << cfg.out << "\n";
    return 0;
}

int cmd_sample(const std::string& checkpoint, double lambda, double q, int count,
               std::uint64_t seed, int threads, const std::string& out) {
    ensure_out_dir(out);
    const FlowParameters params = FlowParameters::load(checkpoint);
    Rng rng = Rng(seed).stream("sample");
    const auto samples = posterior_samples(params, lambda, q, count, rng, threads);
    const Condition cond{lambda, q, params.temperature};
    write_samples_jsonl(out + "/samples.jsonl", samples, cond);
    std::cout << "wrote " << out << "/samples.jsonl (" << samples.size() << " samples at T="
              << params.temperature << ")\n";
    return 0;
}

int cmd_path(const std::string& checkpoint, double q, double lo, double hi, int points,
             int map_samples, std::uint64_t seed, int threads, const std::string& out) {
    ensure_out_dir(out);
    const FlowParameters params = FlowParameters::load(checkpoint);
    Rng rng = Rng(seed).stream("path");
    const SolutionPath sp =
        solution_path(params, log_spaced(lo, hi, points), q, map_samples, rng, threads);
    write_path_csv(out + "/path.csv", sp);
    std::cout << "lambda convention: shrinkage parameter of the Bayesian target; the "
                 "penalized-likelihood objective log det - Tr(S/n omega) - lambda_f "
                 "sum_{i<j}|omega_ij| matches at lambda_f = lambda / (n/2)\n";
    std::cout << "wrote " << out << "/path.csv (" << points << " grid points, T="
              << params.temperature << ")\n";
    return 0;
}

int cmd_select(const std::string& checkpoint, const RunConfig& cfg, double q, double lo,
               double hi, int points, int samples) {
    ensure_out_dir(cfg.out);
    const FlowParameters params = FlowParameters::load(checkpoint);
    const Dataset ds = load_dataset(cfg);
    const GGMTarget target = GGMTarget::from_dataset(ds);
    Rng rng = Rng(cfg.seed).stream("select");
    const EvidenceCurve curve =
        select_lambda(params, target, log_spaced(lo, hi, points), q, samples, rng);
    write_evidence_csv(cfg.out + "/evidence.csv", curve, q);
    std::cout << "lambda* = " << curve.best_lambda << " (argmax of the approximate marginal "
              << "log-likelihood over " << points << " grid points)\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint, double lambda, double q, int count, double gamma,
             const std::string& truth_path, std::uint64_t seed, int threads,
             const std::string& out) {
    ensure_out_dir(out);
    const FlowParameters params = FlowParameters::load(checkpoint);
    Rng rng = Rng(seed).stream("eval");
    const auto samples = posterior_samples(params, lambda, q, count, rng, threads);
    CredibleSummary summary = credible_intervals(samples, gamma);
    summary.condition = Condition{lambda, q, params.temperature};
    write_intervals_csv(out + "/intervals.csv", summary);
    const auto edges = edge_set(summary);
    write_edges_csv(out + "/edges.csv", edges,
                    params.config.block_mode() ? params.config.block_s : 0);
    std::cout << edges.size() << " edges at " << gamma * 100 << "% credibility\n";
    if (!truth_path.empty()) {
        const auto truth = load_truth_edges(truth_path);
        std::vector<std::pair<int, int>> predicted;
        for (const Edge& e : edges) {
            predicted.emplace_back(e.i, e.j);
        }
        std::cout << "F1 = " << f1_score(predicted, truth) << " against " << truth.size()
                  << " true edges\n";
    }
    return 0;
}

int cmd_oracle_check(const std::string& checkpoint, const RunConfig& cfg, double lambda,
                     double q, double gamma, int count, int points) {
    ensure_out_dir(cfg.out);
    const FlowParameters params = FlowParameters::load(checkpoint);
    const Dataset ds = load_dataset(cfg);
    if (ds.d > 2) {
        throw ConfigError("oracle-check supports d <= 2 datasets");
    }
    const GGMTarget target = GGMTarget::from_dataset(ds);
    const Condition cond{lambda, q, 1.0};

    Rng rng = Rng(cfg.seed).stream("oracle");
    const auto samples = posterior_samples(params, lambda, q, count, rng, cfg.threads);
    const CredibleSummary summary = credible_intervals(samples, gamma);
    const GridOracle oracle = grid_oracle_posterior(target, cond, points);

    const double lo_p = 0.5 * (1.0 - gamma);
    const double hi_p = 0.5 * (1.0 + gamma);
    // Oracle entry order is (1,1), (2,2), (1,2); the summary stores the lower
    // triangle (1,1), (2,1), (2,2).
    const std::vector<int> map_to_summary = ds.d == 1 ? std::vector<int>{0}
                                                      : std::vector<int>{0, 2, 1};
    std::ofstream csv(cfg.out + "/oracle_check.csv");
    if (!csv) {
        throw IoError("cannot write " + cfg.out + "/oracle_check.csv");
    }
    csv.precision(10);
    csv << "entry,flow_lower,oracle_lower,flow_upper,oracle_upper\n";
    double worst = 0.0;
    std::cout << "entry  flow[lo, hi]  oracle[lo, hi]  rel-discrepancy\n";
    for (int e = 0; e < oracle.entry_count(); ++e) {
        const int si = map_to_summary[e];
        const double flow_lo = summary.lower(si);
        const double flow_hi = summary.upper(si);
        const double or_lo = oracle.quantile(e, lo_p);
        const double or_hi = oracle.quantile(e, hi_p);
        const double rel =
            std::max(std::abs(flow_lo - or_lo) / std::max(1e-12, std::abs(or_lo)),
                     std::abs(flow_hi - or_hi) / std::max(1e-12, std::abs(or_hi)));
        worst = std::max(worst, rel);
        const char* name = e == 0 ? "w11" : (e == 1 ? "w22" : "w12");
        std::cout << name << "  [" << flow_lo << ", " << flow_hi << "]  [" << or_lo << ", "
                  << or_hi << "]  " << rel << "\n";
        csv << name << ',' << flow_lo << ',' << or_lo << ',' << flow_hi << ',' << or_hi
            << '\n';
    }
    std::cout << "max relative discrepancy: " << worst << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"conditional matrix flow for sparse precision-matrix inference"};
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config", config_path, "JSON run configuration");
    auto* seed_opt = app.add_option("--seed", "root seed (overrides config)");
    auto* threads_opt = app.add_option("--threads", "worker cap (overrides config)");
    auto* out_opt = app.add_option("--out", "output directory (overrides config)");

    auto* gen = app.add_subcommand("generate", "synthetic dataset and ground truth");
    int gen_dim = 15;
    double gen_alpha = 0.9;
    int gen_samples = 15;
    gen->add_option("--dim", gen_dim, "matrix dimension");
    gen->add_option("--alpha", gen_alpha, "sparsity level in [0, 1)");
    gen->add_option("--samples", gen_samples, "observation count");

    auto* tr = app.add_subcommand("train", "anneal the conditional flow on a dataset");

    auto* sa = app.add_subcommand("sample", "draw posterior samples from a checkpoint");
    std::string sa_ckpt;
    double sa_lambda = 1.0, sa_q = 1.0;
    int sa_count = 1000;
    sa->add_option("--checkpoint", sa_ckpt)->required();
    sa->add_option("--lambda", sa_lambda);
    sa->add_option("--q", sa_q);
    sa->add_option("--count", sa_count);

    auto* pa = app.add_subcommand("path", "solution path over a lambda grid");
    std::string pa_ckpt;
    double pa_q = 1.0, pa_lo = 0.1, pa_hi = 10.0;
    int pa_points = 20, pa_map = 256;
    pa->add_option("--checkpoint", pa_ckpt)->required();
    pa->add_option("--q", pa_q);
    pa->add_option("--lambda-min", pa_lo);
    pa->add_option("--lambda-max", pa_hi);
    pa->add_option("--points", pa_points);
    pa->add_option("--map-samples", pa_map);

    auto* se = app.add_subcommand("select", "marginal-likelihood model selection");
    std::string se_ckpt;
    double se_q = 1.0, se_lo = 0.1, se_hi = 10.0;
    int se_points = 20, se_samples = 2048;
    se->add_option("--checkpoint", se_ckpt)->required();
    se->add_option("--q", se_q);
    se->add_option("--lambda-min", se_lo);
    se->add_option("--lambda-max", se_hi);
    se->add_option("--points", se_points);
    se->add_option("--samples", se_samples);

    auto* ev = app.add_subcommand("eval", "credible intervals, edges, optional F1");
    std::string ev_ckpt, ev_truth;
    double ev_lambda = 1.0, ev_q = 1.0, ev_gamma = 0.9;
    int ev_count = 1000;
    ev->add_option("--checkpoint", ev_ckpt)->required();
    ev->add_option("--lambda", ev_lambda);
    ev->add_option("--q", ev_q);
    ev->add_option("--count", ev_count);
    ev->add_option("--gamma", ev_gamma, "credible level in (0, 1)");
    ev->add_option("--truth", ev_truth, "true edge list CSV for F1");

    auto* oc = app.add_subcommand("oracle-check", "flow quantiles against the grid oracle");
    std::string oc_ckpt;
    double oc_lambda = 1.0, oc_q = 1.0, oc_gamma = 0.9;
    int oc_count = 20000, oc_points = 161;
    oc->add_option("--checkpoint", oc_ckpt)->required();
    oc->add_option("--lambda", oc_lambda);
    oc->add_option("--q", oc_q);
    oc->add_option("--gamma", oc_gamma);
    oc->add_option("--count", oc_count);
    oc->add_option("--points", oc_points);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) {
            cfg = load_config(config_path);
        }
        if (seed_opt->count() > 0) cfg.seed = seed_opt->as<std::uint64_t>();
        if (threads_opt->count() > 0) cfg.threads = threads_opt->as<int>();
        if (out_opt->count() > 0) cfg.out = out_opt->as<std::string>();

        if (gen->parsed()) {
            return cmd_generate(gen_dim, gen_alpha, gen_samples, cfg.seed, cfg.out);
        }
        if (tr->parsed()) {
            if (config_path.empty()) {
                throw ConfigError("train requires --config");
            }
            return cmd_train(cfg);
        }
        if (sa->parsed()) {
            return cmd_sample(sa_ckpt, sa_lambda, sa_q, sa_count, cfg.seed, cfg.threads,
                              cfg.out);
        }
        if (pa->parsed()) {
            return cmd_path(pa_ckpt, pa_q, pa_lo, pa_hi, pa_points, pa_map, cfg.seed,
                            cfg.threads, cfg.out);
        }
        if (se->parsed()) {
            if (config_path.empty()) {
                throw ConfigError("select requires --config (for the dataset)");
            }
            return cmd_select(se_ckpt, cfg, se_q, se_lo, se_hi, se_points, se_samples);
        }
        if (ev->parsed()) {
            return cmd_eval(ev_ckpt, ev_lambda, ev_q, ev_count, ev_gamma, ev_truth, cfg.seed,
                            cfg.threads, cfg.out);
        }
        if (oc->parsed()) {
            if (config_path.empty()) {
                throw ConfigError("oracle-check requires --config (for the dataset)");
            }
            return cmd_oracle_check(oc_ckpt, cfg, oc_lambda, oc_q, oc_gamma, oc_count,
                                    oc_points);
        }
        throw ConfigError("no subcommand given");
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
