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

#include "cmflow/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "json.hpp"

#include "cmflow/log.hpp"

namespace cmflow {

std::vector<EntryId> enumerate_entries(int tri_n, int block_t) {
    std::vector<EntryId> entries;
    for (int i = 0; i < tri_n; ++i) {
        for (int j = 0; j <= i; ++j) {
            entries.push_back({i, j, false});
        }
    }
    for (int i = 0; i < (block_t > 0 ? tri_n : 0); ++i) {
        for (int j = 0; j < block_t; ++j) {
            entries.push_back({i, j, true});
        }
    }
    return entries;
}

namespace {

double entry_value(const PrecisionSample& sample, const EntryId& e) {
    return e.cross ? sample.omega12(e.i, e.j) : sample.omega(e.i, e.j);
}

double nearest_rank(const std::vector<double>& sorted, double p) {
    const int n = static_cast<int>(sorted.size());
    int rank = static_cast<int>(std::ceil(p * n));
    rank = std::clamp(rank, 1, n);
    return sorted[rank - 1];
}

}  // namespace

CredibleSummary credible_intervals(const std::vector<PrecisionSample>& samples, double gamma) {
    if (samples.size() < 2) {
        throw ConfigError("credible_intervals needs at least two samples");
    }
    if (!(gamma > 0.0) || !(gamma < 1.0)) {
        throw ConfigError("credible level gamma must lie in (0, 1)");
    }
    const int tri_n = static_cast<int>(samples.front().omega.rows());
    const int block_t = static_cast<int>(samples.front().omega12.cols());

    CredibleSummary summary;
    summary.entries = enumerate_entries(tri_n, block_t);
    summary.count = static_cast<int>(samples.size());
    summary.gamma = gamma;
    const int ne = static_cast<int>(summary.entries.size());
    summary.lower.resize(ne);
    summary.upper.resize(ne);
    summary.median.resize(ne);
    summary.mean.resize(ne);

    std::vector<double> values(samples.size());
    for (int e = 0; e < ne; ++e) {
        for (std::size_t s = 0; s < samples.size(); ++s) {
            values[s] = entry_value(samples[s], summary.entries[e]);
        }
        std::sort(values.begin(), values.end());
        summary.lower(e) = nearest_rank(values, 0.5 * (1.0 - gamma));
        summary.upper(e) = nearest_rank(values, 0.5 * (1.0 + gamma));
        summary.median(e) = nearest_rank(values, 0.5);
        summary.mean(e) = std::accumulate(values.begin(), values.end(), 0.0) / values.size();
    }
    return summary;
}

std::vector<Edge> edge_set(const CredibleSummary& summary) {
    std::vector<Edge> edges;
    int tri_n = 0;
    for (const EntryId& e : summary.entries) {
        if (!e.cross) {
            tri_n = std::max(tri_n, e.i + 1);
        }
    }
    for (std::size_t k = 0; k < summary.entries.size(); ++k) {
        const EntryId& e = summary.entries[k];
        if (!e.cross && e.i == e.j) {
            continue;  // diagonal entries are not edges
        }
        const double lo = summary.lower(static_cast<int>(k));
        const double hi = summary.upper(static_cast<int>(k));
        if (lo > 0.0 || hi < 0.0) {
            Edge edge;
            if (e.cross) {
                edge.i = e.i;
                edge.j = tri_n + e.j;
            } else {
                edge.i = e.j;  // stored as lower triangle; report i < j
                edge.j = e.i;
            }
            edge.sign = lo > 0.0 ? 1 : -1;
            edge.lower = lo;
            edge.upper = hi;
            edges.push_back(edge);
        }
    }
    return edges;
}

double f1_score(const std::vector<std::pair<int, int>>& predicted,
                const std::vector<std::pair<int, int>>& truth) {
    auto normalize = [](const std::vector<std::pair<int, int>>& pairs) {
        std::set<std::pair<int, int>> out;
        for (const auto& [a, b] : pairs) {
            out.insert({std::min(a, b), std::max(a, b)});
        }
        return out;
    };
    const auto p = normalize(predicted);
    const auto t = normalize(truth);
    if (p.empty() && t.empty()) {
        return 1.0;
    }
    if (p.empty() || t.empty()) {
        return 0.0;
    }
    int hits = 0;
    for (const auto& e : p) {
        hits += t.count(e) ? 1 : 0;
    }
    if (hits == 0) {
        return 0.0;
    }
    const double precision = static_cast<double>(hits) / p.size();
    const double recall = static_cast<double>(hits) / t.size();
    return 2.0 * precision * recall / (precision + recall);
}

std::vector<PrecisionSample> posterior_samples(const FlowParameters& params, double lambda,
                                               double q, int count, Rng& rng, int threads) {
    return generate_samples(params, lambda, q, count, rng, threads);
}

SolutionPath solution_path(const FlowParameters& map_params, const std::vector<double>& lambdas,
                           double q, int n_map, Rng& rng, int threads) {
    SolutionPath sp;
    sp.lambdas = lambdas;
    sp.q = q;
    sp.temperature = map_params.temperature;
    sp.entries = enumerate_entries(map_params.config.tri_n(),
                                   map_params.config.block_mode() ? map_params.config.block_t : 0);
    sp.estimates.resize(static_cast<int>(lambdas.size()), static_cast<int>(sp.entries.size()));
    std::vector<double> values(n_map);
    for (std::size_t g = 0; g < lambdas.size(); ++g) {
        const auto samples = generate_samples(map_params, lambdas[g], q, n_map, rng, threads);
        for (std::size_t e = 0; e < sp.entries.size(); ++e) {
            for (int s = 0; s < n_map; ++s) {
                values[s] = entry_value(samples[s], sp.entries[e]);
            }
            std::nth_element(values.begin(), values.begin() + n_map / 2, values.end());
            double med = values[n_map / 2];
            if (n_map % 2 == 0) {
                const double lo = *std::max_element(values.begin(), values.begin() + n_map / 2);
                med = 0.5 * (med + lo);
            }
            sp.estimates(static_cast<int>(g), static_cast<int>(e)) = med;
        }
    }
    return sp;
}

double path_mse(const SolutionPath& a, const SolutionPath& b) {
    if (a.lambdas.size() != b.lambdas.size() || a.entries.size() != b.entries.size()) {
        throw ConfigError("path_mse: mismatched grids");
    }
    for (std::size_t g = 0; g < a.lambdas.size(); ++g) {
        if (std::abs(a.lambdas[g] - b.lambdas[g]) >
            1e-9 * std::max(1.0, std::abs(a.lambdas[g]))) {
            throw ConfigError("path_mse: lambda grids differ");
        }
    }
    return (a.estimates - b.estimates).array().square().mean();
}

std::vector<double> log_spaced(double lo, double hi, int points) {
    if (!(lo > 0.0) || !(hi >= lo) || points < 1) {
        throw ConfigError("log_spaced requires 0 < lo <= hi and points >= 1");
    }
    std::vector<double> grid(points);
    if (points == 1) {
        grid[0] = lo;
        return grid;
    }
    const double llo = std::log(lo);
    const double lhi = std::log(hi);
    for (int i = 0; i < points; ++i) {
        grid[i] = std::exp(llo + (lhi - llo) * i / (points - 1));
    }
    return grid;
}

// --- reference solver ---------------------------------------------------------

namespace {

double glasso_objective(const Mat& omega, const Mat& cov, double lambda, double* logdet_out) {
    const Eigen::LLT<Mat> llt(omega);
    if (llt.info() != Eigen::Success) {
        return -std::numeric_limits<double>::infinity();
    }
    double logdet = 0.0;
    const Mat l = llt.matrixL();
    for (Eigen::Index i = 0; i < l.rows(); ++i) {
        logdet += std::log(l(i, i));
    }
    logdet *= 2.0;
    if (logdet_out != nullptr) {
        *logdet_out = logdet;
    }
    double l1 = 0.0;
    for (Eigen::Index i = 0; i < omega.rows(); ++i) {
        for (Eigen::Index j = i + 1; j < omega.cols(); ++j) {
            l1 += std::abs(omega(i, j));
        }
    }
    return logdet - (cov.array() * omega.array()).sum() - lambda * l1;
}

Mat soft_threshold_offdiag(const Mat& m, double t) {
    Mat out = m;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (i == j) continue;
            const double v = m(i, j);
            out(i, j) = v > t ? v - t : (v < -t ? v + t : 0.0);
        }
    }
    return out;
}

// The penalty counts each unordered pair once, so in the symmetric full-matrix
// coordinates every off-diagonal entry carries lambda/2.
double kkt_residual(const Mat& omega, const Mat& grad_smooth, double lambda) {
    const double half = 0.5 * lambda;
    double r = 0.0;
    for (Eigen::Index i = 0; i < omega.rows(); ++i) {
        for (Eigen::Index j = 0; j < omega.cols(); ++j) {
            const double g = grad_smooth(i, j);
            double v;
            if (i == j) {
                v = std::abs(g);
            } else if (omega(i, j) != 0.0) {
                v = std::abs(g - half * (omega(i, j) > 0.0 ? 1.0 : -1.0));
            } else {
                v = std::max(0.0, std::abs(g) - half);
            }
            r = std::max(r, v);
        }
    }
    return r;
}

}  // namespace

GlassoResult glasso_fit(const Mat& cov, double lambda, const Mat& omega0,
                        const GlassoOptions& options) {
    if (lambda < 0.0) {
        throw ConfigError("glasso_fit: lambda must be non-negative");
    }
    const int d = static_cast<int>(cov.rows());
    Mat omega = omega0;
    {
        // Fall back to a safe diagonal start if the warm start is unusable.
        Eigen::LLT<Mat> llt(omega);
        if (omega.rows() != d || llt.info() != Eigen::Success) {
            omega = Mat::Zero(d, d);
            for (int i = 0; i < d; ++i) {
                omega(i, i) = 1.0 / std::max(cov(i, i) + lambda, 1e-8);
            }
        }
    }

    double obj = glasso_objective(omega, cov, lambda, nullptr);
    GlassoResult result;
    for (int it = 0; it < options.max_iter; ++it) {
        const Eigen::LLT<Mat> llt(omega);
        const Mat inv = llt.solve(Mat::Identity(d, d));
        const Mat grad = inv - cov;
        const double kkt = kkt_residual(omega, grad, lambda);
        result.iterations = it;
        // The subgradient residual is the stopping rule; objective deltas
        // scale like its square and flatten out long before the iterate is
        // sharp.
        if (kkt <= options.kkt_tol) {
            result.omega = omega;
            result.objective = obj;
            result.kkt_residual = kkt;
            return result;
        }

        // Majorization-safe step: the smooth part has curvature bounded by
        // lambda_max(omega^-1)^2, so 1/L needs no objective line search.
        const Eigen::SelfAdjointEigenSolver<Mat> es(omega);
        const double eig_min = es.eigenvalues().minCoeff();
        double step = 0.95 * eig_min * eig_min;
        Mat cand;
        double cand_obj = -std::numeric_limits<double>::infinity();
        while (true) {
            cand = soft_threshold_offdiag(omega + step * grad, 0.5 * step * lambda);
            cand = ((cand + cand.transpose()) * 0.5).eval();
            cand_obj = glasso_objective(cand, cov, lambda, nullptr);
            if (std::isfinite(cand_obj)) {
                break;
            }
            step *= 0.5;  // left the positive-definite cone; shrink
            if (step < 1e-16) {
                throw NumericError("glasso_fit: step collapsed at the cone boundary");
            }
        }
        omega = cand;
        obj = cand_obj;
    }
    // The iteration cap was hit; accept only if the subgradient condition holds.
    {
        const Eigen::LLT<Mat> llt(omega);
        const Mat inv = llt.solve(Mat::Identity(d, d));
        const double kkt = kkt_residual(omega, inv - cov, lambda);
        if (kkt <= 1e-6) {
            result.omega = omega;
            result.objective = obj;
            result.kkt_residual = kkt;
            return result;
        }
    }
    throw NumericError("glasso_fit did not converge within the iteration cap");
}

SolutionPath reference_glasso_path(const Mat& S, int n, const std::vector<double>& lambdas,
                                   const GlassoOptions& options) {
    const int d = static_cast<int>(S.rows());
    const Mat cov = S / static_cast<double>(n);

    // Solve from the largest lambda down, warm-starting each point.
    std::vector<std::size_t> order(lambdas.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return lambdas[a] > lambdas[b]; });

    SolutionPath sp;
    sp.lambdas = lambdas;
    sp.q = 1.0;
    sp.temperature = 0.0;
    sp.entries = enumerate_entries(d, 0);
    sp.estimates.resize(static_cast<int>(lambdas.size()), static_cast<int>(sp.entries.size()));

    Mat warm;
    for (const std::size_t g : order) {
        const GlassoResult fit = glasso_fit(cov, lambdas[g], warm, options);
        warm = fit.omega;
        for (std::size_t e = 0; e < sp.entries.size(); ++e) {
            sp.estimates(static_cast<int>(g), static_cast<int>(e)) =
                fit.omega(sp.entries[e].i, sp.entries[e].j);
        }
    }
    return sp;
}

double glasso_cv_lambda(const Mat& X, const std::vector<double>& lambdas, int folds, Rng& rng) {
    const int n = static_cast<int>(X.rows());
    const int d = static_cast<int>(X.cols());
    if (folds < 2 || folds > n) {
        throw ConfigError("glasso_cv_lambda: fold count out of range");
    }
    std::vector<int> index(n);
    std::iota(index.begin(), index.end(), 0);
    for (int i = n - 1; i > 0; --i) {
        std::swap(index[i], index[rng.below(static_cast<std::uint64_t>(i + 1))]);
    }

    std::vector<double> score(lambdas.size(), 0.0);
    for (int f = 0; f < folds; ++f) {
        const int begin = f * n / folds;
        const int end = (f + 1) * n / folds;
        const int n_val = end - begin;
        const int n_tr = n - n_val;
        if (n_val < 1 || n_tr < 2) {
            continue;
        }
        Mat x_tr(n_tr, d), x_val(n_val, d);
        int a = 0, b = 0;
        for (int i = 0; i < n; ++i) {
            if (i >= begin && i < end) {
                x_val.row(b++) = X.row(index[i]);
            } else {
                x_tr.row(a++) = X.row(index[i]);
            }
        }
        center_columns(x_tr);
        center_columns(x_val);
        const Mat cov_tr = scatter_matrix(x_tr) / static_cast<double>(n_tr);
        const Mat cov_val = scatter_matrix(x_val) / static_cast<double>(n_val);

        Mat warm;
        std::vector<std::size_t> order(lambdas.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(),
                  [&](std::size_t u, std::size_t v) { return lambdas[u] > lambdas[v]; });
        for (const std::size_t g : order) {
            const GlassoResult fit = glasso_fit(cov_tr, lambdas[g], warm);
            warm = fit.omega;
            double logdet = 0.0;
            glasso_objective(fit.omega, cov_val, 0.0, &logdet);
            score[g] += logdet - (cov_val.array() * fit.omega.array()).sum();
        }
    }
    std::size_t best = 0;
    for (std::size_t g = 1; g < lambdas.size(); ++g) {
        if (score[g] > score[best]) {
            best = g;
        }
    }
    return lambdas[best];
}

EvidenceCurve select_lambda(const FlowParameters& bayes_params, const GGMTarget& target,
                            const std::vector<double>& lambdas, double q, int m_samples,
                            Rng& rng) {
    EvidenceCurve curve;
    curve.lambdas = lambdas;
    curve.loglik.resize(lambdas.size());
    // Common base draws across the grid keep the curve comparable point to point.
    const Mat z = rng.normal_matrix(bayes_params.config.flow_dim(), m_samples);
    std::size_t best = 0;
    for (std::size_t g = 0; g < lambdas.size(); ++g) {
        Condition cond{lambdas[g], q, 1.0};
        cond.validate();
        curve.loglik[g] =
            -kl_loss_on_draws(bayes_params, {cond}, target, z, m_samples, 1.0, false).value;
        if (curve.loglik[g] > curve.loglik[best]) {
            best = g;
        }
    }
    curve.best_lambda = lambdas[best];
    return curve;
}

// --- grid oracle ----------------------------------------------------------------

GridSpec default_grid_spec(const GGMTarget& target, const Condition& cond, double widen) {
    const int d = target.d;
    if (d > 2) {
        throw ConfigError("grid oracle supports d <= 2 only");
    }
    Mat reg = target.S / static_cast<double>(target.n);
    for (int i = 0; i < d; ++i) {
        reg(i, i) += (cond.lambda + 1e-6) / target.n;
    }
    const Mat center = reg.inverse();
    GridSpec spec;
    auto bounds_for = [&](int i, int j) {
        const double c = center(i, j);
        double hw = 8.0 * std::sqrt((center(i, i) * center(j, j) + center(i, j) * center(i, j)) /
                                    target.n) +
                    0.4 * std::abs(c) + 0.3;
        hw *= widen;
        double lo = c - hw;
        const double hi = c + hw;
        if (i == j) {
            lo = std::max(lo, 1e-8);
        }
        return std::make_pair(lo, hi);
    };
    spec.bounds.push_back(bounds_for(0, 0));
    if (d == 2) {
        spec.bounds.push_back(bounds_for(1, 1));
        spec.bounds.push_back(bounds_for(0, 1));
    }
    return spec;
}

GridOracle GridOracle::build(const GGMTarget& target, const Condition& cond,
                             const GridSpec& spec) {
    cond.validate();
    const int d = target.d;
    if (d < 1 || d > 2) {
        throw ConfigError("grid oracle supports d in {1, 2}");
    }
    const int expected = d == 1 ? 1 : 3;
    if (static_cast<int>(spec.bounds.size()) != expected || spec.points < 5) {
        throw ConfigError("grid spec does not match the target dimension");
    }

    GridOracle oracle;
    const int np = spec.points;
    std::vector<Eigen::VectorXd> grids(expected);
    std::vector<double> h(expected);
    for (int e = 0; e < expected; ++e) {
        const auto [lo, hi] = spec.bounds[e];
        if (!(hi > lo)) {
            throw ConfigError("grid bounds are empty");
        }
        grids[e] = Eigen::VectorXd::LinSpaced(np, lo, hi);
        h[e] = (hi - lo) / (np - 1);
    }
    auto weight = [np](int i) { return (i == 0 || i == np - 1) ? 0.5 : 1.0; };

    std::vector<Eigen::VectorXd> marginals(expected, Eigen::VectorXd::Zero(np));
    double total = 0.0;
    double boundary = 0.0;

    if (d == 1) {
        // First pass: stabilizing maximum.
        double peak = -std::numeric_limits<double>::infinity();
        Eigen::VectorXd logp(np);
        for (int i = 0; i < np; ++i) {
            Mat omega(1, 1);
            omega(0, 0) = grids[0](i);
            logp(i) = unnorm_log_posterior(omega, target, cond);
            peak = std::max(peak, logp(i));
        }
        for (int i = 0; i < np; ++i) {
            const double f = std::exp(logp(i) - peak);
            marginals[0](i) = f;
            const double w = weight(i) * h[0] * f;
            total += w;
            if (i == 0 || i == np - 1) {
                boundary += w;
            }
        }
    } else {
        double peak = -std::numeric_limits<double>::infinity();
        auto log_density = [&](int i, int j, int k) {
            const double w11 = grids[0](i);
            const double w22 = grids[1](j);
            const double w12 = grids[2](k);
            if (!(w11 > 0.0) || !(w22 > 0.0) || !(w11 * w22 - w12 * w12 > 0.0)) {
                return -std::numeric_limits<double>::infinity();
            }
            Mat omega(2, 2);
            omega << w11, w12, w12, w22;
            return unnorm_log_posterior(omega, target, cond);
        };
        for (int i = 0; i < np; ++i) {
            for (int j = 0; j < np; ++j) {
                for (int k = 0; k < np; ++k) {
                    peak = std::max(peak, log_density(i, j, k));
                }
            }
        }
        if (!std::isfinite(peak)) {
            throw NumericError("grid oracle: no SPD points inside the box");
        }
        for (int i = 0; i < np; ++i) {
            for (int j = 0; j < np; ++j) {
                for (int k = 0; k < np; ++k) {
                    const double lp = log_density(i, j, k);
                    if (!std::isfinite(lp)) {
                        continue;
                    }
                    const double f = std::exp(lp - peak);
                    const double w3 = weight(i) * weight(j) * weight(k) * h[0] * h[1] * h[2];
                    marginals[0](i) += weight(j) * weight(k) * h[1] * h[2] * f;
                    marginals[1](j) += weight(i) * weight(k) * h[0] * h[2] * f;
                    marginals[2](k) += weight(i) * weight(j) * h[0] * h[1] * f;
                    total += w3 * f;
                    if (i == 0 || i == np - 1 || j == 0 || j == np - 1 || k == 0 ||
                        k == np - 1) {
                        boundary += w3 * f;
                    }
                }
            }
        }
    }

    if (!(total > 0.0)) {
        throw NumericError("grid oracle: zero total mass");
    }
    oracle.boundary_fraction_ = boundary / total;
    if (oracle.boundary_fraction_ > 1e-4) {
        throw NumericError("grid oracle: boundary mass exceeds 1e-4, enlarge the grid");
    }
    for (int e = 0; e < expected; ++e) {
        marginals[e] /= total;
    }
    oracle.grids_ = std::move(grids);
    oracle.marginals_ = std::move(marginals);
    return oracle;
}

double GridOracle::normalized_mass() const {
    // Trapezoid integral of the first normalized marginal.
    const Eigen::VectorXd& g = grids_[0];
    const Eigen::VectorXd& m = marginals_[0];
    double mass = 0.0;
    for (int i = 0; i + 1 < g.size(); ++i) {
        mass += 0.5 * (m(i) + m(i + 1)) * (g(i + 1) - g(i));
    }
    return mass;
}

double GridOracle::quantile(int entry, double p) const {
    if (entry < 0 || entry >= entry_count()) {
        throw ConfigError("grid oracle: entry index out of range");
    }
    if (!(p >= 0.0) || !(p <= 1.0)) {
        throw ConfigError("grid oracle: quantile level out of range");
    }
    const Eigen::VectorXd& g = grids_[entry];
    const Eigen::VectorXd& m = marginals_[entry];
    const int np = static_cast<int>(g.size());
    Eigen::VectorXd cdf(np);
    cdf(0) = 0.0;
    for (int i = 1; i < np; ++i) {
        cdf(i) = cdf(i - 1) + 0.5 * (m(i) + m(i - 1)) * (g(i) - g(i - 1));
    }
    const double target = p * cdf(np - 1);
    for (int i = 1; i < np; ++i) {
        if (cdf(i) >= target) {
            const double span = cdf(i) - cdf(i - 1);
            const double frac = span > 0.0 ? (target - cdf(i - 1)) / span : 0.0;
            return g(i - 1) + frac * (g(i) - g(i - 1));
        }
    }
    return g(np - 1);
}

GridOracle grid_oracle_posterior(const GGMTarget& target, const Condition& cond, int points,
                                 int max_enlarge) {
    double widen = 1.0;
    for (int attempt = 0;; ++attempt) {
        GridSpec spec = default_grid_spec(target, cond, widen);
        spec.points = points;
        try {
            return GridOracle::build(target, cond, spec);
        } catch (const NumericError&) {
            if (attempt >= max_enlarge) {
                throw;
            }
            widen *= 1.6;
            logging::info("grid oracle: widening the box by ", widen);
        }
    }
}

// --- result files ----------------------------------------------------------------

namespace {

std::string entry_name(const EntryId& e) {
    if (e.cross) {
        return "w12_" + std::to_string(e.i + 1) + "_" + std::to_string(e.j + 1);
    }
    return "w_" + std::to_string(e.i + 1) + "_" + std::to_string(e.j + 1);
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path);
    }
    out.precision(12);
    return out;
}

}  // namespace

void write_samples_jsonl(const std::string& path, const std::vector<PrecisionSample>& samples,
                         const Condition& cond) {
    std::ofstream out = open_out(path);
    for (const PrecisionSample& s : samples) {
        nlohmann::json j;
        j["lambda"] = cond.lambda;
        j["q"] = cond.q;
        j["T"] = cond.temperature;
        j["log_q"] = s.log_q;
        std::vector<std::vector<double>> omega(s.omega.rows());
        for (Eigen::Index r = 0; r < s.omega.rows(); ++r) {
            omega[r].assign(s.omega.row(r).begin(), s.omega.row(r).end());
        }
        if (s.omega12.size() > 0) {
            j["omega11"] = omega;
            std::vector<std::vector<double>> omega12(s.omega12.rows());
            for (Eigen::Index r = 0; r < s.omega12.rows(); ++r) {
                omega12[r].assign(s.omega12.row(r).begin(), s.omega12.row(r).end());
            }
            j["omega12"] = omega12;
        } else {
            j["omega"] = omega;
        }
        j["z"] = std::vector<double>(s.z.begin(), s.z.end());
        out << j.dump() << '\n';
    }
}

void write_path_csv(const std::string& path, const SolutionPath& sp) {
    std::ofstream out = open_out(path);
    out << "lambda";
    for (const EntryId& e : sp.entries) {
        out << ',' << entry_name(e);
    }
    out << '\n';
    for (std::size_t g = 0; g < sp.lambdas.size(); ++g) {
        out << sp.lambdas[g];
        for (Eigen::Index e = 0; e < sp.estimates.cols(); ++e) {
            out << ',' << sp.estimates(static_cast<int>(g), e);
        }
        out << '\n';
    }
}

void write_intervals_csv(const std::string& path, const CredibleSummary& summary) {
    std::ofstream out = open_out(path);
    out << "entry,lower,median,upper,mean\n";
    for (std::size_t e = 0; e < summary.entries.size(); ++e) {
        const auto i = static_cast<int>(e);
        out << entry_name(summary.entries[e]) << ',' << summary.lower(i) << ','
            << summary.median(i) << ',' << summary.upper(i) << ',' << summary.mean(i) << '\n';
    }
}

void write_edges_csv(const std::string& path, const std::vector<Edge>& edges, int) {
    std::ofstream out = open_out(path);
    out << "i,j,sign,lower,upper\n";
    for (const Edge& e : edges) {
        out << e.i + 1 << ',' << e.j + 1 << ',' << (e.sign > 0 ? "positive" : "negative") << ','
            << e.lower << ',' << e.upper << '\n';
    }
}

void write_evidence_csv(const std::string& path, const EvidenceCurve& curve, double q) {
    std::ofstream out = open_out(path);
    out << "lambda,q,marginal_loglik\n";
    for (std::size_t g = 0; g < curve.lambdas.size(); ++g) {
        out << curve.lambdas[g] << ',' << q << ',' << curve.loglik[g] << '\n';
    }
}

}  // namespace cmflow
