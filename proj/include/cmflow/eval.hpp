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

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cmflow/flow.hpp"
#include "cmflow/target.hpp"
#include "cmflow/train.hpp"

namespace cmflow {

// One tracked precision-matrix entry. Full mode enumerates the lower triangle
// including the diagonal (i >= j); block mode appends all omega12 entries
// with cross = true (i indexes the query block, j the remainder block).
struct EntryId {
    int i = 0;
    int j = 0;
    bool cross = false;
};

std::vector<EntryId> enumerate_entries(int tri_n, int block_t);

struct CredibleSummary {
    std::vector<EntryId> entries;
    Eigen::VectorXd lower, upper, median, mean;
    int count = 0;
    double gamma = 0.0;
    Condition condition;
};

// Nearest-rank quantiles at (1-gamma)/2 and (1+gamma)/2 per entry.
CredibleSummary credible_intervals(const std::vector<PrecisionSample>& samples, double gamma);

struct Edge {
    int i = 0;
    int j = 0;     // block mode: cross edges carry j >= s
    int sign = 0;  // +1 if the interval sits above zero, -1 below
    double lower = 0.0, upper = 0.0;
};

// Edges whose credible interval excludes zero. Diagonal entries never count.
std::vector<Edge> edge_set(const CredibleSummary& summary);

// Harmonic mean of precision and recall over unordered pairs. Both empty
// scores 1; exactly one empty scores 0.
double f1_score(const std::vector<std::pair<int, int>>& predicted,
                const std::vector<std::pair<int, int>>& truth);

struct SolutionPath {
    std::vector<double> lambdas;
    double q = 1.0;
    double temperature = 0.0;
    std::vector<EntryId> entries;
    Mat estimates;  // lambdas.size() x entries.size()
};

// Generator passes at one condition; deterministic per rng state.
std::vector<PrecisionSample> posterior_samples(const FlowParameters& params, double lambda,
                                               double q, int count, Rng& rng, int threads = 1);

// Component-wise median of n_map low-temperature samples per grid point.
SolutionPath solution_path(const FlowParameters& map_params, const std::vector<double>& lambdas,
                           double q, int n_map, Rng& rng, int threads = 1);

// Mean squared difference over all entries and grid points; grids must match.
double path_mse(const SolutionPath& a, const SolutionPath& b);

std::vector<double> log_spaced(double lo, double hi, int points);

// --- reference penalized-likelihood solver (q = 1 oracle) --------------------

struct GlassoOptions {
    int max_iter = 50000;
    double kkt_tol = 1e-10;
};

struct GlassoResult {
    Mat omega;
    int iterations = 0;
    double kkt_residual = 0.0;
    double objective = 0.0;
};

// Maximizes log det(omega) - Tr(cov omega) - lambda sum_{i<j} |omega_ij| by
// proximal gradient with off-diagonal soft-thresholding; positive definiteness
// is maintained by backtracking.
GlassoResult glasso_fit(const Mat& cov, double lambda, const Mat& omega0,
                        const GlassoOptions& options = {});

// Frequentist path over the given lambda grid (warm-started, ascending order
// internally). Lambdas follow the Tr(S omega / n) convention.
SolutionPath reference_glasso_path(const Mat& S, int n, const std::vector<double>& lambdas,
                                   const GlassoOptions& options = {});

// K-fold cross-validated lambda on the frequentist grid (held-out likelihood).
double glasso_cv_lambda(const Mat& X, const std::vector<double>& lambdas, int folds, Rng& rng);

// Mapping between the Bayesian shrinkage parameter and the frequentist
// objective above: lambda_freq = lambda_bayes / (n/2).
inline double lambda_bayes_to_freq(double lambda, int n) {
    return lambda / (0.5 * static_cast<double>(n));
}

// --- marginal-likelihood model selection -------------------------------------

struct EvidenceCurve {
    std::vector<double> lambdas;
    std::vector<double> loglik;
    double best_lambda = 0.0;  // argmax; ties resolved toward smaller lambda
};

EvidenceCurve select_lambda(const FlowParameters& bayes_params, const GGMTarget& target,
                            const std::vector<double>& lambdas, double q, int m_samples,
                            Rng& rng);

// --- grid quadrature oracle (d <= 2) ------------------------------------------

struct GridSpec {
    // Bounds per entry in the order (1,1), (2,2), (1,2); d = 1 uses one entry.
    std::vector<std::pair<double, double>> bounds;
    int points = 161;
};

GridSpec default_grid_spec(const GGMTarget& target, const Condition& cond, double widen = 1.0);

// Trapezoid-rule normalization of the unnormalized posterior on a rectangular
// grid restricted to SPD points. Errors out if more than 1e-4 of the mass sits
// on the outermost grid shell.
class GridOracle {
  public:
    static GridOracle build(const GGMTarget& target, const Condition& cond,
                            const GridSpec& spec);

    double quantile(int entry, double p) const;
    int entry_count() const { return static_cast<int>(grids_.size()); }
    double normalized_mass() const;
    double boundary_fraction() const { return boundary_fraction_; }

  private:
    std::vector<Eigen::VectorXd> grids_;
    std::vector<Eigen::VectorXd> marginals_;  // normalized marginal densities
    double boundary_fraction_ = 0.0;
};

// Convenience wrapper that widens the default box until the boundary check
// passes (at most max_enlarge retries).
GridOracle grid_oracle_posterior(const GGMTarget& target, const Condition& cond,
                                 int points = 161, int max_enlarge = 6);

// --- result files --------------------------------------------------------------

void write_samples_jsonl(const std::string& path, const std::vector<PrecisionSample>& samples,
                         const Condition& cond);
void write_path_csv(const std::string& path, const SolutionPath& sp);
void write_intervals_csv(const std::string& path, const CredibleSummary& summary);
void write_edges_csv(const std::string& path, const std::vector<Edge>& edges, int block_s = 0);
void write_evidence_csv(const std::string& path, const EvidenceCurve& curve, double q);

}  // namespace cmflow
