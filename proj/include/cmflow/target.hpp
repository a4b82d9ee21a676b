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

#include <Eigen/Dense>

#include "cmflow/data.hpp"
#include "cmflow/errors.hpp"

namespace cmflow {

// Unnormalized Gaussian-graphical-model posterior. The Wishart likelihood
// drops every omega-independent constant (det(S) powers, multivariate gamma);
// the sparsity prior keeps all tractable (lambda, q)-dependent constants so a
// converged training loss approximates the negative marginal log-likelihood.
// The positive-definiteness truncation constant of the prior stays unaccounted.
struct GGMTarget {
    Mat S;
    int n = 0;
    int d = 0;

    // Block mode: posterior over (omega11, omega12) with s query variables.
    int block_s = 0;
    int block_t = 0;
    Mat S11, S12, S22;

    bool block_mode() const { return block_s > 0; }

    static GGMTarget full(Mat scatter, int n);
    static GGMTarget block(Mat scatter, int n, int s);
    static GGMTarget from_dataset(const Dataset& ds);
};

struct Condition {
    double lambda = 1.0;
    double q = 1.0;
    double temperature = 1.0;

    // Guards: q in [0.05, 5] (gamma-function overflow below), lambda in
    // (0, 1e3], temperature > 0. Out-of-range values are errors, not clamps.
    void validate() const;
};

// log of the generalized-Normal normalization: log(q lambda^{1/q} / (2 Gamma(1/q))).
double gen_normal_log_const(const Condition& cond);

// Number of generalized-Normal factors in the prior (off-diagonal count,
// plus all omega12 entries in block mode).
int gen_normal_term_count(const GGMTarget& target);

// (n/2) log det(omega) - 0.5 Tr(omega S), log det taken from the factor:
// 2 sum_i log L_ii.
double wishart_loglik(const Mat& chol_factor, const GGMTarget& target);

// Sparsity prior: sum_{i<j} [log const - lambda |omega_ij|^q] plus the
// Wishart-prior exponent -(lambda/2) Tr(omega).
double gen_normal_logprior(const Mat& omega, const Condition& cond);

// Full-mode posterior density (up to the SPD truncation constant).
double unnorm_log_posterior(const Mat& omega, const GGMTarget& target, const Condition& cond);

// Block-mode posterior over (omega11, omega12); omega11 passed by its factor
// so the inverse is applied through triangular solves.
double block_unnorm_log_posterior(const Mat& omega11_factor, const Mat& omega12,
                                  const GGMTarget& target, const Condition& cond);

inline double tempered_log_posterior(double logp, double temperature) {
    if (!(temperature > 0.0)) {
        throw ConfigError("temperature must be positive");
    }
    return logp / temperature;
}

}  // namespace cmflow
