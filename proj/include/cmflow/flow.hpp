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
#include <vector>

#include <Eigen/Dense>

#include "cmflow/rng.hpp"

namespace cmflow {

using Mat = Eigen::MatrixXd;

// Geometry and hyperparameters of the conditional matrix flow.
//
// Full mode maps R^{d(d+1)/2} to SPD d x d matrices. Block mode maps
// R^{s(s+1)/2 + s*t} to a pair (omega11 SPD s x s, omega12 s x t).
struct FlowConfig {
    int dim = 2;
    int block_s = 0;  // > 0 activates block mode
    int block_t = 0;

    int layers = 4;
    int sigmoids = 8;          // mixture size per dimension
    double linear_range = 3.0; // tail onset of the sum-of-sigmoids map
    int hidden = 64;           // conditioner hidden width (two hidden layers)

    double lambda_min = 0.1, lambda_max = 10.0;
    double q_min = 0.25, q_max = 2.0;

    bool block_mode() const { return block_s > 0; }
    int tri_n() const { return block_mode() ? block_s : dim; }
    int tri_len() const { return tri_n() * (tri_n() + 1) / 2; }
    int rest_len() const { return block_mode() ? block_s * block_t : 0; }
    int flow_dim() const { return tri_len() + rest_len(); }

    void validate() const;
};

// Trainable state: one flat vector holding all conditioner weights, plus the
// configuration needed to interpret it. `temperature` tags the annealing
// temperature a checkpoint was saved at.
struct FlowParameters {
    FlowConfig config;
    Eigen::VectorXd theta;
    double temperature = 1.0;

    static FlowParameters init(const FlowConfig& config, Rng& rng);

    void save(const std::string& path) const;
    static FlowParameters load(const std::string& path);
};

struct PrecisionSample {
    Mat omega;    // full mode: d x d; block mode: omega11 (s x s)
    Mat omega12;  // block mode only, s x t
    double log_q = 0.0;
    Eigen::VectorXd z;
};

// --- Fill-Triangular bookkeeping -------------------------------------------
// The vector order is row-major over the lower triangle including the
// diagonal: (0,0), (1,0), (1,1), (2,0), ...
int tri_index(int i, int j);
Mat fill_triangular(const Eigen::VectorXd& v, int n);
Eigen::VectorXd unravel_triangular(const Mat& l);
std::vector<int> diag_positions(int n);

// --- Scalar sum-of-sigmoids --------------------------------------------------
// phi(z) = a * sum_j v_j sigmoid(w_j z + b_j)
//        + softplus(z - s) - softplus(-z - s) + c
// with v on the simplex and w, a > 0; strictly increasing on R. The additive
// shift c is unconstrained: without it phi(0) >= 0 for every admissible
// parameter set, and compositions could never move a coordinate's median
// below zero.
struct SosParams {
    Eigen::VectorXd v;    // simplex weights
    Eigen::VectorXd w;    // positive slopes
    Eigen::VectorXd b;    // offsets
    double a = 1.0;       // positive amplitude
    double shift = 0.0;   // location
};

SosParams sos_from_raw(const Eigen::VectorXd& logits, const Eigen::VectorXd& raw_w,
                       const Eigen::VectorXd& offsets, double raw_a, double shift = 0.0);
double sos_value(double z, const SosParams& p, double linear_range);
double sos_derivative(double z, const SosParams& p, double linear_range);

// Numerical inverse by bracket widening plus a guarded Newton/bisection hybrid.
// Postcondition: |phi(z) - y| <= tol.
double sos_inverse(double y, const SosParams& p, double linear_range, double tol,
                   int max_iter = 200);

// --- Autoregressive conditioner layout --------------------------------------

struct LayerMasks {
    Mat input;   // hidden x D
    Mat hidden;  // hidden x hidden
    Mat output;  // out x hidden
};

// Masks for layer `layer` (orderings alternate between layers).
LayerMasks make_masks(const FlowConfig& config, int layer);

struct ParamBlock {
    int offset = 0, rows = 0, cols = 0;
    int size() const { return rows * cols; }
};

struct LayerLayout {
    ParamBlock w1z, w1c, b1, w2, b2, w3, wc, b3;
};

struct ParamLayout {
    std::vector<LayerLayout> layers;
    int total = 0;
};

ParamLayout make_layout(const FlowConfig& config);

// Condition embedding fed to the conditioner: (log lambda, q), each affinely
// rescaled to [-1, 1] over the configured training ranges. 2 x N.
Mat condition_embedding(const FlowConfig& config,
                        const std::vector<double>& lambdas,
                        const std::vector<double>& qs);

// --- Generation ---------------------------------------------------------------

// Pushes one base sample through the generator. z must have flow_dim entries.
PrecisionSample cmf_generate(const FlowParameters& params, const Eigen::VectorXd& z,
                             double lambda, double q);

// Draws `count` independent samples at condition (lambda, q). Deterministic
// for a given rng state and independent of `threads`.
std::vector<PrecisionSample> generate_samples(const FlowParameters& params, double lambda,
                                              double q, int count, Rng& rng,
                                              int threads = 1);

// Numerically inverts the generator on a sample; returns the base vector.
Eigen::VectorXd invert_generator(const FlowParameters& params, const PrecisionSample& sample,
                                 double lambda, double q, double tol);

// Base log-density of z (standard normal on flow_dim coordinates).
double base_log_density(const Eigen::VectorXd& z);

}  // namespace cmflow
