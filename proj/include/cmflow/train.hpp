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

#include <functional>
#include <optional>
#include <vector>

#include "cmflow/flow.hpp"
#include "cmflow/target.hpp"

namespace cmflow {

// Geometric cooling: temperature(i) = t0 * (tn/t0)^(i/steps), i in [0, steps].
struct AnnealingSchedule {
    double t0 = 5.0;
    double tn = 0.01;
    int steps = 100;

    void validate() const;
    double ratio() const { return tn / t0; }
    double temperature(int i) const;
};

struct AdamSettings {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double grad_clip = 100.0;  // global norm; <= 0 disables
};

struct AdamState {
    Eigen::VectorXd m;
    Eigen::VectorXd v;
    long step = 0;
};

// One adaptive-moment update with bias correction. Gradients with non-finite
// entries are rejected. Clipping (if enabled) rescales the whole gradient.
void adam_step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad, AdamState& state,
               const AdamSettings& settings);

struct TrainConfig {
    int epochs = 3000;               // one optimizer step per epoch
    int mc_samples = 64;             // M per condition
    int conditions_per_batch = 8;
    AdamSettings adam;
    AnnealingSchedule schedule;
    std::uint64_t seed = 1;
    int checkpoint_every = 0;        // extra snapshots; 0 disables
    double divergence_threshold = 1e6;
    int divergence_patience = 50;

    void validate() const;
};

// Draws conditions for one batch: lambda log-uniform over the flow's range,
// q uniform over its range.
std::vector<Condition> sample_conditions(const FlowConfig& config, int count, Rng& rng);

struct LossEval {
    double value = 0.0;
    Eigen::VectorXd grad;
};

// Monte-Carlo reverse-KL objective on a fixed batch of base draws: mean over
// all columns of log q_theta(omega_i) - logp(omega_i) / T. z must have
// flow_dim rows and conditions.size() * m_samples columns (column c*M+j
// belongs to condition c).
LossEval kl_loss_on_draws(const FlowParameters& params, const std::vector<Condition>& conditions,
                          const GGMTarget& target, const Mat& z, int m_samples,
                          double temperature, bool with_grad);

// Same objective with fresh base draws from rng.
double kl_loss(const FlowParameters& params, const std::vector<Condition>& conditions,
               const GGMTarget& target, int m_samples, double temperature, Rng& rng);

// Negative converged loss at T = 1 approximates log p(S | lambda, q); the
// residual KL gap is not corrected.
double estimate_marginal_loglik(const FlowParameters& params, const GGMTarget& target,
                                double lambda, double q, int m_samples, Rng& rng);

struct TracePoint {
    int epoch = 0;
    double temperature = 0.0;
    double loss = 0.0;
};

struct TrainResult {
    FlowParameters final_params;              // saved at the last cooling step
    std::optional<FlowParameters> bayes_params;  // first step with T <= 1
    std::vector<TracePoint> trace;
};

using CheckpointHook = std::function<void(int epoch, const FlowParameters&)>;

// Anneals the reverse-KL objective over the cooling schedule. Deterministic
// for a given config and seed. Throws NumericError on divergence.
TrainResult train(const FlowConfig& flow_config, const TrainConfig& train_config,
                  const GGMTarget& target, const CheckpointHook& hook = nullptr);

}  // namespace cmflow
