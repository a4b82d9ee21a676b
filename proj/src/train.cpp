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

#include "cmflow/train.hpp"

#include <cmath>
#include <sstream>

#include "cmflow/log.hpp"
#include "cmflow/tape.hpp"
#include "flow_program.hpp"

namespace cmflow {

void AnnealingSchedule::validate() const {
    if (!(tn > 0.0) || !(t0 >= tn)) {
        throw ConfigError("schedule requires t0 >= tn > 0");
    }
    if (steps < 1) {
        throw ConfigError("schedule needs at least one cooling step");
    }
}

double AnnealingSchedule::temperature(int i) const {
    if (i < 0 || i > steps) {
        throw ConfigError("cooling step index out of range");
    }
    return t0 * std::pow(ratio(), static_cast<double>(i) / steps);
}

void TrainConfig::validate() const {
    schedule.validate();
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (mc_samples < 1) throw ConfigError("mc_samples must be >= 1");
    if (conditions_per_batch < 1) throw ConfigError("conditions_per_batch must be >= 1");
    if (divergence_patience < 1) throw ConfigError("divergence_patience must be >= 1");
}

void adam_step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad, AdamState& state,
               const AdamSettings& settings) {
    if (theta.size() != grad.size()) {
        throw ConfigError("adam_step: shape mismatch");
    }
    if (!grad.allFinite()) {
        throw NumericError("adam_step: non-finite gradient");
    }
    if (state.step == 0) {
        state.m = Eigen::VectorXd::Zero(theta.size());
        state.v = Eigen::VectorXd::Zero(theta.size());
    }
    Eigen::VectorXd g = grad;
    if (settings.grad_clip > 0.0) {
        const double norm = g.norm();
        if (norm > settings.grad_clip) {
            g *= settings.grad_clip / norm;
        }
    }
    ++state.step;
    state.m = settings.beta1 * state.m + (1.0 - settings.beta1) * g;
    state.v = settings.beta2 * state.v + (1.0 - settings.beta2) * g.cwiseProduct(g);
    const double c1 = 1.0 - std::pow(settings.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(settings.beta2, static_cast<double>(state.step));
    theta.array() -= settings.learning_rate * (state.m.array() / c1) /
                     ((state.v.array() / c2).sqrt() + settings.epsilon);
}

std::vector<Condition> sample_conditions(const FlowConfig& config, int count, Rng& rng) {
    std::vector<Condition> conds(count);
    const double llo = std::log(config.lambda_min);
    const double lhi = std::log(config.lambda_max);
    for (int i = 0; i < count; ++i) {
        conds[i].lambda = std::exp(rng.uniform(llo, lhi));
        conds[i].q = rng.uniform(config.q_min, config.q_max);
    }
    return conds;
}

namespace {

using flowprog::TapeBackend;

struct TapeLoss {
    ad::Expr loss;
    std::vector<std::pair<ParamBlock, ad::Expr>> leaves;
    std::vector<ad::Expr> sample_losses;
};

TapeLoss build_loss(ad::Tape& tape, const FlowParameters& params,
                    const std::vector<Condition>& conditions, const GGMTarget& target,
                    const Mat& z, int m_samples, double temperature) {
    const FlowConfig& cfg = params.config;
    const int n_cond = static_cast<int>(conditions.size());
    const int n = n_cond * m_samples;
    if (z.rows() != cfg.flow_dim() || z.cols() != n) {
        throw ConfigError("kl_loss: base draw shape mismatch");
    }
    if ((cfg.block_mode() && !target.block_mode()) ||
        (!cfg.block_mode() && target.block_mode())) {
        throw ConfigError("kl_loss: flow and target disagree on block mode");
    }
    if (cfg.block_mode()) {
        if (cfg.block_s != target.block_s || cfg.block_t != target.block_t) {
            throw ConfigError("kl_loss: block sizes disagree with the target");
        }
    } else if (cfg.dim != target.d) {
        throw ConfigError("kl_loss: dimension disagrees with the target");
    }

    TapeLoss out;
    TapeBackend ops{&tape};
    auto flow = flowprog::bind_flow(ops, cfg, [&](const ParamBlock& b) {
        ad::Expr e = tape.input(Eigen::Map<const Mat>(params.theta.data() + b.offset,
                                                      b.rows, b.cols));
        out.leaves.emplace_back(b, e);
        return e;
    });

    std::vector<double> lambdas(n), qs(n);
    for (int c = 0; c < n_cond; ++c) {
        for (int j = 0; j < m_samples; ++j) {
            lambdas[c * m_samples + j] = conditions[c].lambda;
            qs[c * m_samples + j] = conditions[c].q;
        }
    }
    const ad::Expr zc = tape.constant(z);
    const ad::Expr cond = tape.constant(condition_embedding(cfg, lambdas, qs));
    auto run = flowprog::run_flow(flow, zc, cond);

    Mat logpbase(1, n);
    for (int i = 0; i < n; ++i) {
        logpbase(0, i) = base_log_density(z.col(i));
    }
    const ad::Expr logq_row = tape.sub(tape.constant(logpbase), run.logdet_total_row);

    const int term_count = gen_normal_term_count(target);
    ad::Expr s_const = cfg.block_mode() ? tape.constant(target.S11) : tape.constant(target.S);
    ad::Expr s12_const, s22_const;
    if (cfg.block_mode() && cfg.block_t > 0) {
        s12_const = tape.constant(target.S12);
        s22_const = tape.constant(target.S22);
    }
    Mat upper = Mat::Zero(cfg.tri_n(), cfg.tri_n());
    for (int i = 0; i < cfg.tri_n(); ++i) {
        for (int j = i + 1; j < cfg.tri_n(); ++j) {
            upper(i, j) = 1.0;
        }
    }
    const ad::Expr upper_mask = tape.constant(upper);
    const ad::Expr half_n = tape.scalar(0.5 * target.n);
    const ad::Expr half = tape.scalar(0.5);
    const ad::Expr inv_t = tape.scalar(1.0 / temperature);
    const ad::Expr inv_count = tape.scalar(1.0 / n);

    ad::Expr total;
    for (int i = 0; i < n; ++i) {
        const Condition& cnd = conditions[i / m_samples];
        const ad::Expr vcol = tape.slice_cols(run.head.v_pos, i, 1);
        auto mats = flowprog::sample_matrices(flow, vcol);
        const ad::Expr lam = tape.scalar(cnd.lambda);

        // (n/2) log det - 0.5 [trace terms] - lambda * penalty + constants
        ad::Expr logp =
            tape.mul(half_n, tape.slice_cols(run.head.logdet_omega_row, i, 1));
        ad::Expr trace_sum = tape.sum(tape.mul(mats.omega, s_const));
        ad::Expr penalty =
            tape.sum(tape.mul(tape.abs_pow(mats.omega, cnd.q), upper_mask));
        if (cfg.block_mode()) {
            trace_sum = tape.add(trace_sum, tape.mul(lam, tape.trace(mats.omega)));
            if (mats.has_cross) {
                trace_sum = tape.add(
                    trace_sum,
                    tape.mul(tape.scalar(2.0), tape.sum(tape.mul(mats.omega12, s12_const))));
                const ad::Expr m = tape.solve_lower(mats.l, mats.omega12);
                trace_sum = tape.add(
                    trace_sum, tape.sum(tape.mul(tape.matmul(m, s22_const), m)));
                trace_sum = tape.add(trace_sum, tape.mul(lam, tape.sum(tape.mul(m, m))));
                penalty = tape.add(penalty, tape.sum(tape.abs_pow(mats.omega12, cnd.q)));
            }
            logp = tape.sub(logp, tape.mul(half, trace_sum));
        } else {
            logp = tape.sub(logp, tape.mul(half, trace_sum));
            // Wishart-prior exponent -(lambda/2) Tr(omega).
            logp = tape.sub(logp, tape.mul(tape.mul(half, lam), tape.trace(mats.omega)));
        }
        logp = tape.sub(logp, tape.mul(lam, penalty));
        Condition cv = cnd;
        cv.temperature = temperature;
        cv.validate();
        logp = tape.add(logp, tape.scalar(term_count * gen_normal_log_const(cv)));

        const ad::Expr sample_loss =
            tape.sub(tape.slice_cols(logq_row, i, 1), tape.mul(inv_t, logp));
        out.sample_losses.push_back(sample_loss);
        total = (i == 0) ? sample_loss : tape.add(total, sample_loss);
    }
    out.loss = tape.mul(inv_count, total);
    return out;
}

void check_finite_samples(const ad::Tape& tape, const TapeLoss& loss,
                          const std::vector<Condition>& conditions, int m_samples) {
    for (std::size_t i = 0; i < loss.sample_losses.size(); ++i) {
        const double v = tape.scalar_value(loss.sample_losses[i]);
        if (!std::isfinite(v)) {
            const Condition& c = conditions[i / m_samples];
            std::ostringstream os;
            os << "non-finite loss sample at lambda=" << c.lambda << ", q=" << c.q;
            throw NumericError(os.str());
        }
    }
}

}  // namespace

LossEval kl_loss_on_draws(const FlowParameters& params, const std::vector<Condition>& conditions,
                          const GGMTarget& target, const Mat& z, int m_samples,
                          double temperature, bool with_grad) {
    if (conditions.empty() || m_samples < 1) {
        throw ConfigError("kl_loss needs at least one condition and one sample");
    }
    if (!(temperature > 0.0)) {
        throw ConfigError("temperature must be positive");
    }
    ad::Tape tape;
    TapeLoss loss = build_loss(tape, params, conditions, target, z, m_samples, temperature);
    check_finite_samples(tape, loss, conditions, m_samples);

    LossEval out;
    out.value = tape.scalar_value(loss.loss);
    if (with_grad) {
        tape.backward(loss.loss);
        out.grad = Eigen::VectorXd::Zero(params.theta.size());
        for (const auto& [block, leaf] : loss.leaves) {
            const Mat& g = tape.adjoint(leaf);
            Eigen::Map<Mat>(out.grad.data() + block.offset, block.rows, block.cols) = g;
        }
    }
    return out;
}

double kl_loss(const FlowParameters& params, const std::vector<Condition>& conditions,
               const GGMTarget& target, int m_samples, double temperature, Rng& rng) {
    const int n = static_cast<int>(conditions.size()) * m_samples;
    const Mat z = rng.normal_matrix(params.config.flow_dim(), n);
    return kl_loss_on_draws(params, conditions, target, z, m_samples, temperature, false).value;
}

double estimate_marginal_loglik(const FlowParameters& params, const GGMTarget& target,
                                double lambda, double q, int m_samples, Rng& rng) {
    Condition cond{lambda, q, 1.0};
    cond.validate();
    return -kl_loss(params, {cond}, target, m_samples, 1.0, rng);
}

TrainResult train(const FlowConfig& flow_config, const TrainConfig& train_config,
                  const GGMTarget& target, const CheckpointHook& hook) {
    flow_config.validate();
    train_config.validate();

    Rng root(train_config.seed);
    Rng init_rng = root.stream("init");
    Rng cond_rng = root.stream("conditions");
    Rng base_rng = root.stream("base");

    FlowParameters params = FlowParameters::init(flow_config, init_rng);
    AdamState state;

    const AnnealingSchedule& sched = train_config.schedule;
    const int epochs_per_step = std::max(1, train_config.epochs / sched.steps);
    // Cooling segments run i = 1..steps so the final segment sits exactly at
    // tn; leftover epochs extend the last segment.
    auto step_of_epoch = [&](int epoch) {
        return std::min(sched.steps, 1 + epoch / epochs_per_step);
    };

    TrainResult result;
    result.trace.reserve(train_config.epochs);

    const int n_cols = train_config.conditions_per_batch * train_config.mc_samples;
    int over_threshold = 0;
    int bayes_step = -1;  // first cooling step with T <= 1
    for (int i = 1; i <= sched.steps; ++i) {
        if (sched.temperature(i) <= 1.0) {
            bayes_step = i;
            break;
        }
    }

    for (int epoch = 0; epoch < train_config.epochs; ++epoch) {
        const int step = step_of_epoch(epoch);
        const double temperature = sched.temperature(step);

        const std::vector<Condition> conds =
            sample_conditions(flow_config, train_config.conditions_per_batch, cond_rng);
        const Mat z = base_rng.normal_matrix(flow_config.flow_dim(), n_cols);
        LossEval eval = kl_loss_on_draws(params, conds, target, z, train_config.mc_samples,
                                         temperature, true);
        adam_step(params.theta, eval.grad, state, train_config.adam);

        result.trace.push_back({epoch, temperature, eval.value});
        if (eval.value > train_config.divergence_threshold) {
            if (++over_threshold >= train_config.divergence_patience) {
                std::ostringstream os;
                os << "training diverged: loss above " << train_config.divergence_threshold
                   << " for " << over_threshold << " consecutive epochs (epoch " << epoch
                   << ", T=" << temperature << ", loss=" << eval.value << ")";
                throw NumericError(os.str());
            }
        } else {
            over_threshold = 0;
        }

        const bool last_of_step =
            (epoch + 1 == train_config.epochs) || (step_of_epoch(epoch + 1) != step);
        if (last_of_step && step == bayes_step) {
            result.bayes_params = params;
            result.bayes_params->temperature = temperature;
        }
        if (train_config.checkpoint_every > 0 && hook &&
            (epoch + 1) % train_config.checkpoint_every == 0) {
            FlowParameters snap = params;
            snap.temperature = temperature;
            hook(epoch, snap);
        }
        if (epoch % 200 == 0) {
            logging::info("epoch ", epoch, " T=", temperature, " loss=", eval.value);
        }
    }

    result.final_params = params;
    result.final_params.temperature = sched.tn;
    return result;
}

}  // namespace cmflow
