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

#include "cmflow/target.hpp"

#include <cmath>

namespace cmflow {

GGMTarget GGMTarget::full(Mat scatter, int n) {
    if (scatter.rows() != scatter.cols()) {
        throw ConfigError("scatter matrix must be square");
    }
    if (!scatter.isApprox(scatter.transpose(), 1e-10)) {
        throw ConfigError("scatter matrix must be symmetric");
    }
    GGMTarget t;
    t.d = static_cast<int>(scatter.rows());
    t.S = std::move(scatter);
    t.n = n;
    return t;
}

GGMTarget GGMTarget::block(Mat scatter, int n, int s) {
    GGMTarget t = full(std::move(scatter), n);
    if (s < 1 || s > t.d) {
        throw ConfigError("block size s out of range");
    }
    t.block_s = s;
    t.block_t = t.d - s;
    t.S11 = t.S.topLeftCorner(s, t.block_s);
    t.S12 = t.S.topRightCorner(s, t.block_t);
    t.S22 = t.S.bottomRightCorner(t.block_t, t.block_t);
    return t;
}

GGMTarget GGMTarget::from_dataset(const Dataset& ds) {
    if (ds.block_mode()) {
        return block(ds.S, ds.n, ds.block_s);
    }
    return full(ds.S, ds.n);
}

void Condition::validate() const {
    if (!(lambda > 0.0) || lambda > 1e3) {
        throw ConfigError("lambda must lie in (0, 1e3]");
    }
    if (q < 0.05 || q > 5.0) {
        throw ConfigError("q must lie in [0.05, 5]");
    }
    if (!(temperature > 0.0)) {
        throw ConfigError("temperature must be positive");
    }
}

double gen_normal_log_const(const Condition& cond) {
    return std::log(cond.q) + std::log(cond.lambda) / cond.q - std::log(2.0) -
           std::lgamma(1.0 / cond.q);
}

int gen_normal_term_count(const GGMTarget& target) {
    if (target.block_mode()) {
        return target.block_s * (target.block_s - 1) / 2 + target.block_s * target.block_t;
    }
    return target.d * (target.d - 1) / 2;
}

double wishart_loglik(const Mat& chol_factor, const GGMTarget& target) {
    const int m = static_cast<int>(chol_factor.rows());
    double logdet = 0.0;
    for (int i = 0; i < m; ++i) {
        logdet += std::log(chol_factor(i, i));
    }
    logdet *= 2.0;
    const Mat omega = chol_factor * chol_factor.transpose();
    const double tr = (omega.array() * target.S.array()).sum();
    return 0.5 * target.n * logdet - 0.5 * tr;
}

double gen_normal_logprior(const Mat& omega, const Condition& cond) {
    cond.validate();
    const int d = static_cast<int>(omega.rows());
    const double log_const = gen_normal_log_const(cond);
    double value = 0.0;
    for (int i = 0; i < d; ++i) {
        for (int j = i + 1; j < d; ++j) {
            value += log_const - cond.lambda * std::pow(std::abs(omega(i, j)), cond.q);
        }
    }
    value -= 0.5 * cond.lambda * omega.trace();
    return value;
}

double unnorm_log_posterior(const Mat& omega, const GGMTarget& target, const Condition& cond) {
    cond.validate();
    const Eigen::LLT<Mat> llt(omega);
    if (llt.info() != Eigen::Success) {
        throw NumericError("unnorm_log_posterior: omega is not positive definite");
    }
    const Mat l = llt.matrixL();
    return wishart_loglik(l, target) + gen_normal_logprior(omega, cond);
}

double block_unnorm_log_posterior(const Mat& omega11_factor, const Mat& omega12,
                                  const GGMTarget& target, const Condition& cond) {
    cond.validate();
    if (!target.block_mode()) {
        throw ConfigError("block posterior requires a block target");
    }
    const int s = target.block_s;
    const int t = target.block_t;
    const Mat& l = omega11_factor;
    const Mat omega11 = l * l.transpose();

    double logdet11 = 0.0;
    for (int i = 0; i < s; ++i) {
        logdet11 += std::log(l(i, i));
    }
    logdet11 *= 2.0;

    double trace_sum = (omega11.array() * target.S11.array()).sum() +
                       cond.lambda * omega11.trace();
    double penalty = 0.0;
    for (int i = 0; i < s; ++i) {
        for (int j = i + 1; j < s; ++j) {
            penalty += std::pow(std::abs(omega11(i, j)), cond.q);
        }
    }
    if (t > 0) {
        trace_sum += 2.0 * (omega12.array() * target.S12.array()).sum();
        // Tr[omega12^T omega11^-1 omega12 (S22 + lambda I)] with
        // omega11^-1 = L^-T L^-1 applied through one triangular solve.
        const Mat m = l.triangularView<Eigen::Lower>().solve(omega12);
        trace_sum += ((m * target.S22).array() * m.array()).sum() +
                     cond.lambda * m.array().square().sum();
        penalty += omega12.array().abs().pow(cond.q).sum();
    }
    const double consts = gen_normal_term_count(target) * gen_normal_log_const(cond);
    return 0.5 * target.n * logdet11 - 0.5 * trace_sum - cond.lambda * penalty + consts;
}

}  // namespace cmflow
