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

#include <cmath>
#include <cstdio>
#include <fstream>

#include "doctest.h"

#include "cmflow/flow.hpp"
#include "flow_program.hpp"
#include "oracles.hpp"

using namespace cmflow;

namespace {

flowprog::BoundFlow<flowprog::PlainBackend> bind_plain(flowprog::PlainBackend& ops,
                                                       const FlowParameters& params) {
    return flowprog::bind_flow(ops, params.config, [&params](const ParamBlock& b) {
        return Mat(Eigen::Map<const Mat>(params.theta.data() + b.offset, b.rows, b.cols));
    });
}

SosParams random_sos(Rng& rng, int k) {
    Eigen::VectorXd logits(k), raw_w(k), offsets(k);
    for (int j = 0; j < k; ++j) {
        logits(j) = rng.normal();
        raw_w(j) = rng.normal();
        offsets(j) = 2.0 * rng.normal();
    }
    return sos_from_raw(logits, raw_w, offsets, rng.normal(), rng.normal());
}

// Kills every sigmoid bump and shift so each layer collapses to its tails.
void zero_amplitudes(FlowParameters& params) {
    const ParamLayout layout = make_layout(params.config);
    const int dim = params.config.flow_dim();
    const int dk = dim * params.config.sigmoids;
    for (const LayerLayout& ll : layout.layers) {
        for (int p = 0; p < dim; ++p) {
            params.theta(ll.b3.offset + 3 * dk + p) = -40.0;         // amplitude
            params.theta(ll.b3.offset + 3 * dk + dim + p) = 0.0;     // shift
        }
    }
}

Eigen::VectorXd flow_map(const FlowParameters& params, double lambda, double q,
                         const Eigen::VectorXd& z) {
    const PrecisionSample s = cmf_generate(params, z, lambda, q);
    const FlowConfig& cfg = params.config;
    Eigen::VectorXd out(cfg.flow_dim());
    // Free coordinates of the output: lower triangle of omega, then the raveled
    // cross block.
    const int m = cfg.tri_n();
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j <= i; ++j) {
            out(tri_index(i, j)) = s.omega(i, j);
        }
    }
    for (int i = 0; i < (cfg.rest_len() > 0 ? cfg.block_s : 0); ++i) {
        for (int j = 0; j < cfg.block_t; ++j) {
            out(cfg.tri_len() + i * cfg.block_t + j) = s.omega12(i, j);
        }
    }
    return out;
}

}  // namespace

TEST_SUITE("flow") {

TEST_CASE("sum-of-sigmoids pointwise behavior") {
    SosParams p;
    p.v = Eigen::VectorXd::Ones(1);
    p.w = Eigen::VectorXd::Ones(1);
    p.b = Eigen::VectorXd::Zero(1);
    p.a = 1.0;

    CHECK(sos_value(0.0, p, 30.0) == doctest::Approx(0.5).epsilon(1e-13));
    CHECK(sos_value(40.0, p, 30.0) == doctest::Approx(11.0).epsilon(1e-5));

    // Derivative against central differences for a random two-sigmoid mixture.
    Rng rng(17);
    const SosParams p2 = random_sos(rng, 2);
    const double z = 0.7;
    const double h = 1e-6;
    const double fd = (sos_value(z + h, p2, 3.0) - sos_value(z - h, p2, 3.0)) / (2.0 * h);
    CHECK(sos_derivative(z, p2, 3.0) == doctest::Approx(fd).epsilon(1e-6));
}

TEST_CASE("sum-of-sigmoids monotonicity") {
    Rng rng(23);
    for (int rep = 0; rep < 1000; ++rep) {
        const SosParams p = random_sos(rng, 4);
        double z1 = 3.0 * rng.normal();
        double z2 = 3.0 * rng.normal();
        if (z1 > z2) {
            std::swap(z1, z2);
        }
        if (z1 == z2) {
            continue;
        }
        CHECK(sos_value(z1, p, 3.0) < sos_value(z2, p, 3.0));
    }
}

TEST_CASE("sum-of-sigmoids inverse round trips") {
    Rng rng(31);
    const SosParams p = random_sos(rng, 3);

    const double y1 = sos_value(1.3, p, 3.0);
    CHECK(sos_inverse(y1, p, 3.0, 1e-12) == doctest::Approx(1.3).epsilon(1e-8));

    const double y2 = sos_value(-25.0, p, 3.0);
    CHECK(sos_inverse(y2, p, 3.0, 1e-12) == doctest::Approx(-25.0).epsilon(1e-6));

    double worst = 0.0;
    for (int rep = 0; rep < 1000; ++rep) {
        const SosParams pr = random_sos(rng, 5);
        const double z = 4.0 * rng.normal();
        const double zi = sos_inverse(sos_value(z, pr, 3.0), pr, 3.0, 1e-12);
        worst = std::max(worst, std::abs(zi - z));
    }
    CHECK(worst <= 1e-8);
}

TEST_CASE("fill-triangular ordering and round trip") {
    Eigen::VectorXd v(3);
    v << 1.0, 2.0, 3.0;
    const Mat l = fill_triangular(v, 2);
    CHECK(l(0, 0) == 1.0);
    CHECK(l(0, 1) == 0.0);
    CHECK(l(1, 0) == 2.0);
    CHECK(l(1, 1) == 3.0);
    CHECK(unravel_triangular(l) == v);

    CHECK(FlowConfig{.dim = 15}.tri_len() == 120);
    CHECK_THROWS_AS((void)fill_triangular(v, 3), ConfigError);
}

TEST_CASE("positive-diagonal head values and jacobian") {
    FlowConfig cfg;
    cfg.dim = 3;
    cfg.layers = 1;
    cfg.sigmoids = 2;
    flowprog::PlainBackend ops;
    Rng rng(3);
    FlowParameters params = FlowParameters::init(cfg, rng);
    auto flow = bind_plain(ops, params);

    // Zero diagonal inputs map to log 2 with per-element log-det log(1/2).
    Mat v = Mat::Zero(cfg.flow_dim(), 1);
    auto head = flowprog::matrix_head(flow, v);
    for (const int p : diag_positions(3)) {
        CHECK(head.v_pos(p, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    // Positive-diagonal part of the log-det: 3 * log sigmoid(0); the Cholesky
    // part adds 3 log 2 + sum (3 - i) log log(2).
    double expected = 3.0 * std::log(0.5) + 3.0 * std::log(2.0);
    for (int i = 0; i < 3; ++i) {
        expected += (3.0 - i) * std::log(std::log(2.0));
    }
    CHECK(head.logdet_row(0, 0) == doctest::Approx(expected).epsilon(1e-10));

    // Saturated diagonal passes through and contributes nothing.
    Mat big = Mat::Zero(cfg.flow_dim(), 1);
    for (const int p : diag_positions(3)) {
        big(p, 0) = 50.0;
    }
    auto head_big = flowprog::matrix_head(flow, big);
    for (const int p : diag_positions(3)) {
        CHECK(head_big.v_pos(p, 0) == doctest::Approx(50.0).epsilon(1e-12));
    }

    // Dense numeric Jacobian of the Positive-Diagonal stage alone.
    auto pos_map = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
        return flowprog::matrix_head(flow, Mat(x)).v_pos.col(0);
    };
    Eigen::VectorXd x0(cfg.flow_dim());
    Rng r2(5);
    for (int i = 0; i < x0.size(); ++i) {
        x0(i) = r2.normal();
    }
    const Eigen::MatrixXd jac = oracles::numeric_jacobian(pos_map, x0);
    double logdet = 0.0;
    for (int i = 0; i < x0.size(); ++i) {
        logdet += std::log(jac(i, i));
    }
    // Recompute the Positive-Diagonal contribution only (log sigmoid at the
    // diagonal slots; off-diagonals are identity).
    double pos_part = 0.0;
    for (const int p : diag_positions(3)) {
        pos_part += std::log(ad::detail::sigmoid(x0(p)));
    }
    CHECK(logdet == doctest::Approx(pos_part).epsilon(1e-8));
}

TEST_CASE("cholesky product values, jacobian, uniqueness") {
    // Closed-form check at d = 2.
    Eigen::VectorXd v(3);
    v << 2.0, 1.0, 3.0;
    const Mat l = fill_triangular(v, 2);
    const Mat omega = l * l.transpose();
    CHECK(omega(0, 0) == 4.0);
    CHECK(omega(0, 1) == 2.0);
    CHECK(omega(1, 1) == 10.0);

    // Numeric Jacobian of vech(L L^T) against 2^d prod l_ii^{d-i+1}.
    auto chol_map = [](const Eigen::VectorXd& x) -> Eigen::VectorXd {
        const Mat lm = fill_triangular(x, 2);
        return unravel_triangular(lm * lm.transpose());
    };
    const double numeric = oracles::numeric_log_abs_det(chol_map, v);
    CHECK(numeric == doctest::Approx(std::log(48.0)).epsilon(1e-8));
    const double formula = 2.0 * std::log(2.0) + 2.0 * std::log(2.0) + 1.0 * std::log(3.0);
    CHECK(formula == doctest::Approx(std::log(48.0)).epsilon(1e-12));

    // Identity factor: omega = I with log-det d log 2.
    const Mat id = Mat::Identity(4, 4);
    CHECK((id * id.transpose()).isApprox(id));

    // Positive-diagonal uniqueness: the factorization returns l.
    const Eigen::LLT<Mat> llt(omega);
    CHECK(Mat(llt.matrixL()).isApprox(l, 1e-12));
}

TEST_CASE("masked layer respects the autoregressive structure") {
    FlowConfig cfg;
    cfg.dim = 3;  // flow dimension 6
    cfg.layers = 2;
    cfg.sigmoids = 3;
    cfg.hidden = 16;
    Rng rng(11);
    FlowParameters params = FlowParameters::init(cfg, rng);
    // Random conditioner output weights so the layer actually mixes inputs.
    const ParamLayout layout = make_layout(cfg);
    for (const LayerLayout& ll : layout.layers) {
        for (int i = 0; i < ll.w3.size(); ++i) {
            params.theta(ll.w3.offset + i) = 0.3 * rng.normal();
        }
        for (int i = 0; i < ll.wc.size(); ++i) {
            params.theta(ll.wc.offset + i) = 0.3 * rng.normal();
        }
    }

    flowprog::PlainBackend ops;
    auto flow = bind_plain(ops, params);
    const Mat cond = condition_embedding(cfg, {1.0}, {1.0});
    const int dim = cfg.flow_dim();

    for (int layer = 0; layer < 2; ++layer) {
        auto apply = [&](const Eigen::VectorXd& z) -> Eigen::VectorXd {
            return flowprog::sos_layer(flow, layer, Mat(z), cond).y.col(0);
        };
        Eigen::VectorXd z0(dim);
        for (int i = 0; i < dim; ++i) {
            z0(i) = rng.normal();
        }
        const Eigen::MatrixXd jac = oracles::numeric_jacobian(apply, z0);
        const bool forward_order = (layer % 2 == 0);
        double logdet = 0.0;
        for (int r = 0; r < dim; ++r) {
            logdet += std::log(std::abs(jac(r, r)));
            for (int c = 0; c < dim; ++c) {
                const int deg_r = forward_order ? r + 1 : dim - r;
                const int deg_c = forward_order ? c + 1 : dim - c;
                if (deg_c >= deg_r && r != c) {
                    CHECK(std::abs(jac(r, c)) < 1e-10);
                }
            }
        }
        const double reported =
            flowprog::sos_layer(flow, layer, Mat(z0), cond).logdet_row(0, 0);
        CHECK(std::abs(reported - logdet) <= 1e-8 * std::max(1.0, std::abs(logdet)));

        // Perturbing a later coordinate never moves an earlier output.
        for (int j = 0; j < dim; ++j) {
            Eigen::VectorXd zp = z0;
            zp(j) += 0.37;
            const Eigen::VectorXd before = apply(z0);
            const Eigen::VectorXd after = apply(zp);
            for (int r = 0; r < dim; ++r) {
                const int deg_r = forward_order ? r + 1 : dim - r;
                const int deg_j = forward_order ? j + 1 : dim - j;
                if (deg_j >= deg_r && r != j) {
                    CHECK(before(r) == after(r));
                }
            }
        }
    }
}

TEST_CASE("zeroed conditioner applies one shared map per dimension") {
    FlowConfig cfg;
    cfg.dim = 2;
    cfg.layers = 1;
    cfg.sigmoids = 4;
    Rng rng(2);
    FlowParameters params = FlowParameters::init(cfg, rng);  // w3 = wc = 0 at init

    flowprog::PlainBackend ops;
    auto flow = bind_plain(ops, params);
    const Mat cond = condition_embedding(cfg, {0.5}, {1.5});
    Eigen::VectorXd z(3);
    z << -1.0, 0.3, 2.0;
    auto res = flowprog::sos_layer(flow, 0, Mat(z), cond);

    // Shared parameters come straight from the output bias.
    const ParamLayout layout = make_layout(cfg);
    const int dk = cfg.flow_dim() * cfg.sigmoids;
    const auto& b3 = layout.layers[0].b3;
    auto slot = [&](int base, int p, int j) {
        return params.theta(b3.offset + base + p * cfg.sigmoids + j);
    };
    const int dim = cfg.flow_dim();
    double expected_ld = 0.0;
    for (int p = 0; p < 3; ++p) {
        Eigen::VectorXd logits(4), raw_w(4), offs(4);
        for (int j = 0; j < 4; ++j) {
            logits(j) = slot(0, p, j);
            raw_w(j) = slot(dk, p, j);
            offs(j) = slot(2 * dk, p, j);
        }
        const SosParams sp =
            sos_from_raw(logits, raw_w, offs, params.theta(b3.offset + 3 * dk + p),
                         params.theta(b3.offset + 3 * dk + dim + p));
        CHECK(res.y(p, 0) ==
              doctest::Approx(sos_value(z(p), sp, cfg.linear_range)).epsilon(1e-12));
        expected_ld += std::log(sos_derivative(z(p), sp, cfg.linear_range));
    }
    CHECK(res.logdet_row(0, 0) == doctest::Approx(expected_ld).epsilon(1e-12));
}

TEST_CASE("near-identity configuration reduces to the matrix head") {
    FlowConfig cfg;
    cfg.dim = 3;
    cfg.layers = 4;
    cfg.sigmoids = 8;
    cfg.linear_range = 1e-9;  // tails become the identity
    Rng rng(5);
    FlowParameters params = FlowParameters::init(cfg, rng);
    zero_amplitudes(params);

    // Base point that maps to L = I: inverse softplus of 1 on the diagonal.
    const double raw_one = std::log(std::expm1(1.0));
    Eigen::VectorXd z = Eigen::VectorXd::Zero(cfg.flow_dim());
    for (const int p : diag_positions(3)) {
        z(p) = raw_one;
    }
    const PrecisionSample s = cmf_generate(params, z, 1.0, 1.0);
    CHECK((s.omega - Mat::Identity(3, 3)).cwiseAbs().maxCoeff() <= 1e-8);

    double expected = base_log_density(z) - 3.0 * std::log(2.0);
    for (int i = 0; i < 3; ++i) {
        expected -= std::log(ad::detail::sigmoid(raw_one));
    }
    CHECK(s.log_q == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("full-pipeline log-det matches the dense numeric jacobian") {
    for (const bool block : {false, true}) {
        FlowConfig cfg;
        if (block) {
            cfg.dim = 0;
            cfg.block_s = 2;
            cfg.block_t = 2;
        } else {
            cfg.dim = 3;
        }
        cfg.layers = 3;
        cfg.sigmoids = 4;
        cfg.hidden = 16;
        Rng rng(13);
        FlowParameters params = FlowParameters::init(cfg, rng);
        const ParamLayout layout = make_layout(cfg);
        for (const LayerLayout& ll : layout.layers) {
            for (int i = 0; i < ll.w3.size(); ++i) {
                params.theta(ll.w3.offset + i) = 0.2 * rng.normal();
            }
            for (int i = 0; i < ll.wc.size(); ++i) {
                params.theta(ll.wc.offset + i) = 0.2 * rng.normal();
            }
        }
        Eigen::VectorXd z0(cfg.flow_dim());
        for (int i = 0; i < z0.size(); ++i) {
            z0(i) = rng.normal();
        }
        const double lambda = 0.8;
        const double q = 1.2;
        auto map = [&](const Eigen::VectorXd& z) { return flow_map(params, lambda, q, z); };
        const double numeric = oracles::numeric_log_abs_det(map, z0);
        const PrecisionSample s = cmf_generate(params, z0, lambda, q);
        const double reported = base_log_density(z0) - s.log_q;
        CHECK(std::abs(reported - numeric) <= 1e-6 * std::max(1.0, std::abs(numeric)));
    }
}

TEST_CASE("block generation bookkeeping") {
    FlowConfig cfg;
    cfg.dim = 0;
    cfg.block_s = 2;
    cfg.block_t = 3;
    CHECK(cfg.flow_dim() == 9);

    Rng rng(19);
    FlowParameters params = FlowParameters::init(cfg, rng);
    Eigen::VectorXd z(9);
    for (int i = 0; i < 9; ++i) {
        z(i) = rng.normal();
    }
    const PrecisionSample s = cmf_generate(params, z, 1.0, 1.0);
    CHECK(s.omega.rows() == 2);
    CHECK(s.omega12.rows() == 2);
    CHECK(s.omega12.cols() == 3);
    CHECK(Eigen::LLT<Mat>(s.omega).info() == Eigen::Success);

    // Degenerate block (s=1, t=0) behaves exactly like the scalar full mode.
    FlowConfig cfg_block;
    cfg_block.dim = 0;
    cfg_block.block_s = 1;
    cfg_block.block_t = 0;
    FlowConfig cfg_full;
    cfg_full.dim = 1;
    Rng ra(7);
    const FlowParameters pa = FlowParameters::init(cfg_block, ra);
    Rng rb(7);
    FlowParameters pb = FlowParameters::init(cfg_full, rb);
    pb.theta = pa.theta;  // identical layouts at D = 1
    Eigen::VectorXd z1(1);
    z1 << 0.4;
    const PrecisionSample sa = cmf_generate(pa, z1, 2.0, 0.7);
    const PrecisionSample sb = cmf_generate(pb, z1, 2.0, 0.7);
    CHECK(sa.omega(0, 0) == doctest::Approx(sb.omega(0, 0)).epsilon(1e-14));
    CHECK(sa.log_q == doctest::Approx(sb.log_q).epsilon(1e-14));
}

TEST_CASE("generated samples are symmetric and positive definite") {
    FlowConfig cfg;
    cfg.dim = 4;
    cfg.layers = 2;
    cfg.sigmoids = 4;
    cfg.hidden = 16;
    Rng rng(29);
    FlowParameters params = FlowParameters::init(cfg, rng);
    Rng cond_rng(31);
    Rng sample_rng(37);
    for (int rep = 0; rep < 20; ++rep) {
        const double lambda =
            std::exp(cond_rng.uniform(std::log(cfg.lambda_min), std::log(cfg.lambda_max)));
        const double q = cond_rng.uniform(cfg.q_min, cfg.q_max);
        const auto samples = generate_samples(params, lambda, q, 100, sample_rng);
        for (const PrecisionSample& s : samples) {
            CHECK((s.omega - s.omega.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
            CHECK(Eigen::LLT<Mat>(s.omega).info() == Eigen::Success);
        }
    }
}

TEST_CASE("generation round trip through the numerical inverse") {
    for (const bool block : {false, true}) {
        FlowConfig cfg;
        if (block) {
            cfg.dim = 0;
            cfg.block_s = 2;
            cfg.block_t = 2;
        } else {
            cfg.dim = 3;
        }
        cfg.layers = 3;
        cfg.sigmoids = 4;
        cfg.hidden = 16;
        Rng rng(41);
        FlowParameters params = FlowParameters::init(cfg, rng);
        const ParamLayout layout = make_layout(cfg);
        for (const LayerLayout& ll : layout.layers) {
            for (int i = 0; i < ll.w3.size(); ++i) {
                params.theta(ll.w3.offset + i) = 0.2 * rng.normal();
            }
        }
        for (int rep = 0; rep < 5; ++rep) {
            Eigen::VectorXd z(cfg.flow_dim());
            for (int i = 0; i < z.size(); ++i) {
                z(i) = rng.normal();
            }
            const PrecisionSample s = cmf_generate(params, z, 1.3, 0.9);
            const Eigen::VectorXd zr = invert_generator(params, s, 1.3, 0.9, 1e-12);
            CHECK((zr - z).cwiseAbs().maxCoeff() <= 1e-6);
        }
    }
}

TEST_CASE("checkpoint round trip") {
    FlowConfig cfg;
    cfg.dim = 3;
    cfg.layers = 2;
    cfg.sigmoids = 3;
    cfg.hidden = 8;
    Rng rng(53);
    FlowParameters params = FlowParameters::init(cfg, rng);
    params.temperature = 0.25;

    const std::string path = "/tmp/cmflow_test_ckpt.bin";
    params.save(path);
    const FlowParameters loaded = FlowParameters::load(path);
    CHECK(loaded.config.dim == cfg.dim);
    CHECK(loaded.config.layers == cfg.layers);
    CHECK(loaded.config.sigmoids == cfg.sigmoids);
    CHECK(loaded.config.hidden == cfg.hidden);
    CHECK(loaded.config.lambda_min == cfg.lambda_min);
    CHECK(loaded.temperature == 0.25);
    CHECK(loaded.theta == params.theta);

    // Saving the loaded copy reproduces the bytes.
    const std::string path2 = "/tmp/cmflow_test_ckpt2.bin";
    loaded.save(path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    std::remove(path.c_str());
    std::remove(path2.c_str());

    {
        const std::string bad = "/tmp/cmflow_test_bad.bin";
        std::ofstream out(bad, std::ios::binary);
        out << "NOTMAGIC" << std::string(64, '\0');
        out.close();
        CHECK_THROWS_AS((void)FlowParameters::load(bad), IoError);
        std::remove(bad.c_str());
    }
}

TEST_CASE("condition embedding scales to the unit interval") {
    FlowConfig cfg;
    cfg.dim = 2;
    cfg.lambda_min = 0.1;
    cfg.lambda_max = 10.0;
    cfg.q_min = 0.5;
    cfg.q_max = 2.5;
    const Mat c = condition_embedding(cfg, {0.1, 10.0, 1.0}, {0.5, 2.5, 1.5});
    CHECK(c(0, 0) == doctest::Approx(-1.0));
    CHECK(c(0, 1) == doctest::Approx(1.0));
    CHECK(c(0, 2) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(c(1, 0) == doctest::Approx(-1.0));
    CHECK(c(1, 1) == doctest::Approx(1.0));

    FlowConfig degenerate = cfg;
    degenerate.lambda_min = degenerate.lambda_max = 2.0;
    const Mat cd = condition_embedding(degenerate, {2.0}, {1.0});
    CHECK(cd(0, 0) == 0.0);
}

}  // TEST_SUITE
