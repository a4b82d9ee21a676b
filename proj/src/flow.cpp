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

#include "cmflow/flow.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <thread>

#include "cmflow/errors.hpp"
#include "flow_program.hpp"

namespace cmflow {

void FlowConfig::validate() const {
    if (block_mode()) {
        if (block_s < 1 || block_t < 0) {
            throw ConfigError("block sizes must satisfy s >= 1, t >= 0");
        }
    } else if (dim < 1) {
        throw ConfigError("flow dimension must be >= 1");
    }
    if (layers < 1) throw ConfigError("flow needs at least one layer");
    if (sigmoids < 1) throw ConfigError("sigmoid count must be >= 1");
    if (hidden < 1) throw ConfigError("conditioner width must be >= 1");
    if (!(linear_range > 0.0)) throw ConfigError("linear range constant must be > 0");
    if (!(lambda_min > 0.0) || lambda_min > lambda_max || lambda_max > 1e3) {
        throw ConfigError("lambda range must satisfy 0 < min <= max <= 1e3");
    }
    if (!(q_min >= 0.05) || q_min > q_max || q_max > 5.0) {
        throw ConfigError("q range must satisfy 0.05 <= min <= max <= 5");
    }
}

int tri_index(int i, int j) {
    return i * (i + 1) / 2 + j;
}

Mat fill_triangular(const Eigen::VectorXd& v, int n) {
    if (v.size() != n * (n + 1) / 2) {
        throw ConfigError("fill_triangular: vector length must be n(n+1)/2");
    }
    Mat l = Mat::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            l(i, j) = v(tri_index(i, j));
        }
    }
    return l;
}

Eigen::VectorXd unravel_triangular(const Mat& l) {
    const int n = static_cast<int>(l.rows());
    Eigen::VectorXd v(n * (n + 1) / 2);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            v(tri_index(i, j)) = l(i, j);
        }
    }
    return v;
}

std::vector<int> diag_positions(int n) {
    std::vector<int> pos(n);
    for (int i = 0; i < n; ++i) {
        pos[i] = tri_index(i, i);
    }
    return pos;
}

SosParams sos_from_raw(const Eigen::VectorXd& logits, const Eigen::VectorXd& raw_w,
                       const Eigen::VectorXd& offsets, double raw_a, double shift) {
    SosParams p;
    const double m = logits.maxCoeff();
    Eigen::VectorXd e = (logits.array() - m).exp();
    p.v = e / e.sum();
    p.w = raw_w.unaryExpr([](double x) { return ad::detail::softplus(x); });
    p.b = offsets;
    p.a = ad::detail::softplus(raw_a);
    p.shift = shift;
    return p;
}

double sos_value(double z, const SosParams& p, double linear_range) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < p.v.size(); ++j) {
        acc += p.v(j) * ad::detail::sigmoid(p.w(j) * z + p.b(j));
    }
    return p.a * acc + ad::detail::softplus(z - linear_range) -
           ad::detail::softplus(-z - linear_range) + p.shift;
}

double sos_derivative(double z, const SosParams& p, double linear_range) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < p.v.size(); ++j) {
        const double s = ad::detail::sigmoid(p.w(j) * z + p.b(j));
        acc += p.v(j) * p.w(j) * s * (1.0 - s);
    }
    return p.a * acc + ad::detail::sigmoid(z - linear_range) +
           ad::detail::sigmoid(-z - linear_range);
}

double sos_inverse(double y, const SosParams& p, double linear_range, double tol, int max_iter) {
    if (!(tol > 0.0)) {
        throw ConfigError("sos_inverse tolerance must be positive");
    }
    double lo = y - 1.0;
    double hi = y + 1.0;
    double step = 1.0;
    int guard = 0;
    while (sos_value(lo, p, linear_range) > y) {
        lo -= step;
        step *= 2.0;
        if (++guard > 200) throw NumericError("sos_inverse: bracket search failed (low)");
    }
    step = 1.0;
    guard = 0;
    while (sos_value(hi, p, linear_range) < y) {
        hi += step;
        step *= 2.0;
        if (++guard > 200) throw NumericError("sos_inverse: bracket search failed (high)");
    }
    double z = 0.5 * (lo + hi);
    for (int it = 0; it < max_iter; ++it) {
        const double f = sos_value(z, p, linear_range) - y;
        if (std::abs(f) <= tol) {
            return z;
        }
        if (f > 0.0) {
            hi = z;
        } else {
            lo = z;
        }
        const double d = sos_derivative(z, p, linear_range);
        double next = z - f / d;
        if (!(d > 0.0) || !(next > lo) || !(next < hi)) {
            next = 0.5 * (lo + hi);
        }
        z = next;
    }
    throw NumericError("sos_inverse: no convergence within iteration limit");
}

LayerMasks make_masks(const FlowConfig& config, int layer) {
    const int dim = config.flow_dim();
    const int h = config.hidden;
    const int k = config.sigmoids;
    const bool forward_order = (layer % 2 == 0);

    auto degree = [&](int p) { return forward_order ? p + 1 : dim - p; };
    std::vector<int> hidden_degree(h);
    for (int i = 0; i < h; ++i) {
        hidden_degree[i] = dim > 1 ? 1 + (i % (dim - 1)) : 0;
    }

    LayerMasks masks;
    masks.input = Mat::Zero(h, dim);
    for (int i = 0; i < h; ++i) {
        for (int p = 0; p < dim; ++p) {
            masks.input(i, p) = hidden_degree[i] >= degree(p) ? 1.0 : 0.0;
        }
    }
    masks.hidden = Mat::Zero(h, h);
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < h; ++j) {
            masks.hidden(i, j) = hidden_degree[i] >= hidden_degree[j] ? 1.0 : 0.0;
        }
    }
    const int out = dim * (3 * k + 2);
    masks.output = Mat::Zero(out, h);
    const int dk = dim * k;
    // Row blocks: logits, slopes, offsets (k slots each), amplitude, shift.
    auto out_dim = [&](int r) {
        if (r < 3 * dk) return (r % dk) / k;
        return (r - 3 * dk) % dim;
    };
    for (int r = 0; r < out; ++r) {
        const int deg = degree(out_dim(r));
        for (int j = 0; j < h; ++j) {
            masks.output(r, j) = deg > hidden_degree[j] ? 1.0 : 0.0;
        }
    }
    return masks;
}

ParamLayout make_layout(const FlowConfig& config) {
    const int dim = config.flow_dim();
    const int h = config.hidden;
    const int out = dim * (3 * config.sigmoids + 2);
    ParamLayout layout;
    int offset = 0;
    auto block = [&offset](int rows, int cols) {
        ParamBlock b{offset, rows, cols};
        offset += rows * cols;
        return b;
    };
    for (int l = 0; l < config.layers; ++l) {
        LayerLayout ll;
        ll.w1z = block(h, dim);
        ll.w1c = block(h, 2);
        ll.b1 = block(h, 1);
        ll.w2 = block(h, h);
        ll.b2 = block(h, 1);
        ll.w3 = block(out, h);
        ll.wc = block(out, 2);
        ll.b3 = block(out, 1);
        layout.layers.push_back(ll);
    }
    layout.total = offset;
    return layout;
}

Mat condition_embedding(const FlowConfig& config, const std::vector<double>& lambdas,
                        const std::vector<double>& qs) {
    if (lambdas.size() != qs.size()) {
        throw ConfigError("condition_embedding: mismatched condition lists");
    }
    const double llo = std::log(config.lambda_min);
    const double lhi = std::log(config.lambda_max);
    Mat cond(2, static_cast<int>(lambdas.size()));
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
        if (!(lambdas[i] > 0.0)) {
            throw ConfigError("lambda must be positive");
        }
        const double ll = std::log(lambdas[i]);
        cond(0, static_cast<int>(i)) = lhi > llo ? 2.0 * (ll - llo) / (lhi - llo) - 1.0 : 0.0;
        cond(1, static_cast<int>(i)) =
            config.q_max > config.q_min
                ? 2.0 * (qs[i] - config.q_min) / (config.q_max - config.q_min) - 1.0
                : 0.0;
    }
    return cond;
}

namespace {

double inv_softplus(double y) {
    return y > 30.0 ? y : std::log(std::expm1(y));
}

}  // namespace

FlowParameters FlowParameters::init(const FlowConfig& config, Rng& rng) {
    config.validate();
    const ParamLayout layout = make_layout(config);
    FlowParameters params;
    params.config = config;
    params.theta = Eigen::VectorXd::Zero(layout.total);

    const int dim = config.flow_dim();
    const int k = config.sigmoids;
    const int dk = dim * k;
    auto fill_normal = [&](const ParamBlock& b, double scale) {
        for (int i = 0; i < b.size(); ++i) {
            params.theta(b.offset + i) = scale * rng.normal();
        }
    };

    // Offsets spread across the center range; amplitude and shift chosen so
    // every layer starts at phi(0) = 0 with unit slope.
    Eigen::VectorXd offsets(k);
    double mean_sig = 0.0, mean_dsig = 0.0;
    for (int j = 0; j < k; ++j) {
        offsets(j) = k > 1 ? -2.0 + 4.0 * static_cast<double>(j) / (k - 1) : 0.0;
        const double s = ad::detail::sigmoid(offsets(j));
        mean_sig += s / k;
        mean_dsig += s * (1.0 - s) / k;
    }
    const double tail_slope = 2.0 * ad::detail::sigmoid(-config.linear_range);
    const double amplitude = std::max(0.1, (1.0 - tail_slope) / mean_dsig);
    const double shift = -amplitude * mean_sig;

    for (const LayerLayout& ll : layout.layers) {
        // Hidden weights random; the masked output head starts at zero so the
        // initial map is condition-independent and close to the identity.
        fill_normal(ll.w1z, 1.0 / std::sqrt(static_cast<double>(dim + 2)));
        fill_normal(ll.w1c, 1.0 / std::sqrt(static_cast<double>(dim + 2)));
        fill_normal(ll.w2, 1.0 / std::sqrt(static_cast<double>(config.hidden)));
        Eigen::Map<Eigen::VectorXd> b3(params.theta.data() + ll.b3.offset, ll.b3.size());
        for (int p = 0; p < dim; ++p) {
            for (int j = 0; j < k; ++j) {
                b3(dk + p * k + j) = inv_softplus(1.0);  // slopes
                b3(2 * dk + p * k + j) = offsets(j);
            }
            b3(3 * dk + p) = inv_softplus(amplitude);
            b3(3 * dk + dim + p) = shift;
        }
    }
    return params;
}

// --- checkpoint io -----------------------------------------------------------
// Layout (all integers and floats little-endian):
//   bytes 0-7   magic "CMFLOW01"
//   u32         mode (0 full, 1 block)
//   u32         d (full) or s (block)
//   u32         t (0 in full mode)
//   u32         layers, u32 sigmoids, u32 hidden
//   f64         linear range constant
//   f64 x4      lambda_min, lambda_max, q_min, q_max
//   f64         temperature tag
//   u64         parameter count
//   f64 x count flat parameter vector

namespace {

constexpr char kMagic[8] = {'C', 'M', 'F', 'L', 'O', 'W', '0', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
    char buf[4];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(buf, 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(buf, 8);
}

void put_f64(std::ostream& os, double d) {
    put_u64(os, std::bit_cast<std::uint64_t>(d));
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char buf[4];
    is.read(reinterpret_cast<char*>(buf), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(std::istream& is) {
    unsigned char buf[8];
    is.read(reinterpret_cast<char*>(buf), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& is) {
    return std::bit_cast<double>(get_u64(is));
}

}  // namespace

void FlowParameters::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw IoError("cannot write checkpoint " + path);
    }
    os.write(kMagic, 8);
    put_u32(os, config.block_mode() ? 1 : 0);
    put_u32(os, static_cast<std::uint32_t>(config.block_mode() ? config.block_s : config.dim));
    put_u32(os, static_cast<std::uint32_t>(config.block_t));
    put_u32(os, static_cast<std::uint32_t>(config.layers));
    put_u32(os, static_cast<std::uint32_t>(config.sigmoids));
    put_u32(os, static_cast<std::uint32_t>(config.hidden));
    put_f64(os, config.linear_range);
    put_f64(os, config.lambda_min);
    put_f64(os, config.lambda_max);
    put_f64(os, config.q_min);
    put_f64(os, config.q_max);
    put_f64(os, temperature);
    put_u64(os, static_cast<std::uint64_t>(theta.size()));
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
        put_f64(os, theta(i));
    }
    if (!os) {
        throw IoError("write failed for checkpoint " + path);
    }
}

FlowParameters FlowParameters::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw IoError("cannot open checkpoint " + path);
    }
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0) {
        throw IoError("bad checkpoint magic in " + path);
    }
    FlowParameters params;
    const std::uint32_t mode = get_u32(is);
    const std::uint32_t d_or_s = get_u32(is);
    const std::uint32_t t = get_u32(is);
    if (mode == 1) {
        params.config.dim = 0;
        params.config.block_s = static_cast<int>(d_or_s);
        params.config.block_t = static_cast<int>(t);
    } else {
        params.config.dim = static_cast<int>(d_or_s);
    }
    params.config.layers = static_cast<int>(get_u32(is));
    params.config.sigmoids = static_cast<int>(get_u32(is));
    params.config.hidden = static_cast<int>(get_u32(is));
    params.config.linear_range = get_f64(is);
    params.config.lambda_min = get_f64(is);
    params.config.lambda_max = get_f64(is);
    params.config.q_min = get_f64(is);
    params.config.q_max = get_f64(is);
    params.temperature = get_f64(is);
    const std::uint64_t count = get_u64(is);
    if (!is) {
        throw IoError("truncated checkpoint header in " + path);
    }
    params.config.validate();
    const ParamLayout layout = make_layout(params.config);
    if (count != static_cast<std::uint64_t>(layout.total)) {
        throw IoError("checkpoint parameter count does not match its configuration");
    }
    params.theta.resize(static_cast<Eigen::Index>(count));
    for (std::uint64_t i = 0; i < count; ++i) {
        params.theta(static_cast<Eigen::Index>(i)) = get_f64(is);
    }
    if (!is) {
        throw IoError("truncated checkpoint payload in " + path);
    }
    return params;
}

double base_log_density(const Eigen::VectorXd& z) {
    return -0.5 * (static_cast<double>(z.size()) * std::log(2.0 * std::numbers::pi) +
                   z.squaredNorm());
}

namespace {

flowprog::BoundFlow<flowprog::PlainBackend> bind_plain(flowprog::PlainBackend& ops,
                                                       const FlowParameters& params) {
    return flowprog::bind_flow(ops, params.config, [&params](const ParamBlock& b) {
        return Mat(Eigen::Map<const Mat>(params.theta.data() + b.offset, b.rows, b.cols));
    });
}

void check_condition_in_range(const FlowConfig& cfg, double lambda, double q) {
    if (lambda < cfg.lambda_min || lambda > cfg.lambda_max || q < cfg.q_min || q > cfg.q_max) {
        throw ConfigError("condition (lambda, q) outside the trained ranges");
    }
}

std::vector<PrecisionSample> generate_batch(const FlowParameters& params, const Mat& z,
                                            double lambda, double q) {
    flowprog::PlainBackend ops;
    auto flow = bind_plain(ops, params);
    const int n = static_cast<int>(z.cols());
    const Mat cond = condition_embedding(
        params.config, std::vector<double>(n, lambda), std::vector<double>(n, q));
    auto run = flowprog::run_flow(flow, z, cond);
    std::vector<PrecisionSample> out(n);
    for (int i = 0; i < n; ++i) {
        const Mat vcol = run.head.v_pos.col(i);
        auto mats = flowprog::sample_matrices(flow, vcol);
        out[i].omega = mats.omega;
        if (mats.has_cross) {
            out[i].omega12 = mats.omega12;
        }
        out[i].z = z.col(i);
        out[i].log_q = base_log_density(out[i].z) - run.logdet_total_row(0, i);
    }
    return out;
}

}  // namespace

PrecisionSample cmf_generate(const FlowParameters& params, const Eigen::VectorXd& z,
                             double lambda, double q) {
    params.config.validate();
    if (z.size() != params.config.flow_dim()) {
        throw ConfigError("base sample has wrong dimension");
    }
    return generate_batch(params, z, lambda, q).front();
}

std::vector<PrecisionSample> generate_samples(const FlowParameters& params, double lambda,
                                              double q, int count, Rng& rng, int threads) {
    params.config.validate();
    check_condition_in_range(params.config, lambda, q);
    if (count <= 0) {
        return {};
    }
    const int dim = params.config.flow_dim();
    // All base draws come out of the stream up front so results do not depend
    // on chunking or thread count.
    const Mat z = rng.normal_matrix(dim, count);

    constexpr int kChunk = 256;
    const int n_chunks = (count + kChunk - 1) / kChunk;
    std::vector<PrecisionSample> result(count);
    auto run_chunks = [&](int first_chunk, int stride) {
        for (int c = first_chunk; c < n_chunks; c += stride) {
            const int begin = c * kChunk;
            const int len = std::min(kChunk, count - begin);
            auto batch = generate_batch(params, z.middleCols(begin, len), lambda, q);
            for (int i = 0; i < len; ++i) {
                result[begin + i] = std::move(batch[i]);
            }
        }
    };
    const int workers = std::max(1, std::min(threads, n_chunks));
    if (workers == 1) {
        run_chunks(0, 1);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (int w = 0; w < workers; ++w) {
            pool.emplace_back(run_chunks, w, workers);
        }
        for (auto& t : pool) {
            t.join();
        }
    }
    return result;
}

Eigen::VectorXd invert_generator(const FlowParameters& params, const PrecisionSample& sample,
                                 double lambda, double q, double tol) {
    const FlowConfig& cfg = params.config;
    const int dim = cfg.flow_dim();
    const int m = cfg.tri_n();

    // Matrix head inverse: Cholesky factor, then softplus inverse on the diagonal.
    const Eigen::LLT<Mat> llt(sample.omega);
    if (llt.info() != Eigen::Success) {
        throw NumericError("invert_generator: sample is not positive definite");
    }
    const Mat l = llt.matrixL();
    Eigen::VectorXd v(dim);
    v.head(cfg.tri_len()) = unravel_triangular(l);
    if (cfg.rest_len() > 0) {
        for (int i = 0; i < cfg.block_s; ++i) {
            for (int j = 0; j < cfg.block_t; ++j) {
                v(cfg.tri_len() + i * cfg.block_t + j) = sample.omega12(i, j);
            }
        }
    }
    for (const int p : diag_positions(m)) {
        v(p) = inv_softplus(v(p));
    }

    flowprog::PlainBackend ops;
    auto flow = bind_plain(ops, params);
    const Mat cond = condition_embedding(cfg, {lambda}, {q});
    const int k = cfg.sigmoids;
    const int dk = dim * k;

    // Peel layers back to front; within a layer, recover coordinates in
    // dependency order so the conditioner inputs are already known.
    for (int layer = cfg.layers - 1; layer >= 0; --layer) {
        const bool forward_order = (layer % 2 == 0);
        Eigen::VectorXd z = Eigen::VectorXd::Zero(dim);
        for (int step = 0; step < dim; ++step) {
            const int p = forward_order ? step : dim - 1 - step;
            const Mat out = flowprog::conditioner_out(flow, layer, Mat(z), cond);
            const SosParams sp = sos_from_raw(out.block(p * k, 0, k, 1),
                                              out.block(dk + p * k, 0, k, 1),
                                              out.block(2 * dk + p * k, 0, k, 1),
                                              out(3 * dk + p, 0),
                                              out(3 * dk + dim + p, 0));
            z(p) = sos_inverse(v(p), sp, cfg.linear_range, tol);
        }
        v = z;
    }
    return v;
}

}  // namespace cmflow
