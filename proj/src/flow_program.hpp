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

// Generator program shared by the recording (tape) and plain evaluation
// paths. Both backends run the exact same formulas, so sampled values and
// trained densities cannot drift apart.

#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "cmflow/flow.hpp"
#include "cmflow/tape.hpp"

namespace cmflow::flowprog {

struct TapeBackend {
    ad::Tape* tape = nullptr;
    using V = ad::Expr;
    V constant(Mat m) { return tape->constant(std::move(m)); }
    V scalar(double v) { return tape->scalar(v); }
    V add(V a, V b) { return tape->add(a, b); }
    V sub(V a, V b) { return tape->sub(a, b); }
    V mul(V a, V b) { return tape->mul(a, b); }
    V neg(V a) { return tape->neg(a); }
    V sigmoid(V a) { return tape->sigmoid(a); }
    V softplus(V a) { return tape->softplus(a); }
    V log(V a) { return tape->log(a); }
    V sum(V a) { return tape->sum(a); }
    V matmul(V a, V b) { return tape->matmul(a, b); }
    V transpose(V a) { return tape->transpose(a); }
    V reshape(V a, int r, int c) { return tape->reshape(a, r, c); }
    V trace(V a) { return tape->trace(a); }
    V abs_pow(V a, double q) { return tape->abs_pow(a, q); }
    V solve_lower(V l, V b, bool tr = false) { return tape->solve_lower(l, b, tr); }
    V slice_rows(V a, int f, int c) { return tape->slice_rows(a, f, c); }
    V slice_cols(V a, int f, int c) { return tape->slice_cols(a, f, c); }
    V repeat_rows(V a, int k) { return tape->repeat_rows(a, k); }
    V group_sum_rows(V a, int g) { return tape->group_sum_rows(a, g); }
    V group_softmax_rows(V a, int g) { return tape->group_softmax_rows(a, g); }
};

struct PlainBackend {
    using V = Mat;
    V constant(Mat m) { return m; }
    V scalar(double v) {
        Mat m(1, 1);
        m(0, 0) = v;
        return m;
    }
    V add(const V& a, const V& b) {
        ad::detail::check_broadcast(a, b, "add");
        return ad::detail::ew_binary(a, b, [](double x, double y) { return x + y; });
    }
    V sub(const V& a, const V& b) {
        ad::detail::check_broadcast(a, b, "sub");
        return ad::detail::ew_binary(a, b, [](double x, double y) { return x - y; });
    }
    V mul(const V& a, const V& b) {
        ad::detail::check_broadcast(a, b, "mul");
        return ad::detail::ew_binary(a, b, [](double x, double y) { return x * y; });
    }
    V neg(const V& a) { return -a; }
    V sigmoid(const V& a) {
        return a.unaryExpr([](double x) { return ad::detail::sigmoid(x); });
    }
    V softplus(const V& a) {
        return a.unaryExpr([](double x) { return ad::detail::softplus(x); });
    }
    V log(const V& a) {
        if ((a.array() <= 0.0).any()) {
            throw DomainError("log of non-positive value");
        }
        return a.array().log().matrix();
    }
    V sum(const V& a) { return scalar(a.sum()); }
    V matmul(const V& a, const V& b) { return a * b; }
    V transpose(const V& a) { return a.transpose(); }
    V reshape(const V& a, int r, int c) { return Eigen::Map<const Mat>(a.data(), r, c); }
    V trace(const V& a) { return scalar(a.trace()); }
    V abs_pow(const V& a, double q) {
        return a.unaryExpr([q](double x) { return std::pow(std::abs(x), q); });
    }
    V solve_lower(const V& l, const V& b, bool tr = false) {
        if (tr) {
            return l.triangularView<Eigen::Lower>().transpose().solve(b);
        }
        return l.triangularView<Eigen::Lower>().solve(b);
    }
    V slice_rows(const V& a, int f, int c) { return a.middleRows(f, c); }
    V slice_cols(const V& a, int f, int c) { return a.middleCols(f, c); }
    V repeat_rows(const V& a, int k) { return ad::detail::repeat_rows_mat(a, k); }
    V group_sum_rows(const V& a, int g) { return ad::detail::group_sum_rows_mat(a, g); }
    V group_softmax_rows(const V& a, int g) { return ad::detail::group_softmax_rows_mat(a, g); }
};

template <class B>
struct BoundLayer {
    using V = typename B::V;
    V w1z, w1c, b1, w2, b2, w3, wc, b3;
    V m1, m2, m3;  // autoregressive masks (constants)
};

template <class B>
struct BoundFlow {
    using V = typename B::V;
    const FlowConfig* cfg = nullptr;
    B* ops = nullptr;
    std::vector<BoundLayer<B>> layers;

    V one, two, s_const, trin_log2;
    V ones_row_dim;   // 1 x D
    V ones_row_tri;   // 1 x tri_n
    V diag_mask;      // D x 1
    V offd_mask;      // D x 1
    V diag_gather;    // tri_n x D
    V chol_weights;   // 1 x tri_n, entry j = tri_n - j
    V tri_scatter;    // tri_n^2 x tri_len, vectorized fill-triangular
};

// src(const ParamBlock&) -> V extracts one weight block (and, on the tape
// backend, registers it as a differentiable input).
template <class B, class Src>
BoundFlow<B> bind_flow(B& ops, const FlowConfig& cfg, Src src) {
    BoundFlow<B> f;
    f.cfg = &cfg;
    f.ops = &ops;
    const ParamLayout layout = make_layout(cfg);
    for (int l = 0; l < cfg.layers; ++l) {
        const LayerLayout& ll = layout.layers[l];
        const LayerMasks masks = make_masks(cfg, l);
        BoundLayer<B> bl;
        bl.w1z = src(ll.w1z);
        bl.w1c = src(ll.w1c);
        bl.b1 = src(ll.b1);
        bl.w2 = src(ll.w2);
        bl.b2 = src(ll.b2);
        bl.w3 = src(ll.w3);
        bl.wc = src(ll.wc);
        bl.b3 = src(ll.b3);
        bl.m1 = ops.constant(masks.input);
        bl.m2 = ops.constant(masks.hidden);
        bl.m3 = ops.constant(masks.output);
        f.layers.push_back(std::move(bl));
    }

    const int dim = cfg.flow_dim();
    const int m = cfg.tri_n();
    f.one = ops.scalar(1.0);
    f.two = ops.scalar(2.0);
    f.s_const = ops.scalar(cfg.linear_range);
    f.trin_log2 = ops.scalar(m * std::log(2.0));
    f.ones_row_dim = ops.constant(Mat::Ones(1, dim));
    f.ones_row_tri = ops.constant(Mat::Ones(1, m));

    Mat dmask = Mat::Zero(dim, 1);
    for (const int p : diag_positions(m)) {
        dmask(p, 0) = 1.0;
    }
    f.diag_mask = ops.constant(dmask);
    f.offd_mask = ops.constant(Mat::Ones(dim, 1) - dmask);

    Mat gather = Mat::Zero(m, dim);
    {
        const std::vector<int> dp = diag_positions(m);
        for (int i = 0; i < m; ++i) {
            gather(i, dp[i]) = 1.0;
        }
    }
    f.diag_gather = ops.constant(gather);

    Mat weights(1, m);
    for (int j = 0; j < m; ++j) {
        weights(0, j) = static_cast<double>(m - j);
    }
    f.chol_weights = ops.constant(weights);

    Mat scatter = Mat::Zero(m * m, cfg.tri_len());
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j <= i; ++j) {
            scatter(i + j * m, tri_index(i, j)) = 1.0;  // column-major vec(L)
        }
    }
    f.tri_scatter = ops.constant(scatter);
    return f;
}

template <class B>
typename B::V apply_tanh(BoundFlow<B>& f, typename B::V x) {
    auto& ops = *f.ops;
    return ops.sub(ops.mul(ops.sigmoid(ops.mul(x, f.two)), f.two), f.one);
}

// Raw conditioner output for one layer: (3k+1) stacked parameter blocks,
// rows [logits | raw slopes | offsets | raw amplitude], each dimension-major.
template <class B>
typename B::V conditioner_out(BoundFlow<B>& f, int layer, const typename B::V& z,
                              const typename B::V& cond) {
    auto& ops = *f.ops;
    const BoundLayer<B>& bl = f.layers[layer];
    auto h1 = apply_tanh(
        f, ops.add(ops.add(ops.matmul(ops.mul(bl.w1z, bl.m1), z), ops.matmul(bl.w1c, cond)),
                   bl.b1));
    auto h2 = apply_tanh(f, ops.add(ops.matmul(ops.mul(bl.w2, bl.m2), h1), bl.b2));
    return ops.add(ops.add(ops.matmul(ops.mul(bl.w3, bl.m3), h2), ops.matmul(bl.wc, cond)),
                   bl.b3);
}

template <class B>
struct LayerResult {
    typename B::V y;           // D x N
    typename B::V logdet_row;  // 1 x N
};

template <class B>
LayerResult<B> sos_layer(BoundFlow<B>& f, int layer, const typename B::V& z,
                         const typename B::V& cond) {
    auto& ops = *f.ops;
    const FlowConfig& cfg = *f.cfg;
    const int dim = cfg.flow_dim();
    const int k = cfg.sigmoids;
    const int dk = dim * k;

    auto out = conditioner_out(f, layer, z, cond);
    auto logits = ops.slice_rows(out, 0, dk);
    auto raw_w = ops.slice_rows(out, dk, dk);
    auto offsets = ops.slice_rows(out, 2 * dk, dk);
    auto raw_a = ops.slice_rows(out, 3 * dk, dim);
    auto shift = ops.slice_rows(out, 3 * dk + dim, dim);

    auto v = ops.group_softmax_rows(logits, k);
    auto w = ops.softplus(raw_w);
    auto a = ops.softplus(raw_a);

    auto zrep = ops.repeat_rows(z, k);
    auto sig = ops.sigmoid(ops.add(ops.mul(w, zrep), offsets));
    auto mix = ops.group_sum_rows(ops.mul(v, sig), k);

    auto zm = ops.sub(z, f.s_const);
    auto zp = ops.sub(ops.neg(z), f.s_const);
    auto tails = ops.sub(ops.softplus(zm), ops.softplus(zp));

    LayerResult<B> r;
    r.y = ops.add(ops.add(ops.mul(a, mix), tails), shift);

    auto dsig = ops.mul(sig, ops.sub(f.one, sig));
    auto dmix = ops.group_sum_rows(ops.mul(ops.mul(v, w), dsig), k);
    auto deriv = ops.add(ops.add(ops.mul(a, dmix), ops.sigmoid(zm)), ops.sigmoid(zp));
    r.logdet_row = ops.matmul(f.ones_row_dim, ops.log(deriv));
    return r;
}

template <class B>
struct HeadResult {
    typename B::V v_pos;            // D x N after Positive-Diagonal
    typename B::V logdet_row;       // 1 x N: Positive-Diagonal + Cholesky product
    typename B::V logdet_omega_row; // 1 x N: 2 sum log diag(L)
};

template <class B>
HeadResult<B> matrix_head(BoundFlow<B>& f, const typename B::V& v) {
    auto& ops = *f.ops;
    HeadResult<B> r;
    r.v_pos = ops.add(ops.mul(f.diag_mask, ops.softplus(v)), ops.mul(f.offd_mask, v));
    // log sigmoid(x) = -softplus(-x)
    auto pos_ld =
        ops.matmul(f.ones_row_dim, ops.mul(f.diag_mask, ops.neg(ops.softplus(ops.neg(v)))));
    auto diag_vals = ops.matmul(f.diag_gather, r.v_pos);
    auto log_diag = ops.log(diag_vals);
    auto chol_ld = ops.add(ops.matmul(f.chol_weights, log_diag), f.trin_log2);
    r.logdet_row = ops.add(pos_ld, chol_ld);
    r.logdet_omega_row = ops.mul(ops.matmul(f.ones_row_tri, log_diag), f.two);
    return r;
}

template <class B>
struct FlowRun {
    typename B::V v_pre;             // D x N, after the n sum-of-sigmoids layers
    HeadResult<B> head;
    typename B::V logdet_total_row;  // 1 x N, layers + head
};

template <class B>
FlowRun<B> run_flow(BoundFlow<B>& f, const typename B::V& z, const typename B::V& cond) {
    auto& ops = *f.ops;
    FlowRun<B> run;
    typename B::V cur = z;
    typename B::V ld;
    for (int l = 0; l < f.cfg->layers; ++l) {
        LayerResult<B> r = sos_layer(f, l, cur, cond);
        cur = r.y;
        ld = (l == 0) ? r.logdet_row : ops.add(ld, r.logdet_row);
    }
    run.v_pre = cur;
    run.head = matrix_head(f, cur);
    run.logdet_total_row = ops.add(ld, run.head.logdet_row);
    return run;
}

template <class B>
struct SampleMats {
    typename B::V l;        // Cholesky factor (tri_n x tri_n)
    typename B::V omega;    // l l^T
    typename B::V omega12;  // block mode with t > 0
    bool has_cross = false;
};

// Builds the matrix pair for one sample column of the head output.
template <class B>
SampleMats<B> sample_matrices(BoundFlow<B>& f, const typename B::V& vcol) {
    auto& ops = *f.ops;
    const FlowConfig& cfg = *f.cfg;
    const int m = cfg.tri_n();
    SampleMats<B> s;
    auto tri = cfg.rest_len() > 0 ? ops.slice_rows(vcol, 0, cfg.tri_len()) : vcol;
    s.l = ops.reshape(ops.matmul(f.tri_scatter, tri), m, m);
    s.omega = ops.matmul(s.l, ops.transpose(s.l));
    if (cfg.rest_len() > 0) {
        auto rest = ops.slice_rows(vcol, cfg.tri_len(), cfg.rest_len());
        // Row-major ravel of omega12: entry (i, j) sits at position i*t + j.
        s.omega12 = ops.transpose(ops.reshape(rest, cfg.block_t, cfg.block_s));
        s.has_cross = true;
    }
    return s;
}

}  // namespace cmflow::flowprog
