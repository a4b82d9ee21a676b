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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "cmflow/errors.hpp"

namespace cmflow::ad {

using Mat = Eigen::MatrixXd;

// Derivative guard for |x|^q at x = 0: |x| is clamped to this value in the
// local derivative rule. Keeps gradients finite for q <= 1.
inline constexpr double kAbsPowClamp = 1e-12;

enum class Op : std::uint8_t {
    kConstant,
    kInput,
    kAdd,
    kSub,
    kMul,  // elementwise, with scalar and column broadcasting
    kNeg,
    kReciprocal,
    kExp,
    kLog,
    kSigmoid,
    kSoftplus,
    kAbsPow,  // |x|^q for a fixed exponent q > 0
    kSum,     // full reduction to 1x1
    kMatMul,
    kTranspose,
    kReshape,  // column-major reinterpretation
    kTrace,
    kSolveTriLower,     // x = L^-1 b, or x = L^-T b when flagged
    kSliceRows,
    kSliceCols,
    kRepeatRows,        // row i -> rows i*k .. i*k+k-1
    kGroupSumRows,      // inverse reduction of kRepeatRows
    kGroupSoftmaxRows,  // softmax within consecutive groups of k rows, per column
};

class Tape;

struct Expr {
    Tape* tape = nullptr;
    int id = -1;
    bool valid() const { return tape != nullptr && id >= 0; }
};

namespace detail {

// Shared broadcasting semantics for elementwise binary ops: operands must
// either match the result shape, be 1x1, or be a column vector with the
// result's row count.
inline double bc(const Mat& m, Eigen::Index i, Eigen::Index j) {
    if (m.rows() == 1 && m.cols() == 1) return m(0, 0);
    if (m.cols() == 1) return m(i, 0);
    return m(i, j);
}

void check_broadcast(const Mat& a, const Mat& b, const char* what);

// Reduce a full-shaped gradient back onto a possibly-broadcast operand.
void reduce_onto(Mat& acc, const Mat& grad);

inline double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double softplus(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

template <class F>
Mat ew_binary(const Mat& a, const Mat& b, F f) {
    const Eigen::Index rows = std::max(a.rows(), b.rows());
    const Eigen::Index cols = std::max(a.cols(), b.cols());
    Mat out(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) {
            out(i, j) = f(bc(a, i, j), bc(b, i, j));
        }
    }
    return out;
}

// Forward kernels shared between the tape and the plain (non-recording)
// evaluator so that both paths compute bit-identical values.
Mat repeat_rows_mat(const Mat& a, int times);
Mat group_sum_rows_mat(const Mat& a, int group);
Mat group_softmax_rows_mat(const Mat& a, int group);

}  // namespace detail

// Reverse-mode tape over matrix-valued nodes. Building an op evaluates it
// eagerly; the recorded graph can be re-evaluated with forward() after
// set_input(), and differentiated with backward().
//
// A single Tape is not thread safe; distinct instances are independent.
class Tape {
  public:
    Expr constant(Mat value);
    Expr scalar(double value);
    Expr input(Mat value);

    // Replaces the value of an input or constant leaf (same shape required).
    void set_input(Expr leaf, const Mat& value);

    Expr add(Expr a, Expr b);
    Expr sub(Expr a, Expr b);
    Expr mul(Expr a, Expr b);
    Expr neg(Expr a);
    Expr reciprocal(Expr a);
    Expr exp(Expr a);
    Expr log(Expr a);
    Expr sigmoid(Expr a);
    Expr softplus(Expr a);
    Expr abs_pow(Expr a, double exponent);
    Expr sum(Expr a);
    Expr matmul(Expr a, Expr b);
    Expr transpose(Expr a);
    Expr reshape(Expr a, int rows, int cols);
    Expr trace(Expr a);
    Expr solve_lower(Expr l, Expr b, bool transpose_l = false);
    Expr slice_rows(Expr a, int first, int count);
    Expr slice_cols(Expr a, int first, int count);
    Expr repeat_rows(Expr a, int times);
    Expr group_sum_rows(Expr a, int group);
    Expr group_softmax_rows(Expr a, int group);

    const Mat& value(Expr e) const;
    double scalar_value(Expr e) const;

    // Recomputes every non-leaf node in insertion order. Bit-reproducible
    // for identical leaf values.
    void forward();

    // Reverse pass from a scalar root; fills adjoints for every node.
    void backward(Expr root);

    const Mat& adjoint(Expr e) const;

    int size() const { return static_cast<int>(nodes_.size()); }

    // Number of times the |x|^q derivative clamp fired during backward().
    std::uint64_t abs_pow_guard_hits() const { return abs_pow_guard_hits_; }

  private:
    struct Node {
        Op op;
        int a = -1;
        int b = -1;
        double aux = 0.0;  // abs_pow exponent
        int i0 = 0;        // slice first / repeat count / group size / reshape rows
        int i1 = 0;        // slice count / reshape cols
        bool flag = false; // solve: transpose L
    };

    Expr push(Node node, Mat value);
    void compute(int idx);
    void check(Expr e) const;

    std::vector<Node> nodes_;
    std::vector<Mat> values_;
    std::vector<Mat> adjoints_;
    std::uint64_t abs_pow_guard_hits_ = 0;
};

// Operator sugar for readable graph construction.
inline Expr operator+(Expr a, Expr b) { return a.tape->add(a, b); }
inline Expr operator-(Expr a, Expr b) { return a.tape->sub(a, b); }
inline Expr operator*(Expr a, Expr b) { return a.tape->mul(a, b); }
inline Expr operator-(Expr a) { return a.tape->neg(a); }

// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
// for a scalar-valued graph of one vector input. The graph is built once and
// re-evaluated under perturbations, so the check exercises forward() exactly
// as training does.
double finite_diff_check(
    const std::function<Expr(Tape&, Expr)>& build,
    const Eigen::VectorXd& point,
    double eps);

}  // namespace cmflow::ad
