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

#include "cmflow/tape.hpp"

#include <cmath>
#include <string>

namespace cmflow::ad {

namespace detail {

void check_broadcast(const Mat& a, const Mat& b, const char* what) {
    const Eigen::Index rows = std::max(a.rows(), b.rows());
    const Eigen::Index cols = std::max(a.cols(), b.cols());
    auto ok = [rows, cols](const Mat& m) {
        if (m.rows() == rows && m.cols() == cols) return true;
        if (m.rows() == 1 && m.cols() == 1) return true;
        if (m.rows() == rows && m.cols() == 1) return true;
        return false;
    };
    if (!ok(a) || !ok(b)) {
        throw DomainError(std::string(what) + ": incompatible shapes " +
                          std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " vs " +
                          std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
}

void reduce_onto(Mat& acc, const Mat& grad) {
    if (acc.rows() == grad.rows() && acc.cols() == grad.cols()) {
        acc += grad;
    } else if (acc.rows() == 1 && acc.cols() == 1) {
        acc(0, 0) += grad.sum();
    } else {
        acc += grad.rowwise().sum();
    }
}

Mat repeat_rows_mat(const Mat& a, int times) {
    Mat out(a.rows() * times, a.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (int j = 0; j < times; ++j) {
            out.row(i * times + j) = a.row(i);
        }
    }
    return out;
}

Mat group_sum_rows_mat(const Mat& a, int group) {
    if (group <= 0 || a.rows() % group != 0) {
        throw DomainError("group_sum_rows group mismatch");
    }
    const Eigen::Index groups = a.rows() / group;
    Mat out = Mat::Zero(groups, a.cols());
    for (Eigen::Index i = 0; i < groups; ++i) {
        for (int j = 0; j < group; ++j) {
            out.row(i) += a.row(i * group + j);
        }
    }
    return out;
}

Mat group_softmax_rows_mat(const Mat& a, int group) {
    if (group <= 0 || a.rows() % group != 0) {
        throw DomainError("group_softmax_rows group mismatch");
    }
    Mat out(a.rows(), a.cols());
    const Eigen::Index groups = a.rows() / group;
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
        for (Eigen::Index i = 0; i < groups; ++i) {
            double m = a(i * group, c);
            for (int j = 1; j < group; ++j) m = std::max(m, a(i * group + j, c));
            double z = 0.0;
            for (int j = 0; j < group; ++j) {
                const double e = std::exp(a(i * group + j, c) - m);
                out(i * group + j, c) = e;
                z += e;
            }
            for (int j = 0; j < group; ++j) out(i * group + j, c) /= z;
        }
    }
    return out;
}

}  // namespace detail

namespace {

using detail::ew_binary;
inline double sigmoid_stable(double x) { return detail::sigmoid(x); }
inline double softplus_stable(double x) { return detail::softplus(x); }

}  // namespace

Expr Tape::push(Node node, Mat value) {
    nodes_.push_back(node);
    values_.push_back(std::move(value));
    return Expr{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::check(Expr e) const {
    if (e.tape != this || e.id < 0 || e.id >= size()) {
        throw DomainError("expression does not belong to this tape");
    }
}

Expr Tape::constant(Mat value) {
    return push(Node{Op::kConstant}, std::move(value));
}

Expr Tape::scalar(double value) {
    Mat m(1, 1);
    m(0, 0) = value;
    return push(Node{Op::kConstant}, std::move(m));
}

Expr Tape::input(Mat value) {
    return push(Node{Op::kInput}, std::move(value));
}

void Tape::set_input(Expr leaf, const Mat& value) {
    check(leaf);
    const Op op = nodes_[leaf.id].op;
    if (op != Op::kInput && op != Op::kConstant) {
        throw DomainError("set_input target is not a leaf");
    }
    if (values_[leaf.id].rows() != value.rows() || values_[leaf.id].cols() != value.cols()) {
        throw DomainError("set_input shape mismatch");
    }
    values_[leaf.id] = value;
}

#define CMFLOW_BINARY(name, opcode)                         \
    Expr Tape::name(Expr a, Expr b) {                       \
        check(a);                                           \
        check(b);                                           \
        Node n{Op::opcode};                                 \
        n.a = a.id;                                         \
        n.b = b.id;                                         \
        Expr e = push(n, Mat());                            \
        compute(e.id);                                      \
        return e;                                           \
    }

CMFLOW_BINARY(add, kAdd)
CMFLOW_BINARY(sub, kSub)
CMFLOW_BINARY(mul, kMul)
CMFLOW_BINARY(matmul, kMatMul)
#undef CMFLOW_BINARY

#define CMFLOW_UNARY(name, opcode)    \
    Expr Tape::name(Expr a) {         \
        check(a);                     \
        Node n{Op::opcode};           \
        n.a = a.id;                   \
        Expr e = push(n, Mat());      \
        compute(e.id);                \
        return e;                     \
    }

CMFLOW_UNARY(neg, kNeg)
CMFLOW_UNARY(reciprocal, kReciprocal)
CMFLOW_UNARY(exp, kExp)
CMFLOW_UNARY(log, kLog)
CMFLOW_UNARY(sigmoid, kSigmoid)
CMFLOW_UNARY(softplus, kSoftplus)
CMFLOW_UNARY(sum, kSum)
CMFLOW_UNARY(transpose, kTranspose)
CMFLOW_UNARY(trace, kTrace)
#undef CMFLOW_UNARY

Expr Tape::abs_pow(Expr a, double exponent) {
    check(a);
    if (!(exponent > 0.0)) {
        throw DomainError("abs_pow exponent must be positive");
    }
    Node n{Op::kAbsPow};
    n.a = a.id;
    n.aux = exponent;
    Expr e = push(n, Mat());
    compute(e.id);
    return e;
}

Expr Tape::reshape(Expr a, int rows, int cols) {
    check(a);
    Node n{Op::kReshape};
    n.a = a.id;
    n.i0 = rows;
    n.i1 = cols;
    Expr e = push(n, Mat());
    compute(e.id);
    return e;
}

Expr Tape::solve_lower(Expr l, Expr b, bool transpose_l) {
    check(l);
    check(b);
    Node n{Op::kSolveTriLower};
    n.a = l.id;
    n.b = b.id;
    n.flag = transpose_l;
    Expr e = push(n, Mat());
    compute(e.id);
    return e;
}

Expr Tape::slice_rows(Expr a, int first, int count) {
    check(a);
    Node n{Op::kSliceRows};
    n.a = a.id;
    n.i0 = first;
    n.i1 = count;
    Expr e = push(n, Mat());
    compute(e.id);
    return e;
}

Expr Tape::slice_cols(Expr a, int first, int count) {
    check(a);
    Node n{Op::kSliceCols};
    n.a = a.id;
    n.i0 = first;
    n.i1 = count;
    Expr e = push(n, Mat());
    compute(e.id);
    return e;
}

Expr Tape::repeat_rows(Expr a, int times) {
    check(a);
    Node n{Op::kRepeatRows};
    n.a = a.id;
    n.i0 = times;
    Expr e = push(n, Mat());
    compute(e.id);
    return e;
}

Expr Tape::group_sum_rows(Expr a, int group) {
    check(a);
    Node n{Op::kGroupSumRows};
    n.a = a.id;
    n.i0 = group;
    Expr e = push(n, Mat());
    compute(e.id);
    return e;
}

Expr Tape::group_softmax_rows(Expr a, int group) {
    check(a);
    Node n{Op::kGroupSoftmaxRows};
    n.a = a.id;
    n.i0 = group;
    Expr e = push(n, Mat());
    compute(e.id);
    return e;
}

const Mat& Tape::value(Expr e) const {
    check(e);
    return values_[e.id];
}

double Tape::scalar_value(Expr e) const {
    const Mat& v = value(e);
    if (v.size() != 1) {
        throw DomainError("scalar_value on non-scalar node");
    }
    return v(0, 0);
}

void Tape::compute(int idx) {
    const Node& n = nodes_[idx];
    auto A = [&]() -> const Mat& { return values_[n.a]; };
    auto B = [&]() -> const Mat& { return values_[n.b]; };
    Mat& out = values_[idx];
    switch (n.op) {
        case Op::kConstant:
        case Op::kInput:
            break;
        case Op::kAdd:
            detail::check_broadcast(A(), B(), "add");
            out = ew_binary(A(), B(), [](double x, double y) { return x + y; });
            break;
        case Op::kSub:
            detail::check_broadcast(A(), B(), "sub");
            out = ew_binary(A(), B(), [](double x, double y) { return x - y; });
            break;
        case Op::kMul:
            detail::check_broadcast(A(), B(), "mul");
            out = ew_binary(A(), B(), [](double x, double y) { return x * y; });
            break;
        case Op::kNeg:
            out = -A();
            break;
        case Op::kReciprocal:
            if ((A().array() <= 0.0).any()) {
                throw DomainError("reciprocal of non-positive value");
            }
            out = A().array().inverse().matrix();
            break;
        case Op::kExp:
            out = A().array().exp().matrix();
            break;
        case Op::kLog:
            if ((A().array() <= 0.0).any()) {
                throw DomainError("log of non-positive value");
            }
            out = A().array().log().matrix();
            break;
        case Op::kSigmoid:
            out = A().unaryExpr([](double x) { return sigmoid_stable(x); });
            break;
        case Op::kSoftplus:
            out = A().unaryExpr([](double x) { return softplus_stable(x); });
            break;
        case Op::kAbsPow: {
            const double q = n.aux;
            out = A().unaryExpr([q](double x) { return std::pow(std::abs(x), q); });
            break;
        }
        case Op::kSum: {
            Mat m(1, 1);
            m(0, 0) = A().sum();
            out = m;
            break;
        }
        case Op::kMatMul:
            if (A().cols() != B().rows()) {
                throw DomainError("matmul shape mismatch");
            }
            out = A() * B();
            break;
        case Op::kTranspose:
            out = A().transpose();
            break;
        case Op::kReshape: {
            if (A().size() != static_cast<Eigen::Index>(n.i0) * n.i1) {
                throw DomainError("reshape size mismatch");
            }
            out = Eigen::Map<const Mat>(A().data(), n.i0, n.i1);
            break;
        }
        case Op::kTrace: {
            if (A().rows() != A().cols()) {
                throw DomainError("trace of non-square matrix");
            }
            Mat m(1, 1);
            m(0, 0) = A().trace();
            out = m;
            break;
        }
        case Op::kSolveTriLower: {
            const Mat& l = A();
            if (l.rows() != l.cols() || l.rows() != B().rows()) {
                throw DomainError("triangular solve shape mismatch");
            }
            if (n.flag) {
                out = l.triangularView<Eigen::Lower>().transpose().solve(B());
            } else {
                out = l.triangularView<Eigen::Lower>().solve(B());
            }
            break;
        }
        case Op::kSliceRows:
            if (n.i0 < 0 || n.i0 + n.i1 > A().rows()) {
                throw DomainError("slice_rows out of range");
            }
            out = A().middleRows(n.i0, n.i1);
            break;
        case Op::kSliceCols:
            if (n.i0 < 0 || n.i0 + n.i1 > A().cols()) {
                throw DomainError("slice_cols out of range");
            }
            out = A().middleCols(n.i0, n.i1);
            break;
        case Op::kRepeatRows:
            out = detail::repeat_rows_mat(A(), n.i0);
            break;
        case Op::kGroupSumRows:
            out = detail::group_sum_rows_mat(A(), n.i0);
            break;
        case Op::kGroupSoftmaxRows:
            out = detail::group_softmax_rows_mat(A(), n.i0);
            break;
    }
}

void Tape::forward() {
    for (int i = 0; i < size(); ++i) {
        compute(i);
    }
}

void Tape::backward(Expr root) {
    check(root);
    if (values_[root.id].size() != 1) {
        throw DomainError("backward root must be scalar");
    }
    adjoints_.assign(values_.size(), Mat());
    for (std::size_t i = 0; i < values_.size(); ++i) {
        adjoints_[i] = Mat::Zero(values_[i].rows(), values_[i].cols());
    }
    adjoints_[root.id](0, 0) = 1.0;

    for (int idx = root.id; idx >= 0; --idx) {
        const Node& n = nodes_[idx];
        const Mat& g = adjoints_[idx];
        if (n.op == Op::kConstant || n.op == Op::kInput) {
            continue;
        }
        if (g.isZero(0.0)) {
            continue;
        }
        const Mat& va = values_[n.a];
        switch (n.op) {
            case Op::kAdd:
                detail::reduce_onto(adjoints_[n.a], g);
                detail::reduce_onto(adjoints_[n.b], g);
                break;
            case Op::kSub:
                detail::reduce_onto(adjoints_[n.a], g);
                detail::reduce_onto(adjoints_[n.b], Mat(-g));
                break;
            case Op::kMul: {
                const Mat& vb = values_[n.b];
                detail::reduce_onto(adjoints_[n.a],
                                    ew_binary(g, vb, [](double x, double y) { return x * y; }));
                detail::reduce_onto(adjoints_[n.b],
                                    ew_binary(g, va, [](double x, double y) { return x * y; }));
                break;
            }
            case Op::kNeg:
                adjoints_[n.a] -= g;
                break;
            case Op::kReciprocal: {
                const Mat& y = values_[idx];
                adjoints_[n.a].array() -= g.array() * y.array() * y.array();
                break;
            }
            case Op::kExp:
                adjoints_[n.a].array() += g.array() * values_[idx].array();
                break;
            case Op::kLog:
                adjoints_[n.a].array() += g.array() / va.array();
                break;
            case Op::kSigmoid: {
                const Mat& y = values_[idx];
                adjoints_[n.a].array() += g.array() * y.array() * (1.0 - y.array());
                break;
            }
            case Op::kSoftplus:
                adjoints_[n.a] +=
                    ew_binary(g, va, [](double gg, double x) { return gg * sigmoid_stable(x); });
                break;
            case Op::kAbsPow: {
                const double q = n.aux;
                Mat& acc = adjoints_[n.a];
                for (Eigen::Index j = 0; j < va.cols(); ++j) {
                    for (Eigen::Index i = 0; i < va.rows(); ++i) {
                        const double x = va(i, j);
                        if (x == 0.0) {
                            // sign(0) = 0; the clamped rule still yields 0.
                            ++abs_pow_guard_hits_;
                            continue;
                        }
                        double ax = std::abs(x);
                        if (ax < kAbsPowClamp) {
                            ax = kAbsPowClamp;
                            ++abs_pow_guard_hits_;
                        }
                        const double s = x > 0.0 ? 1.0 : -1.0;
                        acc(i, j) += g(i, j) * q * std::pow(ax, q - 1.0) * s;
                    }
                }
                break;
            }
            case Op::kSum:
                adjoints_[n.a].array() += g(0, 0);
                break;
            case Op::kMatMul: {
                const Mat& vb = values_[n.b];
                adjoints_[n.a] += g * vb.transpose();
                adjoints_[n.b] += va.transpose() * g;
                break;
            }
            case Op::kTranspose:
                adjoints_[n.a] += g.transpose();
                break;
            case Op::kReshape:
                adjoints_[n.a] +=
                    Eigen::Map<const Mat>(g.data(), va.rows(), va.cols());
                break;
            case Op::kTrace:
                adjoints_[n.a] += g(0, 0) * Mat::Identity(va.rows(), va.cols());
                break;
            case Op::kSolveTriLower: {
                const Mat& l = va;
                const Mat& x = values_[idx];
                if (!n.flag) {
                    // x = L^-1 b: bbar = L^-T gbar, Lbar = -bbar x^T (lower part).
                    const Mat w = l.triangularView<Eigen::Lower>().transpose().solve(g);
                    adjoints_[n.b] += w;
                    Mat lg = -(w * x.transpose());
                    adjoints_[n.a] += lg.triangularView<Eigen::Lower>().toDenseMatrix();
                } else {
                    // x = L^-T b: bbar = L^-1 gbar, Lbar = -x bbar^T (lower part).
                    const Mat w = l.triangularView<Eigen::Lower>().solve(g);
                    adjoints_[n.b] += w;
                    Mat lg = -(x * w.transpose());
                    adjoints_[n.a] += lg.triangularView<Eigen::Lower>().toDenseMatrix();
                }
                break;
            }
            case Op::kSliceRows:
                adjoints_[n.a].middleRows(n.i0, n.i1) += g;
                break;
            case Op::kSliceCols:
                adjoints_[n.a].middleCols(n.i0, n.i1) += g;
                break;
            case Op::kRepeatRows: {
                const int k = n.i0;
                Mat& acc = adjoints_[n.a];
                for (Eigen::Index i = 0; i < acc.rows(); ++i) {
                    for (int j = 0; j < k; ++j) {
                        acc.row(i) += g.row(i * k + j);
                    }
                }
                break;
            }
            case Op::kGroupSumRows: {
                const int gsz = n.i0;
                Mat& acc = adjoints_[n.a];
                const Eigen::Index groups = g.rows();
                for (Eigen::Index i = 0; i < groups; ++i) {
                    for (int j = 0; j < gsz; ++j) {
                        acc.row(i * gsz + j) += g.row(i);
                    }
                }
                break;
            }
            case Op::kGroupSoftmaxRows: {
                const int gsz = n.i0;
                const Mat& y = values_[idx];
                Mat& acc = adjoints_[n.a];
                const Eigen::Index groups = y.rows() / gsz;
                for (Eigen::Index c = 0; c < y.cols(); ++c) {
                    for (Eigen::Index i = 0; i < groups; ++i) {
                        double dot = 0.0;
                        for (int j = 0; j < gsz; ++j) {
                            dot += g(i * gsz + j, c) * y(i * gsz + j, c);
                        }
                        for (int j = 0; j < gsz; ++j) {
                            acc(i * gsz + j, c) +=
                                y(i * gsz + j, c) * (g(i * gsz + j, c) - dot);
                        }
                    }
                }
                break;
            }
            case Op::kConstant:
            case Op::kInput:
                break;
        }
    }
}

const Mat& Tape::adjoint(Expr e) const {
    check(e);
    if (adjoints_.size() != values_.size()) {
        throw DomainError("adjoint requested before backward()");
    }
    return adjoints_[e.id];
}

double finite_diff_check(
    const std::function<Expr(Tape&, Expr)>& build,
    const Eigen::VectorXd& point,
    double eps) {
    Tape tape;
    Expr x = tape.input(point);
    Expr y = build(tape, x);
    tape.backward(y);
    const Mat analytic = tape.adjoint(x);

    double worst = 0.0;
    Eigen::VectorXd p = point;
    for (Eigen::Index i = 0; i < point.size(); ++i) {
        p(i) = point(i) + eps;
        tape.set_input(x, p);
        tape.forward();
        const double fp = tape.scalar_value(y);
        p(i) = point(i) - eps;
        tape.set_input(x, p);
        tape.forward();
        const double fm = tape.scalar_value(y);
        p(i) = point(i);
        const double fd = (fp - fm) / (2.0 * eps);
        const double err = std::abs(analytic(i, 0) - fd) / std::max(1.0, std::abs(analytic(i, 0)));
        worst = std::max(worst, err);
    }
    tape.set_input(x, point);
    tape.forward();
    return worst;
}

}  // namespace cmflow::ad
