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

#include <cstdio>
#include <fstream>

#include "doctest.h"

#include "cmflow/data.hpp"
#include "cmflow/errors.hpp"
#include "oracles.hpp"

using namespace cmflow;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(const std::string& name, const std::string& contents)
        : path("/tmp/cmflow_test_" + name) {
        std::ofstream out(path);
        out << contents;
    }
    ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_SUITE("data") {

TEST_CASE("sparse precision generator") {
    Rng rng(42);
    const GroundTruth truth = generate_sparse_precision(15, 0.9, rng);
    CHECK(truth.omega.rows() == 15);

    // SPD by construction.
    Eigen::LLT<Mat> llt(truth.omega);
    CHECK(llt.info() == Eigen::Success);

    // Factor products densify slightly; the realized zero fraction stays near
    // the requested level.
    int zeros = 0;
    for (int i = 0; i < 15; ++i) {
        for (int j = i + 1; j < 15; ++j) {
            zeros += truth.omega(i, j) == 0.0 ? 1 : 0;
        }
    }
    const double frac = static_cast<double>(zeros) / (15 * 14 / 2);
    CHECK(frac >= 0.8);
    CHECK(frac <= 0.98);

    // alpha -> 1 limit: no activations, diagonal truth.
    Rng rng2(7);
    const GroundTruth diag = generate_sparse_precision(6, 0.999999, rng2);
    CHECK(diag.edges.empty());
    CHECK(diag.omega.isApprox(Mat::Identity(6, 6)));

    // Reproducibility.
    Rng a(42), b(42);
    CHECK(generate_sparse_precision(15, 0.9, a).omega ==
          generate_sparse_precision(15, 0.9, b).omega);
}

TEST_CASE("gaussian sampling consistency") {
    Rng rng(3);
    const GroundTruth truth = generate_sparse_precision(4, 0.5, rng);
    const Mat cov = truth.omega.inverse();

    Rng r1(10);
    const Dataset small = sample_gaussian(truth, 1000, r1);
    Rng r2(10);
    const Dataset large = sample_gaussian(truth, 100000, r2);
    const double err_small = (small.S / small.n - cov).norm();
    const double err_large = (large.S / large.n - cov).norm();
    // Error shrinks like 1/sqrt(n): a factor 100 in n should cut it by about
    // 10; allow generous slack.
    CHECK(err_large < err_small / 3.0);
    CHECK(err_large < 0.1 * cov.norm());

    // n = 1: centering wipes a single observation, so the dataset scatter is
    // zero; the raw single-row scatter itself is rank one.
    Rng r3(11);
    const Dataset tiny = sample_gaussian(truth, 1, r3);
    CHECK(tiny.S.rows() == 4);
    CHECK(tiny.S.isZero(1e-12));

    // n = d keeps the empirical covariance invertible.
    Rng r4(12);
    const GroundTruth t15 = generate_sparse_precision(15, 0.9, r4);
    Rng r5(13);
    const Dataset nd = sample_gaussian(t15, 15, r5);
    CHECK(nd.n == nd.d);
    // Columns are centered, so X^T X has rank d-1... the paper's remark holds
    // for the uncentered covariance; here we only require a usable scatter.
    CHECK(nd.S.allFinite());
}

TEST_CASE("scatter matrix equals the naive triple loop") {
    Rng rng(5);
    Mat x = rng.normal_matrix(5, 3);
    center_columns(x);
    const Mat s = scatter_matrix(x);
    CHECK((s - oracles::naive_matmul(x.transpose(), x)).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((s - s.transpose()).cwiseAbs().maxCoeff() == 0.0);

    CHECK(scatter_matrix(Mat::Zero(4, 2)).isZero());
    Mat row(1, 3);
    row << 1.0, -2.0, 0.5;
    const Mat s1 = scatter_matrix(row);
    CHECK((s1 - row.transpose() * row).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK(Eigen::FullPivLU<Mat>(s1).rank() == 1);
}

TEST_CASE("centering is idempotent and scatters stay PSD") {
    Rng rng(8);
    Mat x = rng.normal_matrix(20, 4);
    x.array() += 3.0;
    center_columns(x);
    Mat twice = x;
    center_columns(twice);
    CHECK((x - twice).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(x.colwise().mean().cwiseAbs().maxCoeff() <= 1e-10);

    const Mat s = scatter_matrix(x);
    const Eigen::SelfAdjointEigenSolver<Mat> es(s);
    CHECK(es.eigenvalues().minCoeff() >= -1e-10);
}

TEST_CASE("csv loading") {
    TempFile f("basic.csv",
               "a,b,c\n"
               "1,2.5,3\n"
               "4,,6\n"
               "7,8,9\n");
    const Dataset ds = load_csv(f.path);
    CHECK(ds.n == 2);  // incomplete row dropped
    CHECK(ds.d == 3);
    CHECK(ds.columns == std::vector<std::string>{"a", "b", "c"});
    CHECK(ds.X.colwise().mean().cwiseAbs().maxCoeff() <= 1e-12);

    TempFile bad("bad.csv", "a,b\n1,x\n");
    CHECK_THROWS_AS((void)load_csv(bad.path), IoError);

    TempFile dup("dup.csv", "a,a\n1,2\n");
    CHECK_THROWS_AS((void)load_csv(dup.path), IoError);

    CHECK_THROWS_AS((void)load_csv(f.path, {"nope"}), ConfigError);
}

TEST_CASE("constant columns center to zero") {
    TempFile f("const.csv",
               "u,v\n"
               "5,1\n"
               "5,2\n"
               "5,4\n");
    const Dataset ds = load_csv(f.path);
    CHECK(ds.X.col(0).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("block partition tiles the scatter exactly") {
    // Paper-shaped block ingestion: 190 rows, 318 columns, 6 queries.
    Rng rng(21);
    Mat x = rng.normal_matrix(190, 318);
    std::vector<std::string> cols(318);
    for (int j = 0; j < 318; ++j) {
        cols[j] = "g" + std::to_string(j);
    }
    std::vector<std::string> queries;
    for (int j = 0; j < 6; ++j) {
        queries.push_back("g" + std::to_string(50 + j));
    }
    TempFile f("block.csv", [&] {
        std::string s;
        for (int j = 0; j < 318; ++j) {
            s += cols[j] + (j + 1 == 318 ? "\n" : ",");
        }
        for (int i = 0; i < 190; ++i) {
            for (int j = 0; j < 318; ++j) {
                s += std::to_string(x(i, j)) + (j + 1 == 318 ? "\n" : ",");
            }
        }
        return s;
    }());
    const Dataset ds = load_csv(f.path, queries);
    CHECK(ds.n == 190);
    CHECK(ds.block_s == 6);
    CHECK(ds.block_t == 312);
    CHECK(ds.S11.rows() == 6);
    CHECK(ds.S12.cols() == 312);
    CHECK(ds.S22.rows() == 312);
    CHECK(ds.columns[0] == "g50");

    Mat tiled(318, 318);
    tiled.topLeftCorner(6, 6) = ds.S11;
    tiled.topRightCorner(6, 312) = ds.S12;
    tiled.bottomLeftCorner(312, 6) = ds.S12.transpose();
    tiled.bottomRightCorner(312, 312) = ds.S22;
    CHECK((tiled - ds.S).cwiseAbs().maxCoeff() <= 1e-12);
}

}  // TEST_SUITE
