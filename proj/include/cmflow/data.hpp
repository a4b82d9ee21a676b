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
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cmflow/rng.hpp"

namespace cmflow {

using Mat = Eigen::MatrixXd;

struct GroundTruth {
    Mat omega;                                   // SPD precision matrix
    std::vector<std::pair<int, int>> edges;      // (i, j) with i < j, omega_ij != 0
    double target_sparsity = 0.0;
};

struct Dataset {
    Mat X;  // centered observations, n x d
    Mat S;  // scatter X^T X
    int n = 0;
    int d = 0;
    std::vector<std::string> columns;

    // Block layout: query columns first. block_s == 0 means full mode.
    int block_s = 0;
    int block_t = 0;
    Mat S11, S12, S22;

    bool block_mode() const { return block_s > 0; }
};

// Sparse SPD ground truth from a unit-diagonal triangular factor whose
// strictly-lower entries are active with probability 1 - alpha, values
// uniform on +-[0.3, 0.9].
GroundTruth generate_sparse_precision(int d, double alpha, Rng& rng);

// Rows drawn from N(0, omega^-1) by triangular solve against the Cholesky
// factor of omega; columns centered afterwards.
Dataset sample_gaussian(const GroundTruth& truth, int n, Rng& rng);

// In-place column centering (subtract column means).
void center_columns(Mat& x);

// S = X^T X for centered X.
Mat scatter_matrix(const Mat& x_centered);

// Wraps a raw observation matrix: centers and builds the scatter.
Dataset dataset_from_matrix(Mat x, std::vector<std::string> columns = {});

// Computes the S11/S12/S22 partition for the first s columns.
void partition_scatter(Dataset& ds, int s);

// Numeric CSV with a mandatory header row. Rows containing empty cells are
// dropped. If query columns are given, columns are reordered (queries first)
// and the block partition is computed.
Dataset load_csv(const std::string& path,
                 const std::vector<std::string>& query_columns = {});

void write_csv(const std::string& path, const Mat& x,
               const std::vector<std::string>& columns);

}  // namespace cmflow
