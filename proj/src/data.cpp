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

#include "cmflow/data.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "cmflow/errors.hpp"
#include "cmflow/log.hpp"

namespace cmflow {

GroundTruth generate_sparse_precision(int d, double alpha, Rng& rng) {
    if (d < 2 || alpha < 0.0 || alpha >= 1.0) {
        throw ConfigError("generate_sparse_precision requires d >= 2 and alpha in [0, 1)");
    }
    Mat factor = Mat::Identity(d, d);
    for (int i = 1; i < d; ++i) {
        for (int j = 0; j < i; ++j) {
            if (rng.uniform() < 1.0 - alpha) {
                const double mag = rng.uniform(0.3, 0.9);
                factor(i, j) = rng.uniform() < 0.5 ? mag : -mag;
            }
        }
    }
    GroundTruth truth;
    truth.omega = factor * factor.transpose();
    truth.target_sparsity = alpha;
    for (int i = 0; i < d; ++i) {
        for (int j = i + 1; j < d; ++j) {
            if (truth.omega(i, j) != 0.0) {
                truth.edges.emplace_back(i, j);
            }
        }
    }
    return truth;
}

Dataset sample_gaussian(const GroundTruth& truth, int n, Rng& rng) {
    if (n < 1) {
        throw ConfigError("sample_gaussian requires n >= 1");
    }
    const int d = static_cast<int>(truth.omega.rows());
    const Eigen::LLT<Mat> llt(truth.omega);
    if (llt.info() != Eigen::Success) {
        throw NumericError("ground-truth precision matrix is not positive definite");
    }
    const Mat l = llt.matrixL();
    Mat x(n, d);
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd eps(d);
        for (int j = 0; j < d; ++j) {
            eps(j) = rng.normal();
        }
        // omega = L L^T  =>  cov = L^-T L^-1, so rows are L^-T eps.
        x.row(i) = l.triangularView<Eigen::Lower>().transpose().solve(eps).transpose();
    }
    return dataset_from_matrix(std::move(x));
}

void center_columns(Mat& x) {
    const Eigen::RowVectorXd means = x.colwise().mean();
    x.rowwise() -= means;
}

Mat scatter_matrix(const Mat& x_centered) {
    return x_centered.transpose() * x_centered;
}

Dataset dataset_from_matrix(Mat x, std::vector<std::string> columns) {
    Dataset ds;
    ds.n = static_cast<int>(x.rows());
    ds.d = static_cast<int>(x.cols());
    center_columns(x);
    ds.S = scatter_matrix(x);
    ds.X = std::move(x);
    if (columns.empty()) {
        for (int j = 0; j < ds.d; ++j) {
            columns.push_back("x" + std::to_string(j + 1));
        }
    }
    ds.columns = std::move(columns);
    return ds;
}

void partition_scatter(Dataset& ds, int s) {
    if (s < 1 || s > ds.d) {
        throw ConfigError("block size s out of range");
    }
    const int t = ds.d - s;
    ds.block_s = s;
    ds.block_t = t;
    ds.S11 = ds.S.topLeftCorner(s, s);
    ds.S12 = ds.S.topRightCorner(s, t);
    ds.S22 = ds.S.bottomRightCorner(t, t);
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        cells.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') {
        cells.emplace_back();
    }
    return cells;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return "";
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

Dataset load_csv(const std::string& path, const std::vector<std::string>& query_columns) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw IoError("empty CSV file " + path);
    }
    std::vector<std::string> header;
    for (const std::string& h : split_line(line)) {
        header.push_back(trim(h));
    }
    {
        std::set<std::string> seen;
        for (const std::string& h : header) {
            if (!seen.insert(h).second) {
                throw IoError("duplicate column name '" + h + "' in " + path);
            }
        }
    }
    const int d = static_cast<int>(header.size());

    std::vector<std::vector<double>> rows;
    int dropped = 0;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) {
            continue;
        }
        const std::vector<std::string> cells = split_line(line);
        if (static_cast<int>(cells.size()) != d) {
            throw IoError(path + ":" + std::to_string(lineno) + ": expected " +
                          std::to_string(d) + " cells, got " + std::to_string(cells.size()));
        }
        std::vector<double> row(d);
        bool missing = false;
        for (int j = 0; j < d && !missing; ++j) {
            const std::string cell = trim(cells[j]);
            if (cell.empty()) {
                missing = true;
                break;
            }
            char* end = nullptr;
            row[j] = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str() || *end != '\0') {
                throw IoError(path + ":" + std::to_string(lineno) + ": non-numeric cell '" +
                              cell + "'");
            }
        }
        if (missing) {
            ++dropped;
            continue;
        }
        rows.push_back(std::move(row));
    }
    if (dropped > 0) {
        logging::info("dropped ", dropped, " incomplete rows from ", path);
    }
    if (rows.empty()) {
        throw IoError("no complete rows in " + path);
    }

    // Column order: queries first, then the remainder in file order.
    std::vector<int> order;
    if (!query_columns.empty()) {
        std::vector<bool> is_query(d, false);
        for (const std::string& q : query_columns) {
            const auto it = std::find(header.begin(), header.end(), q);
            if (it == header.end()) {
                throw ConfigError("unknown query column '" + q + "'");
            }
            const int idx = static_cast<int>(it - header.begin());
            if (is_query[idx]) {
                throw ConfigError("query column '" + q + "' listed twice");
            }
            is_query[idx] = true;
            order.push_back(idx);
        }
        for (int j = 0; j < d; ++j) {
            if (!is_query[j]) {
                order.push_back(j);
            }
        }
    } else {
        for (int j = 0; j < d; ++j) {
            order.push_back(j);
        }
    }

    Mat x(static_cast<int>(rows.size()), d);
    std::vector<std::string> columns(d);
    for (int j = 0; j < d; ++j) {
        columns[j] = header[order[j]];
        for (std::size_t i = 0; i < rows.size(); ++i) {
            x(static_cast<int>(i), j) = rows[i][order[j]];
        }
    }
    Dataset ds = dataset_from_matrix(std::move(x), std::move(columns));
    if (!query_columns.empty()) {
        partition_scatter(ds, static_cast<int>(query_columns.size()));
    }
    return ds;
}

void write_csv(const std::string& path, const Mat& x, const std::vector<std::string>& columns) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path);
    }
    out.precision(17);
    for (std::size_t j = 0; j < columns.size(); ++j) {
        out << columns[j] << (j + 1 == columns.size() ? '\n' : ',');
    }
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            out << x(i, j) << (j + 1 == x.cols() ? '\n' : ',');
        }
    }
    if (!out) {
        throw IoError("write failed for " + path);
    }
}

}  // namespace cmflow
