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

#include <cstdint>
#include <random>
#include <string_view>

#include <Eigen/Dense>

namespace cmflow {

// Deterministic random source. All distribution mappings are implemented
// here (not via std:: distributions) so that streams are identical across
// standard libraries and platforms.
class Rng {
  public:
    explicit Rng(std::uint64_t seed);

    // Derived stream: same root seed and name always give the same stream,
    // independent of how much this instance has been consumed.
    Rng stream(std::string_view name) const;

    std::uint64_t next_u64();
    // Uniform on [0, 1).
    double uniform();
    double uniform(double lo, double hi);
    // Standard normal via Box-Muller (one value per pair of uniforms).
    double normal();
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    Eigen::MatrixXd normal_matrix(int rows, int cols);

    std::uint64_t root_seed() const { return root_seed_; }

  private:
    std::uint64_t root_seed_;
    std::mt19937_64 gen_;
};

}  // namespace cmflow
