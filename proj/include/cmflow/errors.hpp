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

#include <stdexcept>
#include <string>

namespace cmflow {

class Error : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad configuration or bad request (unknown key, out-of-range condition, ...).
class ConfigError : public Error {
  using Error::Error;
};

// Evaluation outside a primitive's domain (log of non-positive input, ...).
class DomainError : public Error {
  using Error::Error;
};

// Divergence, non-convergence, or a numeric check that cannot be satisfied.
class NumericError : public Error {
  using Error::Error;
};

class IoError : public Error {
  using Error::Error;
};

}  // namespace cmflow
