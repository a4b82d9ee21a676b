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

#include <iostream>
#include <sstream>

namespace cmflow::logging {

enum class Level { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

// Threshold comes from the CMFLOW_LOG environment variable
// (error|warn|info|debug); default is warn.
Level threshold();

template <class... Ts>
void emit(Level level, Ts&&... parts) {
    if (level > threshold()) {
        return;
    }
    std::ostringstream os;
    (os << ... << parts);
    std::cerr << "[cmflow] " << os.str() << '\n';
}

template <class... Ts> void error(Ts&&... p) { emit(Level::kError, std::forward<Ts>(p)...); }
template <class... Ts> void warn(Ts&&... p) { emit(Level::kWarn, std::forward<Ts>(p)...); }
template <class... Ts> void info(Ts&&... p) { emit(Level::kInfo, std::forward<Ts>(p)...); }
template <class... Ts> void debug(Ts&&... p) { emit(Level::kDebug, std::forward<Ts>(p)...); }

}  // namespace cmflow::logging
