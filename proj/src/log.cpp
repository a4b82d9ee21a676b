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

#include "cmflow/log.hpp"

#include <cstdlib>
#include <string>

namespace cmflow::logging {

static Level parse_level() {
    const char* env = std::getenv("CMFLOW_LOG");
    if (env == nullptr) {
        return Level::kWarn;
    }
    const std::string v(env);
    if (v == "error") return Level::kError;
    if (v == "warn") return Level::kWarn;
    if (v == "info") return Level::kInfo;
    if (v == "debug") return Level::kDebug;
    return Level::kWarn;
}

Level threshold() {
    static const Level level = parse_level();
    return level;
}

}  // namespace cmflow::logging
