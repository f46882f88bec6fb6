// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

namespace niser {

/// Version, source revision and compiler recorded at configure time.
std::string build_identifier();

}  // namespace niser
