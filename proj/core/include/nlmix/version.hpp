#pragma once

#include <string_view>

namespace nlmix {

/// Library version, e.g. "0.3.0".
std::string_view version();

}  // namespace nlmix
