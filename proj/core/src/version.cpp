#include "nlmix/version.hpp"

namespace nlmix {

std::string_view version() { return NLMIX_VERSION; }

}  // namespace nlmix
