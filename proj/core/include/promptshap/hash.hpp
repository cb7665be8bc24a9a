#pragma once

#include <string>
#include <string_view>

namespace promptshap {

/// Hex-encoded SHA-256 of `data`. Used for cache keys, template hashes and
/// config hashes, where any byte-level change must produce a new digest.
std::string sha256_hex(std::string_view data);

}  // namespace promptshap
