// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ccrt {

/// SHA-256 of a byte buffer as lowercase hex.
std::string sha256_hex(std::span<const unsigned char> bytes);

std::string sha256_hex(const std::string& s);

/// SHA-256 of the raw IEEE-754 bytes of a double vector (little-endian hosts).
std::string sha256_hex(const std::vector<double>& values);

}  // namespace ccrt
