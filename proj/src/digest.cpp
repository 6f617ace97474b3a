// SPDX-License-Identifier: Apache-2.0
#include "ccrt/digest.hpp"

#include <openssl/evp.h>

#include <array>
#include <stdexcept>

namespace ccrt {

std::string sha256_hex(std::span<const unsigned char> bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int md_len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &md_len, EVP_sha256(),
                 nullptr) != 1) {
    throw std::runtime_error("sha256: EVP_Digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(md_len * 2);
  for (unsigned int i = 0; i < md_len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xf]);
  }
  return out;
}

std::string sha256_hex(const std::string& s) {
  return sha256_hex(std::span<const unsigned char>(
      reinterpret_cast<const unsigned char*>(s.data()), s.size()));
}

std::string sha256_hex(const std::vector<double>& values) {
  return sha256_hex(std::span<const unsigned char>(
      reinterpret_cast<const unsigned char*>(values.data()),
      values.size() * sizeof(double)));
}

}  // namespace ccrt
