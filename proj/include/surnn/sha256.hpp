// Copyright 2026 the surnn authors. Apache 2.0 License.
//
// Minimal SHA-256 (FIPS 180-4) for dataset and config fingerprints.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace surnn {

struct Sha256 {
  Sha256();
  void update(const void* data, size_t len);
  // Hex digest; the object is finalized and must not be updated again.
  std::string hex();

 private:
  void process(const uint8_t* block);
  uint32_t state_[8];
  uint64_t total_ = 0;
  uint8_t buf_[64];
  size_t buf_len_ = 0;
  bool done_ = false;
};

std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& s);
std::string sha256_file(const std::string& path);

}  // namespace surnn
