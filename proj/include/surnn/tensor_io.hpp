// Copyright 2026 the surnn authors. Apache 2.0 License.
//
// Binary tensor files: one line of JSON ({"dtype":..,"shape":..}, newline
// terminated) followed by little-endian IEEE-754 payload. Used for
// checkpoints, dataset exports and gradient dumps.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "surnn/numerics.hpp"

namespace surnn {

struct TensorFile {
  std::string dtype;           // "f64" or "f32"
  std::vector<int64_t> shape;
  std::vector<double> values;  // f32 payloads are widened on read
};

void write_tensor(const std::string& path, const std::vector<int64_t>& shape,
                  const double* values, size_t count,
                  const std::string& config_hash = "");
void write_tensor(const std::string& path, const Mat& m,
                  const std::string& config_hash = "");
void write_tensor(const std::string& path, const Vec& v,
                  const std::string& config_hash = "");

TensorFile read_tensor(const std::string& path);

// CSV sink with an optional "# key=value" provenance line before the header.
struct CsvWriter {
  explicit CsvWriter(const std::string& path, const std::string& header,
                     const std::string& provenance = "");
  ~CsvWriter();
  CsvWriter(const CsvWriter&) = delete;
  CsvWriter& operator=(const CsvWriter&) = delete;
  void row(const std::string& line);

 private:
  void* out_;  // FILE*
};

}  // namespace surnn
