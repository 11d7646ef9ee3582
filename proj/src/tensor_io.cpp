// Copyright 2026 the surnn authors. Apache 2.0 License.

#include "surnn/tensor_io.hpp"

#include <bit>
#include <cstdio>
#include <stdexcept>

#include "json.hpp"

namespace surnn {

static_assert(std::endian::native == std::endian::little,
              "tensor files are little-endian; big-endian hosts need swaps");

namespace {

void write_header(std::FILE* f, const std::string& dtype,
                  const std::vector<int64_t>& shape, const std::string& config_hash) {
  nlohmann::json j;
  j["dtype"] = dtype;
  j["shape"] = shape;
  if (!config_hash.empty()) j["config_hash"] = config_hash;
  const std::string line = j.dump();
  std::fwrite(line.data(), 1, line.size(), f);
  std::fputc('\n', f);
}

}  // namespace

void write_tensor(const std::string& path, const std::vector<int64_t>& shape,
                  const double* values, size_t count, const std::string& config_hash) {
  int64_t expect = 1;
  for (int64_t d : shape) expect *= d;
  if (expect != static_cast<int64_t>(count))
    throw std::invalid_argument("write_tensor: shape does not match value count");
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("write_tensor: cannot open " + path);
  write_header(f, "f64", shape, config_hash);
  std::fwrite(values, sizeof(double), count, f);
  std::fclose(f);
}

void write_tensor(const std::string& path, const Mat& m, const std::string& config_hash) {
  write_tensor(path, {m.rows, m.cols}, m.data.data(), m.data.size(), config_hash);
}

void write_tensor(const std::string& path, const Vec& v, const std::string& config_hash) {
  write_tensor(path, {static_cast<int64_t>(v.size())}, v.data(), v.size(), config_hash);
}

TensorFile read_tensor(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("read_tensor: cannot open " + path);
  std::string header;
  int c;
  while ((c = std::fgetc(f)) != EOF && c != '\n') header.push_back(static_cast<char>(c));
  if (c == EOF) {
    std::fclose(f);
    throw std::runtime_error("read_tensor: missing header line in " + path);
  }
  nlohmann::json j = nlohmann::json::parse(header, nullptr, false);
  if (j.is_discarded() || !j.contains("dtype") || !j.contains("shape")) {
    std::fclose(f);
    throw std::runtime_error("read_tensor: bad header in " + path);
  }
  TensorFile t;
  t.dtype = j["dtype"].get<std::string>();
  t.shape = j["shape"].get<std::vector<int64_t>>();
  int64_t count = 1;
  for (int64_t d : t.shape) count *= d;
  t.values.resize(count);
  size_t got = 0;
  if (t.dtype == "f64") {
    got = std::fread(t.values.data(), sizeof(double), count, f);
  } else if (t.dtype == "f32") {
    std::vector<float> tmp(count);
    got = std::fread(tmp.data(), sizeof(float), count, f);
    for (int64_t i = 0; i < count; ++i) t.values[i] = tmp[i];
  } else {
    std::fclose(f);
    throw std::runtime_error("read_tensor: unknown dtype " + t.dtype);
  }
  std::fclose(f);
  if (got != static_cast<size_t>(count))
    throw std::runtime_error("read_tensor: truncated payload in " + path);
  return t;
}

CsvWriter::CsvWriter(const std::string& path, const std::string& header,
                     const std::string& provenance) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("CsvWriter: cannot open " + path);
  if (!provenance.empty()) std::fprintf(f, "# %s\n", provenance.c_str());
  std::fprintf(f, "%s\n", header.c_str());
  out_ = f;
}

CsvWriter::~CsvWriter() {
  if (out_) std::fclose(static_cast<std::FILE*>(out_));
}

void CsvWriter::row(const std::string& line) {
  std::fprintf(static_cast<std::FILE*>(out_), "%s\n", line.c_str());
}

}  // namespace surnn
