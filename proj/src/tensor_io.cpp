#include <bit>
#include <cstring>
#include <fstream>

#include "mmprompt/tensor.hpp"

namespace mmprompt {

static_assert(std::endian::native == std::endian::little,
              "tensor files are little-endian; big-endian hosts need a byte-swapping path");

std::string_view dtype_name(DType t) {
  switch (t) {
    case DType::F64: return "f64";
    case DType::F32: return "f32";
    case DType::I32: return "i32";
  }
  return "f64";
}

DType parse_dtype(std::string_view name) {
  if (name == "f64") return DType::F64;
  if (name == "f32") return DType::F32;
  if (name == "i32") return DType::I32;
  throw DataError(DataError::Kind::Malformed, "unknown dtype '" + std::string(name) + "'");
}

std::size_t dtype_size(DType t) { return t == DType::F64 ? 8 : 4; }

namespace {

void write_bytes(const std::filesystem::path& path, const void* data, std::size_t n) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(DataError::Kind::MissingFile, "cannot open for writing: " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw DataError(DataError::Kind::Malformed, "write failed: " + path.string());
}

std::vector<char> read_bytes(const std::filesystem::path& path, std::size_t expected) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw DataError(DataError::Kind::MissingFile, "missing tensor file: " + path.string());
  }
  const auto size = std::filesystem::file_size(path, ec);
  if (ec || size != expected) {
    throw DataError(DataError::Kind::ShapeMismatch,
                    "tensor file " + path.string() + " has " + std::to_string(size) +
                        " bytes, manifest implies " + std::to_string(expected));
  }
  std::vector<char> buf(expected);
  std::ifstream in(path, std::ios::binary);
  in.read(buf.data(), static_cast<std::streamsize>(expected));
  if (!in) throw DataError(DataError::Kind::Malformed, "read failed: " + path.string());
  return buf;
}

}  // namespace

void write_tensor_file(const std::filesystem::path& path, const Matrix& m, DType dtype) {
  const auto n = static_cast<std::size_t>(m.size());
  switch (dtype) {
    case DType::F64:
      write_bytes(path, m.data(), n * sizeof(double));
      break;
    case DType::F32: {
      std::vector<float> tmp(m.data(), m.data() + n);
      write_bytes(path, tmp.data(), n * sizeof(float));
      break;
    }
    case DType::I32: {
      std::vector<std::int32_t> tmp(n);
      for (std::size_t i = 0; i < n; ++i) tmp[i] = static_cast<std::int32_t>(m.data()[i]);
      write_bytes(path, tmp.data(), n * sizeof(std::int32_t));
      break;
    }
  }
}

void write_int_file(const std::filesystem::path& path, const std::vector<std::int32_t>& values) {
  write_bytes(path, values.data(), values.size() * sizeof(std::int32_t));
}

Matrix read_tensor_file(const std::filesystem::path& path, Index rows, Index cols, DType dtype) {
  const auto n = static_cast<std::size_t>(rows * cols);
  const auto buf = read_bytes(path, n * dtype_size(dtype));
  Matrix m(rows, cols);
  switch (dtype) {
    case DType::F64:
      std::memcpy(m.data(), buf.data(), buf.size());
      break;
    case DType::F32:
      for (std::size_t i = 0; i < n; ++i) {
        float v;
        std::memcpy(&v, buf.data() + i * sizeof(float), sizeof(float));
        m.data()[i] = v;
      }
      break;
    case DType::I32:
      for (std::size_t i = 0; i < n; ++i) {
        std::int32_t v;
        std::memcpy(&v, buf.data() + i * sizeof(v), sizeof(v));
        m.data()[i] = v;
      }
      break;
  }
  if (!m.allFinite()) {
    throw DataError(DataError::Kind::Malformed, "non-finite values in " + path.string());
  }
  return m;
}

std::vector<std::int32_t> read_int_file(const std::filesystem::path& path, std::size_t count) {
  const auto buf = read_bytes(path, count * sizeof(std::int32_t));
  std::vector<std::int32_t> out(count);
  std::memcpy(out.data(), buf.data(), buf.size());
  return out;
}

}  // namespace mmprompt
