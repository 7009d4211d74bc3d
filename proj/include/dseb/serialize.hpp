#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dseb/adam.hpp"
#include "dseb/tensor.hpp"

namespace dseb {

namespace io {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff),
               static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) throw std::runtime_error("truncated stream");
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  char b[8];
  for (int i = 0; i < 8; ++i)
    b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(b, 8);
}

inline double get_f64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (in.gcount() != 8) throw std::runtime_error("truncated stream");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i)
    bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

inline void put_f32(std::ostream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

inline float get_f32(std::istream& in) {
  const std::uint32_t bits = get_u32(in);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in) {
  const std::uint32_t len = get_u32(in);
  std::string s(len, '\0');
  in.read(s.data(), len);
  if (in.gcount() != static_cast<std::streamsize>(len))
    throw std::runtime_error("truncated stream");
  return s;
}

}  // namespace io

// ---- parameter checkpoints (magic "DSEB1") ----------------------------------
// Layout per parameter: name length (u32 LE) + UTF-8 name + rank (u32 LE) +
// dims (u32 LE each) + values (f64 LE). Parameters follow sorted-name order
// (std::map iteration), read until EOF.

inline void write_checkpoint(std::ostream& out, const ParamSet& params) {
  out.write("DSEB1", 5);
  for (const auto& [name, tensor] : params) {
    io::put_string(out, name);
    io::put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape())
      io::put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : tensor.raw()) io::put_f64(out, v);
  }
}

inline ParamSet read_checkpoint(std::istream& in) {
  char magic[5];
  in.read(magic, 5);
  if (in.gcount() != 5 || std::strncmp(magic, "DSEB1", 5) != 0)
    throw std::runtime_error("bad checkpoint magic");
  ParamSet params;
  while (in.peek() != EOF) {
    const std::string name = io::get_string(in);
    const std::uint32_t rank = io::get_u32(in);
    std::vector<std::size_t> shape(rank);
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      shape[i] = io::get_u32(in);
      count *= shape[i];
    }
    std::vector<double> data(count);
    for (std::size_t i = 0; i < count; ++i) data[i] = io::get_f64(in);
    params[name] = Tensor(std::move(shape), std::move(data));
  }
  return params;
}

inline void save_checkpoint(const std::string& path, const ParamSet& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  write_checkpoint(out, params);
}

inline ParamSet load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  return read_checkpoint(in);
}

// ---- embedding files (magic "DSEMB1") ---------------------------------------
// Header: magic + count (u32 LE) + dim (u32 LE) + branch tag (u8: 0 full,
// 1 demo, 2 residual). Rows: id length (u32 LE) + id + dim f32 LE values.

enum class EmbeddingBranch : std::uint8_t { full = 0, demo = 1, residual = 2 };

inline const char* to_string(EmbeddingBranch b) {
  switch (b) {
    case EmbeddingBranch::full: return "full";
    case EmbeddingBranch::demo: return "demo";
    default: return "residual";
  }
}

inline EmbeddingBranch branch_from_string(const std::string& s) {
  if (s == "full") return EmbeddingBranch::full;
  if (s == "demo") return EmbeddingBranch::demo;
  if (s == "residual") return EmbeddingBranch::residual;
  throw std::invalid_argument("unknown branch '" + s +
                              "' (expected full|demo|residual)");
}

struct EmbeddingsFile {
  EmbeddingBranch branch = EmbeddingBranch::full;
  std::vector<std::string> ids;
  std::vector<std::vector<double>> rows;  // stored at f32 precision

  std::size_t dim() const { return rows.empty() ? 0 : rows[0].size(); }
};

inline void write_embeddings(std::ostream& out, const EmbeddingsFile& file) {
  out.write("DSEMB1", 6);
  io::put_u32(out, static_cast<std::uint32_t>(file.rows.size()));
  io::put_u32(out, static_cast<std::uint32_t>(file.dim()));
  const char tag = static_cast<char>(file.branch);
  out.write(&tag, 1);
  for (std::size_t i = 0; i < file.rows.size(); ++i) {
    io::put_string(out, file.ids[i]);
    for (double v : file.rows[i]) io::put_f32(out, static_cast<float>(v));
  }
}

inline EmbeddingsFile read_embeddings(std::istream& in) {
  char magic[6];
  in.read(magic, 6);
  if (in.gcount() != 6 || std::strncmp(magic, "DSEMB1", 6) != 0)
    throw std::runtime_error("bad embeddings magic");
  const std::uint32_t count = io::get_u32(in);
  const std::uint32_t dim = io::get_u32(in);
  char tag;
  in.read(&tag, 1);
  if (in.gcount() != 1) throw std::runtime_error("truncated stream");
  EmbeddingsFile file;
  file.branch = static_cast<EmbeddingBranch>(tag);
  file.ids.reserve(count);
  file.rows.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    file.ids.push_back(io::get_string(in));
    std::vector<double> row(dim);
    for (std::uint32_t d = 0; d < dim; ++d)
      row[d] = static_cast<double>(io::get_f32(in));
    file.rows.push_back(std::move(row));
  }
  return file;
}

inline void save_embeddings(const std::string& path,
                            const EmbeddingsFile& file) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write embeddings: " + path);
  write_embeddings(out, file);
}

inline EmbeddingsFile load_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open embeddings: " + path);
  return read_embeddings(in);
}

// ---- cached feature matrices -------------------------------------------------

inline void save_feature_matrix(const std::string& path, const Tensor& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write feature cache: " + path);
  out.write("DSFM1", 5);
  io::put_u32(out, static_cast<std::uint32_t>(m.rows()));
  io::put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (double v : m.raw()) io::put_f64(out, v);
}

inline Tensor load_feature_matrix(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open feature cache: " + path);
  char magic[5];
  in.read(magic, 5);
  if (in.gcount() != 5 || std::strncmp(magic, "DSFM1", 5) != 0)
    throw std::runtime_error("bad feature cache magic");
  const std::uint32_t rows = io::get_u32(in);
  const std::uint32_t cols = io::get_u32(in);
  std::vector<double> data(static_cast<std::size_t>(rows) * cols);
  for (double& v : data) v = io::get_f64(in);
  return Tensor::matrix(rows, cols, std::move(data));
}

}  // namespace dseb
