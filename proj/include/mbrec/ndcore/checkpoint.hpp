#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mbrec/ndcore/array.hpp"

// Checkpoint container:
//   "MBRECKP1"
//   repeated until EOF:
//     u64 name length, name bytes (UTF-8)
//     u64 rank, rank x u64 extents
//     product(extents) x f64 values, row-major
// All integers and floats are little-endian.
namespace mbrec {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::array<char, 8> kCheckpointMagic = {'M', 'B', 'R', 'E', 'C', 'K', 'P', '1'};

struct NamedArray {
  std::string name;
  Array value;
};

namespace io {

inline void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

inline void write_f64(std::ostream& out, double v) { write_u64(out, std::bit_cast<std::uint64_t>(v)); }

inline void write_string(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

// Returns false on clean EOF before the first byte.
inline bool try_read_u64(std::istream& in, std::uint64_t& v) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  if (in.gcount() == 0) return false;
  if (in.gcount() != 8) throw FormatError("truncated integer");
  v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return true;
}

inline std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v;
  if (!try_read_u64(in, v)) throw FormatError("unexpected end of stream");
  return v;
}

inline double read_f64(std::istream& in) { return std::bit_cast<double>(read_u64(in)); }

inline std::string read_string(std::istream& in, std::uint64_t limit = 1u << 20) {
  const std::uint64_t n = read_u64(in);
  if (n > limit) throw FormatError("string length " + std::to_string(n) + " exceeds limit");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (static_cast<std::uint64_t>(in.gcount()) != n) throw FormatError("truncated string");
  return s;
}

}  // namespace io

inline void write_checkpoint(std::ostream& out, const std::vector<NamedArray>& records) {
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  for (const auto& rec : records) {
    io::write_string(out, rec.name);
    io::write_u64(out, rec.value.rank());
    for (std::size_t e : rec.value.shape()) io::write_u64(out, e);
    for (real x : rec.value.data()) io::write_f64(out, static_cast<double>(x));
  }
}

inline std::vector<NamedArray> read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (in.gcount() != 8 || magic != kCheckpointMagic) throw FormatError("not a checkpoint (bad magic)");
  std::vector<NamedArray> records;
  std::uint64_t name_len;
  while (io::try_read_u64(in, name_len)) {
    if (name_len > (1u << 16)) throw FormatError("implausible record name length");
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    if (static_cast<std::uint64_t>(in.gcount()) != name_len) throw FormatError("truncated record name");
    const std::uint64_t rank = io::read_u64(in);
    if (rank > 8) throw FormatError("record '" + name + "' has implausible rank");
    Shape shape(rank);
    for (auto& e : shape) e = io::read_u64(in);
    std::vector<real> data(shape_size(shape));
    for (real& x : data) x = static_cast<real>(io::read_f64(in));
    records.push_back({std::move(name), Array(std::move(shape), std::move(data))});
  }
  return records;
}

inline void save_checkpoint(const std::string& path, const std::vector<NamedArray>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  write_checkpoint(out, records);
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

inline std::vector<NamedArray> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  return read_checkpoint(in);
}

}  // namespace mbrec
