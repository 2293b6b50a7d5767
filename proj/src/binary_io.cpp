#include "rdns/binary_io.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <limits>

#include "rdns/errors.hpp"

namespace rdns {

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::bytes(std::string_view s) { buf_.append(s); }

void ByteWriter::tensor(const Tensor& t) {
  const Shape& s = t.shape();
  u64(s.n);
  u64(s.c);
  u64(s.h);
  u64(s.w);
  buf_.reserve(buf_.size() + 8 * t.size());
  for (double v : t.data()) f64(v);
}

void ByteWriter::tensor_list(const std::vector<Tensor>& ts) {
  u64(ts.size());
  for (const Tensor& t : ts) tensor(t);
}

void ByteReader::require(std::size_t count, const char* what) const {
  if (data_.size() - pos_ < count) {
    throw ParseError(std::string("truncated input while reading ") + what, pos_);
  }
}

std::uint64_t ByteReader::u64() {
  require(8, "u64");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
  }
  pos_ += 8;
  return v;
}

double ByteReader::f64() {
  require(8, "f64");
  return std::bit_cast<double>(u64());
}

std::string_view ByteReader::bytes(std::size_t count) {
  require(count, "byte block");
  std::string_view out = data_.substr(pos_, count);
  pos_ += count;
  return out;
}

Tensor ByteReader::tensor() {
  const std::size_t start = pos_;
  Shape s;
  s.n = u64();
  s.c = u64();
  s.h = u64();
  s.w = u64();
  // Reject extents whose product cannot fit in the remaining bytes before allocating.
  const std::size_t remaining = (data_.size() - pos_) / 8;
  std::size_t count = 1;
  for (std::size_t e : {s.n, s.c, s.h, s.w}) {
    if (e != 0 && count > std::numeric_limits<std::size_t>::max() / e) {
      throw ParseError("tensor extents overflow", start);
    }
    count *= e;
  }
  if (count > remaining) {
    throw ParseError("truncated tensor payload for shape " + s.str(), pos_);
  }
  std::vector<double> values(count);
  for (double& v : values) v = f64();
  return Tensor(s, std::move(values));
}

std::vector<Tensor> ByteReader::tensor_list() {
  const std::size_t start = pos_;
  const std::uint64_t count = u64();
  // Every record is at least 32 bytes of extents.
  if (count > (data_.size() - pos_) / 32) {
    throw ParseError("tensor count " + std::to_string(count) + " exceeds input", start);
  }
  std::vector<Tensor> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) out.push_back(tensor());
  return out;
}

std::string serialize_tensor(const Tensor& t) {
  ByteWriter w;
  w.tensor(t);
  return w.take();
}

Tensor deserialize_tensor(std::string_view bytes) {
  ByteReader r(bytes);
  Tensor t = r.tensor();
  if (!r.at_end()) throw ParseError("trailing bytes after tensor record", r.offset());
  return t;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

}  // namespace rdns
