#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "rdns/tensor.hpp"

namespace rdns {

/// Appends little-endian records to an in-memory byte buffer.
class ByteWriter {
 public:
  void u64(std::uint64_t v);
  void f64(double v);
  void bytes(std::string_view s);
  /// Record layout: four u64 extents (N, C, H, W) then N*C*H*W f64 values.
  void tensor(const Tensor& t);
  /// u64 count followed by that many tensor records.
  void tensor_list(const std::vector<Tensor>& ts);

  const std::string& buffer() const { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

/// Reads little-endian records, reporting the byte offset of any truncation.
class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::uint64_t u64();
  double f64();
  std::string_view bytes(std::size_t count);
  Tensor tensor();
  std::vector<Tensor> tensor_list();

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  void require(std::size_t count, const char* what) const;

  std::string_view data_;
  std::size_t pos_ = 0;
};

std::string serialize_tensor(const Tensor& t);
Tensor deserialize_tensor(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace rdns
