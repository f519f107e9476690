#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace atzsl::io {

// Writes to "<path>.tmp" and renames over path, so readers never see a
// partially written file.
void write_file_atomic(const std::string& path, std::string_view bytes);
std::string read_file(const std::string& path);

// Little-endian binary encoder.
class Writer {
 public:
  void bytes(std::string_view raw) { out_.append(raw); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void str(std::string_view s);
  const std::string& buffer() const noexcept { return out_; }

 private:
  std::string out_;
};

// Little-endian binary decoder; throws DataError naming the byte offset on
// truncation.
class Reader {
 public:
  Reader(std::string_view data, std::string source) : data_(data), source_(std::move(source)) {}
  std::string_view bytes(std::size_t n);
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string str();
  std::size_t offset() const noexcept { return pos_; }
  bool at_end() const noexcept { return pos_ == data_.size(); }
  [[noreturn]] void fail(const std::string& what) const;

 private:
  std::string_view data_;
  std::string source_;
  std::size_t pos_ = 0;
};

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace atzsl::io
