#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

namespace ink::io {

// Little-endian encoders independent of host byte order.
class BinaryWriter {
 public:
  explicit BinaryWriter(const std::filesystem::path& path);

  void bytes(const void* data, std::size_t n);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void string(const std::string& s);
  void close();

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

// Every read throws FormatError when the file ends early.
class BinaryReader {
 public:
  explicit BinaryReader(const std::filesystem::path& path);

  void bytes(void* data, std::size_t n);
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  std::string string(std::uint32_t max_len = 1u << 16);
  std::uint64_t remaining();
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::uint64_t size_ = 0;
};

}  // namespace ink::io
