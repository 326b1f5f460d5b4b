#include "ink/binary_io.hpp"

#include <bit>
#include <cstring>

#include "ink/error.hpp"

namespace ink::io {

BinaryWriter::BinaryWriter(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
  if (!out_) throw InputError("cannot open " + path.string() + " for writing");
}

void BinaryWriter::bytes(const void* data, std::size_t n) {
  out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out_) throw Error("write failed on " + path_.string());
}

void BinaryWriter::u32(std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  bytes(b, 4);
}

void BinaryWriter::u64(std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  bytes(b, 8);
}

void BinaryWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void BinaryWriter::string(const std::string& s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes(s.data(), s.size());
}

void BinaryWriter::close() {
  out_.flush();
  if (!out_) throw Error("flush failed on " + path_.string());
  out_.close();
}

BinaryReader::BinaryReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw InputError("cannot open " + path.string());
  in_.seekg(0, std::ios::end);
  size_ = static_cast<std::uint64_t>(in_.tellg());
  in_.seekg(0, std::ios::beg);
}

void BinaryReader::bytes(void* data, std::size_t n) {
  if (n > remaining()) throw FormatError(path_.string() + ": truncated file");
  in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (!in_) throw FormatError(path_.string() + ": truncated file");
}

std::uint32_t BinaryReader::u32() {
  unsigned char b[4];
  bytes(b, 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t BinaryReader::u64() {
  unsigned char b[8];
  bytes(b, 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

float BinaryReader::f32() { return std::bit_cast<float>(u32()); }

std::string BinaryReader::string(std::uint32_t max_len) {
  const std::uint32_t n = u32();
  if (n > max_len) throw FormatError(path_.string() + ": string length out of range");
  std::string s(n, '\0');
  bytes(s.data(), n);
  return s;
}

std::uint64_t BinaryReader::remaining() {
  const auto pos = in_.tellg();
  if (pos < 0) return 0;
  return size_ - static_cast<std::uint64_t>(pos);
}

}  // namespace ink::io
