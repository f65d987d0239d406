#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "grain_ad/error.hpp"

namespace grain_ad::binary {

// Little-endian byte buffer writer/reader for the weight and model files.

template <class T>
T byteswap_if_needed(T value) noexcept {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
    return value;
  } else {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&value, bytes, sizeof(T));
    return value;
  }
}

class Writer {
 public:
  template <class T>
  void put(T value) {
    value = byteswap_if_needed(value);
    const auto* p = reinterpret_cast<const unsigned char*>(&value);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_u8(std::uint8_t v) { put(v); }
  void put_u32(std::uint32_t v) { put(v); }
  void put_u64(std::uint64_t v) { put(v); }
  void put_f32(float v) { put(v); }
  void put_f64(double v) { put(v); }
  void put_magic(const char (&magic)[5]) { bytes_.insert(bytes_.end(), magic, magic + 4); }
  void put_string(const std::string& s) {
    put_u32(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  template <class T>
  void put_f32_array(std::span<const T> values) {
    for (T v : values) put_f32(static_cast<float>(v));
  }

  const std::vector<unsigned char>& bytes() const noexcept { return bytes_; }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes_.data()), static_cast<std::streamsize>(bytes_.size()));
    if (!out) throw Error("write failed: " + path.string());
  }

 private:
  std::vector<unsigned char> bytes_;
};

class Reader {
 public:
  explicit Reader(std::vector<unsigned char> bytes, std::string origin = "buffer")
      : bytes_(std::move(bytes)), origin_(std::move(origin)) {}

  static Reader from_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ModelLoadError("cannot open: " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return Reader(std::move(bytes), path.string());
  }

  template <class T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return byteswap_if_needed(value);
  }
  std::uint8_t get_u8() { return get<std::uint8_t>(); }
  std::uint32_t get_u32() { return get<std::uint32_t>(); }
  std::uint64_t get_u64() { return get<std::uint64_t>(); }
  float get_f32() { return get<float>(); }
  double get_f64() { return get<double>(); }
  std::string get_string() {
    const auto n = get_u32();
    need(n);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_), bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  void expect_magic(const char (&magic)[5]) {
    need(4);
    if (std::memcmp(bytes_.data() + pos_, magic, 4) != 0)
      throw ModelLoadError(origin_ + ": bad magic, expected " + std::string(magic, 4));
    pos_ += 4;
  }
  template <class T>
  void get_f32_array(std::span<T> out) {
    for (T& v : out) v = static_cast<T>(get_f32());
  }

  bool at_end() const noexcept { return pos_ == bytes_.size(); }
  const std::string& origin() const noexcept { return origin_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw ModelLoadError(origin_ + ": truncated file");
  }
  std::vector<unsigned char> bytes_;
  std::size_t pos_ = 0;
  std::string origin_;
};

}  // namespace grain_ad::binary
