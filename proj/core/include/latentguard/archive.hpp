#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace lg {

// Binary tensor archive ("LGE1"). Layout, all integers little-endian:
//   magic "LGE1" | u32 entry count | entries...
// entry: u16 key length | key bytes | u8 dtype (0=f32, 1=f64) | u8 ndim |
//        ndim x u32 dims | raw payload.
// Keys are unique. Parse failures report the byte offset they were detected at.

enum class Dtype : std::uint8_t { f32 = 0, f64 = 1 };

struct ArchiveEntry {
  Dtype dtype = Dtype::f64;
  std::vector<std::uint32_t> dims;
  std::vector<float> f32;
  std::vector<double> f64;

  std::uint64_t numel() const {
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }

  static ArchiveEntry from_f32(std::vector<std::uint32_t> dims, std::vector<float> data);
  static ArchiveEntry from_f64(std::vector<std::uint32_t> dims, std::vector<double> data);

  // Reads the payload as doubles regardless of stored dtype.
  std::vector<double> as_f64() const;
};

using Archive = std::map<std::string, ArchiveEntry>;

std::vector<std::uint8_t> serialize_archive(const Archive& a);
Archive parse_archive(const std::vector<std::uint8_t>& bytes);

void write_archive(const std::string& path, const Archive& a);
Archive read_archive(const std::string& path);

// Text payloads (config JSON, name tables) ride along as f64 character codes.
ArchiveEntry text_entry(const std::string& text);
std::string entry_text(const ArchiveEntry& e);

}  // namespace lg
