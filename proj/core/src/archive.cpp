#include "latentguard/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace lg {

namespace {

constexpr char kMagic[4] = {'L', 'G', 'E', '1'};

[[noreturn]] void parse_fail(std::size_t offset, const std::string& what) {
  throw std::runtime_error("archive parse error at offset " + std::to_string(offset) + ": " + what);
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(std::uint8_t(v & 0xff));
  out.push_back(std::uint8_t(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t((v >> (8 * i)) & 0xff));
}

struct Reader {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) {
    if (pos + n > bytes.size()) parse_fail(pos, std::string("truncated ") + what);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return bytes[pos++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = std::uint16_t(bytes[pos]) | std::uint16_t(bytes[pos + 1]) << 8;
    pos += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
};

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put_scalar_le(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

template <typename T>
T get_scalar_le(const std::uint8_t* p) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace

ArchiveEntry ArchiveEntry::from_f32(std::vector<std::uint32_t> dims, std::vector<float> data) {
  ArchiveEntry e;
  e.dtype = Dtype::f32;
  e.dims = std::move(dims);
  e.f32 = std::move(data);
  if (e.numel() != e.f32.size()) throw std::invalid_argument("archive entry payload does not match dims");
  return e;
}

ArchiveEntry ArchiveEntry::from_f64(std::vector<std::uint32_t> dims, std::vector<double> data) {
  ArchiveEntry e;
  e.dtype = Dtype::f64;
  e.dims = std::move(dims);
  e.f64 = std::move(data);
  if (e.numel() != e.f64.size()) throw std::invalid_argument("archive entry payload does not match dims");
  return e;
}

std::vector<double> ArchiveEntry::as_f64() const {
  if (dtype == Dtype::f64) return f64;
  std::vector<double> out(f32.begin(), f32.end());
  return out;
}

std::vector<std::uint8_t> serialize_archive(const Archive& a) {
  if (a.size() > std::numeric_limits<std::uint32_t>::max())
    throw std::invalid_argument("archive has too many entries");
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, std::uint32_t(a.size()));
  for (const auto& [key, e] : a) {
    if (key.empty() || key.size() > std::numeric_limits<std::uint16_t>::max())
      throw std::invalid_argument("archive key length out of range: \"" + key + "\"");
    if (e.dims.empty()) throw std::invalid_argument("archive entry \"" + key + "\" has no dims");
    put_u16(out, std::uint16_t(key.size()));
    out.insert(out.end(), key.begin(), key.end());
    out.push_back(std::uint8_t(e.dtype));
    out.push_back(std::uint8_t(e.dims.size()));
    for (auto d : e.dims) put_u32(out, d);
    if (e.dtype == Dtype::f32) {
      if (e.f32.size() != e.numel()) throw std::invalid_argument("archive entry \"" + key + "\" payload mismatch");
      for (float v : e.f32) put_scalar_le(out, v);
    } else {
      if (e.f64.size() != e.numel()) throw std::invalid_argument("archive entry \"" + key + "\" payload mismatch");
      for (double v : e.f64) put_scalar_le(out, v);
    }
  }
  return out;
}

Archive parse_archive(const std::vector<std::uint8_t>& bytes) {
  Reader r{bytes};
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) parse_fail(0, "bad magic, expected \"LGE1\"");
  r.pos = 4;
  const std::uint32_t count = r.u32("entry count");
  Archive out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t entry_off = r.pos;
    const std::uint16_t keylen = r.u16("key length");
    if (keylen == 0) parse_fail(entry_off, "empty key");
    r.need(keylen, "key");
    std::string key(reinterpret_cast<const char*>(bytes.data() + r.pos), keylen);
    r.pos += keylen;
    const std::size_t dtype_off = r.pos;
    const std::uint8_t dt = r.u8("dtype");
    if (dt > 1) parse_fail(dtype_off, "unknown dtype tag " + std::to_string(int(dt)));
    const std::uint8_t ndim = r.u8("ndim");
    if (ndim == 0) parse_fail(r.pos - 1, "entry \"" + key + "\" has zero dims");
    ArchiveEntry e;
    e.dtype = Dtype(dt);
    std::uint64_t numel = 1;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      const std::uint32_t dim = r.u32("dims");
      if (dim == 0) parse_fail(r.pos - 4, "entry \"" + key + "\" has a zero extent");
      e.dims.push_back(dim);
      numel *= dim;
    }
    const std::size_t elem = e.dtype == Dtype::f32 ? 4 : 8;
    if (numel > (bytes.size() / elem) + 1) parse_fail(r.pos, "entry \"" + key + "\" payload exceeds archive size");
    r.need(std::size_t(numel * elem), "payload");
    if (e.dtype == Dtype::f32) {
      e.f32.resize(std::size_t(numel));
      for (std::uint64_t k = 0; k < numel; ++k)
        e.f32[std::size_t(k)] = get_scalar_le<float>(bytes.data() + r.pos + k * 4);
    } else {
      e.f64.resize(std::size_t(numel));
      for (std::uint64_t k = 0; k < numel; ++k)
        e.f64[std::size_t(k)] = get_scalar_le<double>(bytes.data() + r.pos + k * 8);
    }
    r.pos += std::size_t(numel * elem);
    if (!out.emplace(key, std::move(e)).second)
      parse_fail(entry_off, "duplicate key \"" + key + "\"");
  }
  if (r.pos != bytes.size()) parse_fail(r.pos, "trailing bytes after last entry");
  return out;
}

ArchiveEntry text_entry(const std::string& text) {
  std::vector<double> codes;
  codes.reserve(text.size() + 1);
  for (unsigned char c : text) codes.push_back(double(c));
  if (codes.empty()) codes.push_back(0.0);
  const std::uint32_t n = std::uint32_t(codes.size());
  return ArchiveEntry::from_f64({n}, std::move(codes));
}

std::string entry_text(const ArchiveEntry& e) {
  std::string out;
  for (double c : e.as_f64()) {
    if (c == 0.0) break;
    out.push_back(char(int(c)));
  }
  return out;
}

void write_archive(const std::string& path, const Archive& a) {
  const auto bytes = serialize_archive(a);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open \"" + path + "\" for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!f) throw std::runtime_error("write failed for \"" + path + "\"");
}

Archive read_archive(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open \"" + path + "\" for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_archive(bytes);
}

}  // namespace lg
