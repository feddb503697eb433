#pragma once

// Little-endian binary container shared by model (HMRN) and dataset (HMRD)
// files:
//
//   magic[4] | u32 version | u32 json_len | json bytes |
//   { u32 name_len | name | u32 rank | u64 extents[rank] | f64 data[] }* |
//   u32 crc32(all preceding bytes)

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <zlib.h>

#include "hmresnet/error.hpp"
#include "hmresnet/tensor.hpp"

namespace hmresnet::io {

static_assert(std::endian::native == std::endian::little,
              "container encoding assumes a little-endian host");

using Bytes = std::vector<std::uint8_t>;

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = ::crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

class Writer {
 public:
  template <typename U>
  void put(U v) {
    static_assert(std::is_trivially_copyable_v<U>);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(U));
  }
  void put_bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

  template <typename T>
  void put_tensor(const std::string& name, const Tensor<T>& t) {
    put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    put_bytes(name);
    put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) put<std::uint64_t>(e);
    for (T v : t.data()) put<double>(static_cast<double>(v));
  }

  // Appends the CRC and hands over the finished buffer.
  Bytes finish() && {
    const std::uint32_t crc = crc32_of(buf_.data(), buf_.size());
    put(crc);
    return std::move(buf_);
  }

 private:
  Bytes buf_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : p_(data), end_(data + size) {}

  std::size_t remaining() const { return static_cast<std::size_t>(end_ - p_); }

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, p_, sizeof(U));
    p_ += sizeof(U);
    return v;
  }

  std::string get_string(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(p_), n);
    p_ += n;
    return s;
  }

  std::pair<std::string, Tensor<double>> get_tensor() {
    const auto name_len = get<std::uint32_t>("tensor name length");
    std::string name = get_string(name_len, "tensor name");
    const auto rank = get<std::uint32_t>("tensor rank");
    if (rank == 0 || rank > 8)
      throw FormatError("tensor '" + name + "' has invalid rank " +
                        std::to_string(rank));
    Shape shape;
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto e = get<std::uint64_t>("tensor extent");
      if (e == 0 || e > remaining() / 8 + 1)
        throw TruncatedError("tensor '" + name + "' extent " + std::to_string(e) +
                             " exceeds the remaining file");
      shape.push_back(static_cast<std::size_t>(e));
      count *= static_cast<std::size_t>(e);
    }
    if (count > remaining() / 8)
      throw TruncatedError("tensor '" + name + "' data runs past end of file");
    std::vector<double> data(count);
    std::memcpy(data.data(), p_, count * 8);
    p_ += count * 8;
    return {std::move(name), Tensor<double>(std::move(shape), std::move(data))};
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (remaining() < n)
      throw TruncatedError(std::string("file ends inside ") + what);
  }
  const std::uint8_t* p_;
  const std::uint8_t* end_;
};

struct Container {
  std::string json;
  std::vector<std::pair<std::string, Tensor<double>>> tensors;
};

inline Container parse_body(const Bytes& bytes, std::size_t end) {
  Reader r(bytes.data(), end);
  r.get<std::uint32_t>("magic");
  r.get<std::uint32_t>("version");
  Container c;
  const auto json_len = r.get<std::uint32_t>("header length");
  c.json = r.get_string(json_len, "JSON header");
  while (r.remaining() > 0) c.tensors.push_back(r.get_tensor());
  return c;
}

/// Checks magic, version and CRC, then splits the payload. A CRC mismatch on
/// a body that also fails to parse structurally is reported as truncation.
inline Container decode(const Bytes& bytes, std::string_view magic,
                        std::uint32_t version) {
  if (bytes.size() < 4 + 4 + 4 + 4)
    throw TruncatedError("file too short (" + std::to_string(bytes.size()) +
                         " bytes) to hold a header");
  if (std::memcmp(bytes.data(), magic.data(), 4) != 0)
    throw MagicError("bad magic: expected '" + std::string(magic) + "'");
  std::uint32_t v;
  std::memcpy(&v, bytes.data() + 4, 4);
  if (v != version)
    throw VersionError("unsupported format version " + std::to_string(v) +
                       " (this build reads version " + std::to_string(version) + ")");
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, 4);
  if (stored != crc32_of(bytes.data(), body)) {
    try {
      parse_body(bytes, body);
    } catch (const TruncatedError& e) {
      throw TruncatedError(std::string("truncated file: ") + e.what());
    } catch (const FormatError&) {
    }
    throw ChecksumError("CRC-32 mismatch: file is corrupted");
  }
  return parse_body(bytes, body);
}

inline Writer begin(std::string_view magic, std::uint32_t version,
                    const std::string& json) {
  Writer w;
  w.put_bytes(magic.substr(0, 4));
  w.put<std::uint32_t>(version);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(json.size()));
  w.put_bytes(json);
  return w;
}

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  return Bytes(std::istreambuf_iterator<char>(in), {});
}

/// Writes to a sibling temporary and renames it into place so readers never
/// observe a partial file.
inline void atomic_write(const std::filesystem::path& path,
                         std::string_view content) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write '" + tmp.string() + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw InputError("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

inline void atomic_write(const std::filesystem::path& path, const Bytes& bytes) {
  atomic_write(path, std::string_view(reinterpret_cast<const char*>(bytes.data()),
                                      bytes.size()));
}

}  // namespace hmresnet::io
