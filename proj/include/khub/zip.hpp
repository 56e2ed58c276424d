#pragma once

// Minimal zip archive reader/writer over zlib: stored and deflated members, no zip64,
// no encryption. Enough for document upload archives.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <zlib.h>

#include "khub/util.hpp"

namespace khub {

class zip_error : public error {
 public:
  using error::error;
};

struct zip_entry {
  std::string name;
  std::string data;

  bool operator==(const zip_entry&) const = default;
};

namespace detail {

inline std::uint32_t le(std::string_view b, std::size_t at, int n) {
  if (at + static_cast<std::size_t>(n) > b.size()) throw zip_error("zip archive is truncated");
  std::uint32_t v = 0;
  for (int i = n - 1; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[at + static_cast<std::size_t>(i)]);
  return v;
}

inline void put_le(std::string& out, std::uint32_t v, int n) {
  for (int i = 0; i < n; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}

inline std::string inflate_raw(std::string_view in, std::size_t expected) {
  std::string out(expected, '\0');
  z_stream zs{};
  if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) throw zip_error("inflate init failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  int rc = inflate(&zs, Z_FINISH);
  auto produced = zs.total_out;
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || produced != expected) throw zip_error("corrupt deflate stream");
  return out;
}

inline std::string deflate_raw(std::string_view in) {
  z_stream zs{};
  if (deflateInit2(&zs, Z_BEST_COMPRESSION, Z_DEFLATED, -MAX_WBITS, 8, Z_DEFAULT_STRATEGY) != Z_OK)
    throw zip_error("deflate init failed");
  std::string out(deflateBound(&zs, static_cast<uLong>(in.size())), '\0');
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  int rc = deflate(&zs, Z_FINISH);
  out.resize(zs.total_out);
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) throw zip_error("deflate failed");
  return out;
}

inline std::uint32_t crc(std::string_view s) {
  return static_cast<std::uint32_t>(::crc32(0L, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size())));
}

}  // namespace detail

inline bool looks_like_zip(std::string_view bytes) { return starts_with(bytes, std::string_view("PK\x03\x04", 4)); }

// Members in central-directory order; directories are skipped. CRCs are checked.
inline std::vector<zip_entry> read_zip(std::string_view bytes) {
  using detail::le;
  if (bytes.size() < 22) throw zip_error("not a zip archive");
  std::size_t eocd = std::string_view::npos;
  std::size_t lowest = bytes.size() > 22 + 0xffff ? bytes.size() - 22 - 0xffff : 0;
  for (std::size_t i = bytes.size() - 22 + 1; i-- > lowest;)
    if (le(bytes, i, 4) == 0x06054b50) {
      eocd = i;
      break;
    }
  if (eocd == std::string_view::npos) throw zip_error("not a zip archive");
  std::size_t count = le(bytes, eocd + 10, 2);
  std::size_t pos = le(bytes, eocd + 16, 4);
  std::vector<zip_entry> out;
  for (std::size_t i = 0; i < count; ++i) {
    if (le(bytes, pos, 4) != 0x02014b50) throw zip_error("bad central directory");
    auto flags = le(bytes, pos + 8, 2);
    auto method = le(bytes, pos + 10, 2);
    auto crc = le(bytes, pos + 16, 4);
    std::size_t csize = le(bytes, pos + 20, 4), usize = le(bytes, pos + 24, 4);
    std::size_t nlen = le(bytes, pos + 28, 2), xlen = le(bytes, pos + 30, 2), clen = le(bytes, pos + 32, 2);
    std::size_t local = le(bytes, pos + 42, 4);
    if (pos + 46 + nlen > bytes.size()) throw zip_error("zip archive is truncated");
    std::string name(bytes.substr(pos + 46, nlen));
    pos += 46 + nlen + xlen + clen;
    if (flags & 1) throw zip_error(name + ": encrypted members are not supported");
    if (!name.empty() && name.back() == '/') continue;
    if (le(bytes, local, 4) != 0x04034b50) throw zip_error(name + ": bad local header");
    std::size_t data_at = local + 30 + le(bytes, local + 26, 2) + le(bytes, local + 28, 2);
    if (data_at + csize > bytes.size()) throw zip_error("zip archive is truncated");
    auto raw = bytes.substr(data_at, csize);
    std::string data;
    if (method == 0) data = std::string(raw);
    else if (method == 8) data = detail::inflate_raw(raw, usize);
    else throw zip_error(name + ": unsupported compression method " + std::to_string(method));
    if (data.size() != usize || detail::crc(data) != crc) throw zip_error(name + ": checksum mismatch");
    out.push_back({std::move(name), std::move(data)});
  }
  return out;
}

inline std::string write_zip(const std::vector<zip_entry>& entries, bool compress = true) {
  using detail::put_le;
  std::string out, central;
  for (const auto& e : entries) {
    auto body = compress ? detail::deflate_raw(e.data) : e.data;
    std::uint32_t method = compress ? 8 : 0, crc = detail::crc(e.data);
    auto offset = static_cast<std::uint32_t>(out.size());
    put_le(out, 0x04034b50, 4);
    put_le(out, 20, 2);
    put_le(out, 0, 2);
    put_le(out, method, 2);
    put_le(out, 0, 4);  // time, date
    put_le(out, crc, 4);
    put_le(out, static_cast<std::uint32_t>(body.size()), 4);
    put_le(out, static_cast<std::uint32_t>(e.data.size()), 4);
    put_le(out, static_cast<std::uint32_t>(e.name.size()), 2);
    put_le(out, 0, 2);
    out += e.name;
    out += body;
    put_le(central, 0x02014b50, 4);
    put_le(central, 20, 2);
    put_le(central, 20, 2);
    put_le(central, 0, 2);
    put_le(central, method, 2);
    put_le(central, 0, 4);
    put_le(central, crc, 4);
    put_le(central, static_cast<std::uint32_t>(body.size()), 4);
    put_le(central, static_cast<std::uint32_t>(e.data.size()), 4);
    put_le(central, static_cast<std::uint32_t>(e.name.size()), 2);
    put_le(central, 0, 2);
    put_le(central, 0, 2);
    put_le(central, 0, 2);
    put_le(central, 0, 2);
    put_le(central, 0, 4);
    put_le(central, offset, 4);
    central += e.name;
  }
  auto cd_at = static_cast<std::uint32_t>(out.size());
  out += central;
  put_le(out, 0x06054b50, 4);
  put_le(out, 0, 4);
  put_le(out, static_cast<std::uint32_t>(entries.size()), 2);
  put_le(out, static_cast<std::uint32_t>(entries.size()), 2);
  put_le(out, static_cast<std::uint32_t>(central.size()), 4);
  put_le(out, cd_at, 4);
  put_le(out, 0, 2);
  return out;
}

}  // namespace khub
