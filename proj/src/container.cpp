#include "coworld/container.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <memory>

#include "coworld/errors.hpp"

namespace coworld {

namespace {

size_t dtype_size(const std::string& dtype) {
  if (dtype == "u8") return 1;
  if (dtype == "f32") return 4;
  if (dtype == "f64") return 8;
  throw FormatError("container dtype: unknown '" + dtype + "'");
}

void check_little_endian() {
  const uint32_t probe = 1;
  uint8_t first;
  std::memcpy(&first, &probe, 1);
  if (first != 1) throw FormatError("container: big-endian hosts are not supported");
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void put_u32le(std::FILE* f, uint32_t v) {
  uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                  static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
  if (std::fwrite(b, 1, 4, f) != 4) throw FormatError("container: short write");
}

uint32_t get_u32le(std::FILE* f, const char* what) {
  uint8_t b[4];
  if (std::fread(b, 1, 4, f) != 4)
    throw FormatError(std::string("container ") + what + ": truncated file");
  return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
         static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

}  // namespace

size_t LoadedArray::elem_count() const { return bytes.size() / dtype_size(dtype); }

std::vector<float> LoadedArray::as_f32() const {
  if (dtype != "f32") throw FormatError("array " + name + ": dtype is " + dtype + ", wanted f32");
  std::vector<float> out(bytes.size() / 4);
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

std::vector<double> LoadedArray::as_f64() const {
  if (dtype != "f64") throw FormatError("array " + name + ": dtype is " + dtype + ", wanted f64");
  std::vector<double> out(bytes.size() / 8);
  std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

std::vector<uint8_t> LoadedArray::as_u8() const {
  if (dtype != "u8") throw FormatError("array " + name + ": dtype is " + dtype + ", wanted u8");
  return bytes;
}

const LoadedArray& Container::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  throw FormatError("container array '" + name + "': missing");
}

void write_container(const std::string& path, const char magic[8], const nlohmann::json& meta,
                     const std::vector<ArrayView>& arrays) {
  check_little_endian();
  nlohmann::json header;
  header["schema"] = 1;
  header["meta"] = meta;
  header["arrays"] = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& a : arrays) {
    uint64_t elems = 1;
    for (int64_t d : a.shape) elems *= static_cast<uint64_t>(d);
    if (elems * dtype_size(a.dtype) != a.bytes)
      throw FormatError("array " + a.name + ": shape does not match byte length");
    header["arrays"].push_back({{"name", a.name},
                                {"dtype", a.dtype},
                                {"shape", a.shape},
                                {"byte_offset", offset},
                                {"byte_length", a.bytes}});
    offset += a.bytes;
  }
  const std::string htext = header.dump();

  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw FormatError("container: cannot open for writing: " + path);
  if (std::fwrite(magic, 1, 8, f.get()) != 8) throw FormatError("container: short write");
  put_u32le(f.get(), static_cast<uint32_t>(htext.size()));
  if (std::fwrite(htext.data(), 1, htext.size(), f.get()) != htext.size())
    throw FormatError("container: short write");
  uLong crc = crc32(0L, Z_NULL, 0);
  for (const auto& a : arrays) {
    if (a.bytes &&
        std::fwrite(a.data, 1, a.bytes, f.get()) != a.bytes)
      throw FormatError("container: short write");
    crc = crc32(crc, static_cast<const Bytef*>(a.data), static_cast<uInt>(a.bytes));
  }
  put_u32le(f.get(), static_cast<uint32_t>(crc));
  if (std::fflush(f.get()) != 0) throw FormatError("container: flush failed: " + path);
}

Container read_container(const std::string& path, const char expect_magic[8]) {
  check_little_endian();
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw FormatError("container: cannot open: " + path);

  char magic[8];
  if (std::fread(magic, 1, 8, f.get()) != 8) throw FormatError("container magic: truncated file");
  if (std::memcmp(magic, expect_magic, 8) != 0)
    throw FormatError("container magic: expected '" + std::string(expect_magic, 8) + "', got '" +
                      std::string(magic, 8) + "'");

  const uint32_t hlen = get_u32le(f.get(), "header length");
  std::string htext(hlen, '\0');
  if (std::fread(htext.data(), 1, hlen, f.get()) != hlen)
    throw FormatError("container header: truncated file");
  nlohmann::json header = nlohmann::json::parse(htext, nullptr, false);
  if (header.is_discarded()) throw FormatError("container header: invalid JSON");
  if (!header.contains("schema") || header["schema"] != 1)
    throw FormatError("container schema: missing or unsupported");
  if (!header.contains("arrays") || !header["arrays"].is_array())
    throw FormatError("container arrays: missing");

  Container out;
  out.meta = header.value("meta", nlohmann::json::object());

  uint64_t payload_len = 0;
  struct Entry {
    std::string name, dtype;
    std::vector<int64_t> shape;
    uint64_t off, len;
  };
  std::vector<Entry> entries;
  for (const auto& a : header["arrays"]) {
    Entry e;
    try {
      e.name = a.at("name").get<std::string>();
      e.dtype = a.at("dtype").get<std::string>();
      e.shape = a.at("shape").get<std::vector<int64_t>>();
      e.off = a.at("byte_offset").get<uint64_t>();
      e.len = a.at("byte_length").get<uint64_t>();
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError(std::string("container array entry: ") + ex.what());
    }
    uint64_t elems = 1;
    for (int64_t d : e.shape) {
      if (d < 0) throw FormatError("array " + e.name + ": negative shape entry");
      elems *= static_cast<uint64_t>(d);
    }
    if (elems * dtype_size(e.dtype) != e.len)
      throw FormatError("array " + e.name + ": shape does not match byte_length");
    if (e.off != payload_len)
      throw FormatError("array " + e.name + ": byte_offset out of order");
    payload_len += e.len;
    entries.push_back(std::move(e));
  }

  std::vector<uint8_t> payload(payload_len);
  if (payload_len && std::fread(payload.data(), 1, payload_len, f.get()) != payload_len)
    throw FormatError("container payload: truncated file");
  const uint32_t stored_crc = get_u32le(f.get(), "crc32");
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, payload.data(), static_cast<uInt>(payload.size()));
  if (static_cast<uint32_t>(crc) != stored_crc)
    throw FormatError("container crc32: checksum mismatch (corrupt payload)");

  for (auto& e : entries) {
    LoadedArray la;
    la.name = e.name;
    la.dtype = e.dtype;
    la.shape = e.shape;
    la.bytes.assign(payload.begin() + static_cast<ptrdiff_t>(e.off),
                    payload.begin() + static_cast<ptrdiff_t>(e.off + e.len));
    out.arrays.push_back(std::move(la));
  }
  return out;
}

}  // namespace coworld
