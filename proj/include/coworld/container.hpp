#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace coworld {

// Binary container shared by episode files (magic "CWEP0001") and
// checkpoints (magic "CWCK0001"):
//
//   magic[8] | u32le header_len | UTF-8 JSON header | payload | u32le crc32(payload)
//
// The header carries {"schema":1, "meta":{...}, "arrays":[{name, dtype,
// shape, byte_offset, byte_length}]}; offsets are relative to the payload
// start; payloads are raw little-endian arrays in header order.

struct ArrayView {
  std::string name;
  std::string dtype;  // "u8" | "f32" | "f64"
  std::vector<int64_t> shape;
  const void* data = nullptr;
  size_t bytes = 0;
};

struct LoadedArray {
  std::string name;
  std::string dtype;
  std::vector<int64_t> shape;
  std::vector<uint8_t> bytes;

  size_t elem_count() const;
  std::vector<float> as_f32() const;
  std::vector<double> as_f64() const;
  std::vector<uint8_t> as_u8() const;
};

struct Container {
  nlohmann::json meta;
  std::vector<LoadedArray> arrays;

  const LoadedArray& find(const std::string& name) const;  // FormatError if absent
};

void write_container(const std::string& path, const char magic[8], const nlohmann::json& meta,
                     const std::vector<ArrayView>& arrays);

Container read_container(const std::string& path, const char expect_magic[8]);

}  // namespace coworld
