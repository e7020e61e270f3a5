#pragma once

// Binary tensor container (`.lhtw`).
//
// Layout, all integers little-endian:
//   [0,4)    magic "LHTW"
//   [4,8)    u32 format version (currently 1)
//   [8,16)   u64 header length in bytes, including trailing space padding
//   [16,..)  UTF-8 JSON header, space padded so the payload starts on a
//            64-byte boundary
//   payload  raw f32 tensors; each tensor offset (relative to payload start)
//            is a multiple of 64, gaps are zero bytes
//   trailer  u32 CRC32 (zlib polynomial) of the whole payload region
//
// Header keys: "format" = "lhtw", "version", "payload_bytes",
// "tensors" = {name: {"dtype": "f32", "shape": [...], "offset": n}}.
// Any other keys are free-form metadata carried through unchanged.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "lht/tensor.hpp"

namespace lht {

inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr std::size_t kContainerAlignment = 64;

struct Container {
  nlohmann::json metadata = nlohmann::json::object();
  std::map<std::string, Tensor> tensors;

  /// Throws ContainerError(missing_tensor) naming `name` when absent.
  const Tensor& get(const std::string& name) const;
  /// As get(), additionally checking the shape.
  const Tensor& get(const std::string& name,
                    const std::vector<std::size_t>& shape) const;
};

Container read_container(const std::filesystem::path& path);

/// Deterministic: identical inputs give byte-identical files.
void write_container(const std::filesystem::path& path,
                     const Container& container);

std::uint32_t crc32_of(std::span<const unsigned char> bytes);

/// CRC32 of a whole file; used for run manifests.
std::uint32_t file_crc32(const std::filesystem::path& path);

}  // namespace lht
