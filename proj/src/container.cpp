#include "lht/container.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

#include "lht/error.hpp"

namespace lht {
namespace {

constexpr char kMagic[4] = {'L', 'H', 'T', 'W'};
constexpr std::size_t kPreamble = 16;

std::size_t align_up(std::size_t n) {
  return (n + kContainerAlignment - 1) / kContainerAlignment *
         kContainerAlignment;
}

template <typename T>
T byteswap(T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  std::reverse(b, b + sizeof(T));
  std::memcpy(&v, b, sizeof(T));
  return v;
}

template <typename T>
T read_le(const unsigned char* p) {
  T v{};
  std::memcpy(&v, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) v = byteswap(v);
  return v;
}

template <typename T>
void write_le(std::string& out, T v) {
  if constexpr (std::endian::native == std::endian::big) v = byteswap(v);
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ContainerError(ContainerErrc::io,
                         "cannot open container " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::uint32_t crc32_of(std::span<const unsigned char> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in bounded chunks.
  constexpr std::size_t kChunk = 1U << 30;
  for (std::size_t off = 0; off < bytes.size(); off += kChunk) {
    const auto len = std::min(kChunk, bytes.size() - off);
    crc = ::crc32(crc, bytes.data() + off, static_cast<uInt>(len));
  }
  return static_cast<std::uint32_t>(crc);
}

std::uint32_t file_crc32(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  return crc32_of(bytes);
}

const Tensor& Container::get(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end())
    throw ContainerError(ContainerErrc::missing_tensor,
                         "missing tensor '" + name + "'", name);
  return it->second;
}

const Tensor& Container::get(const std::string& name,
                             const std::vector<std::size_t>& shape) const {
  const Tensor& t = get(name);
  if (t.shape() != shape)
    throw ContainerError(ContainerErrc::shape_mismatch,
                         "tensor '" + name + "' has shape " +
                             shape_string(t.shape()) + ", expected " +
                             shape_string(shape),
                         name);
  return t;
}

Container read_container(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  const auto fail = [&](ContainerErrc code, const std::string& why) {
    return ContainerError(code, path.string() + ": " + why);
  };
  if (bytes.size() < kPreamble || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw fail(ContainerErrc::malformed, "not an lhtw container");
  const auto version = read_le<std::uint32_t>(bytes.data() + 4);
  if (version != kContainerVersion)
    throw fail(ContainerErrc::unsupported_version,
               "unsupported container version " + std::to_string(version));
  const auto header_len = read_le<std::uint64_t>(bytes.data() + 8);
  if (header_len > bytes.size() - kPreamble)
    throw fail(ContainerErrc::checksum, "truncated header");
  const std::size_t payload_start = kPreamble + header_len;
  if (payload_start % kContainerAlignment != 0)
    throw fail(ContainerErrc::malformed, "payload is not 64-byte aligned");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + kPreamble,
                                   bytes.begin() + static_cast<std::ptrdiff_t>(payload_start));
  } catch (const nlohmann::json::exception& e) {
    throw fail(ContainerErrc::malformed, std::string("bad header: ") + e.what());
  }
  if (!header.is_object() || header.value("format", "") != "lhtw" ||
      !header.contains("payload_bytes") || !header.contains("tensors"))
    throw fail(ContainerErrc::malformed, "header lacks required keys");

  const auto payload_bytes = header["payload_bytes"].get<std::uint64_t>();
  if (bytes.size() != payload_start + payload_bytes + 4)
    throw fail(ContainerErrc::checksum,
               "file size does not match header (truncated or padded)");
  const std::span<const unsigned char> payload(bytes.data() + payload_start,
                                               payload_bytes);
  const auto stored = read_le<std::uint32_t>(bytes.data() + payload_start + payload_bytes);
  if (crc32_of(payload) != stored)
    throw fail(ContainerErrc::checksum, "payload CRC32 mismatch");

  Container out;
  for (const auto& [name, desc] : header["tensors"].items()) {
    try {
      if (desc.at("dtype").get<std::string>() != "f32")
        throw fail(ContainerErrc::malformed, "tensor '" + name + "' is not f32");
      auto shape = desc.at("shape").get<std::vector<std::size_t>>();
      const auto offset = desc.at("offset").get<std::uint64_t>();
      std::size_t count = shape.empty() ? 0 : 1;
      for (auto e : shape) count *= e;
      if (count == 0 || offset + count * 4 > payload_bytes)
        throw fail(ContainerErrc::malformed,
                   "tensor '" + name + "' lies outside the payload");
      std::vector<float> values(count);
      const unsigned char* p = payload.data() + offset;
      for (std::size_t i = 0; i < count; ++i) {
        const auto bits = read_le<std::uint32_t>(p + 4 * i);
        values[i] = std::bit_cast<float>(bits);
      }
      out.tensors.emplace(name, Tensor(std::move(shape), std::move(values)));
    } catch (const nlohmann::json::exception& e) {
      throw fail(ContainerErrc::malformed,
                 "bad descriptor for '" + name + "': " + e.what());
    }
  }
  for (auto& [key, value] : header.items()) {
    if (key == "format" || key == "version" || key == "payload_bytes" ||
        key == "tensors")
      continue;
    out.metadata[key] = value;
  }
  return out;
}

void write_container(const std::filesystem::path& path,
                     const Container& container) {
  nlohmann::json header = container.metadata;
  header["format"] = "lhtw";
  header["version"] = kContainerVersion;
  nlohmann::json descs = nlohmann::json::object();
  std::size_t offset = 0;
  for (const auto& [name, t] : container.tensors) {
    descs[name] = {{"dtype", "f32"}, {"shape", t.shape()}, {"offset", offset}};
    offset = align_up(offset + t.size() * 4);
  }
  header["tensors"] = std::move(descs);
  header["payload_bytes"] = offset;

  std::string text = header.dump();
  text.append(align_up(kPreamble + text.size()) - kPreamble - text.size(), ' ');

  std::string out;
  out.append(kMagic, 4);
  write_le<std::uint32_t>(out, kContainerVersion);
  write_le<std::uint64_t>(out, text.size());
  out += text;
  const std::size_t payload_start = out.size();
  out.resize(payload_start + offset, '\0');
  std::size_t pos = payload_start;
  for (const auto& [name, t] : container.tensors) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      auto bits = std::bit_cast<std::uint32_t>(t[i]);
      if constexpr (std::endian::native == std::endian::big)
        bits = byteswap(bits);
      std::memcpy(out.data() + pos + 4 * i, &bits, 4);
    }
    pos = payload_start + align_up(pos - payload_start + t.size() * 4);
  }
  const auto crc = crc32_of(std::span<const unsigned char>(
      reinterpret_cast<const unsigned char*>(out.data()) + payload_start, offset));
  write_le<std::uint32_t>(out, crc);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f)
    throw ContainerError(ContainerErrc::io, "cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f)
    throw ContainerError(ContainerErrc::io, "short write to " + path.string());
}

}  // namespace lht
