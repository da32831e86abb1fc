#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stada/core/error.hpp"
#include "stada/core/sha256.hpp"

namespace stada {

using json = nlohmann::json;

/// Self-describing binary container used by checkpoints and weight files:
///   magic(8) | u32 format_version | u64 json_len | json | u64 blob_len | blob
/// The JSON header records the blob's sha256 so truncation and corruption are
/// distinguishable from version mismatches on load.
struct Container {
  std::uint32_t version = 0;
  json header;
  std::vector<float> blob;
};

namespace detail {
template <typename T>
void write_pod(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
template <typename T>
bool read_pod(std::ifstream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return static_cast<bool>(is);
}
}  // namespace detail

inline void write_container(const std::filesystem::path& path, const char magic[8],
                            std::uint32_t version, json header, const std::vector<float>& blob) {
  header["blob_sha256"] = sha256_hex(blob.data(), blob.size() * sizeof(float));
  std::string head = header.dump();
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + path.string());
    os.write(magic, 8);
    detail::write_pod(os, version);
    detail::write_pod(os, static_cast<std::uint64_t>(head.size()));
    os.write(head.data(), static_cast<std::streamsize>(head.size()));
    detail::write_pod(os, static_cast<std::uint64_t>(blob.size()));
    os.write(reinterpret_cast<const char*>(blob.data()),
             static_cast<std::streamsize>(blob.size() * sizeof(float)));
    if (!os) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Container read_container(const std::filesystem::path& path, const char magic[8],
                                std::uint32_t supported_version, const std::string& kind) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + kind + " file: " + path.string());
  char got[8];
  is.read(got, 8);
  if (!is || std::string(got, 8) != std::string(magic, 8))
    throw CorruptFileError(path.string() + " is not a " + kind + " file");
  Container c;
  if (!detail::read_pod(is, c.version))
    throw CorruptFileError("truncated " + kind + " file: " + path.string());
  if (c.version != supported_version)
    throw VersionError(kind + " file " + path.string() + " has format_version " +
                       std::to_string(c.version) + ", supported: " +
                       std::to_string(supported_version));
  std::uint64_t head_len = 0, blob_len = 0;
  if (!detail::read_pod(is, head_len))
    throw CorruptFileError("truncated " + kind + " file: " + path.string());
  std::string head(head_len, '\0');
  is.read(head.data(), static_cast<std::streamsize>(head_len));
  if (!is) throw CorruptFileError("truncated " + kind + " file: " + path.string());
  try {
    c.header = json::parse(head);
  } catch (const json::exception& e) {
    throw CorruptFileError(kind + " header unreadable in " + path.string() + ": " + e.what());
  }
  if (!detail::read_pod(is, blob_len))
    throw CorruptFileError("truncated " + kind + " file: " + path.string());
  c.blob.resize(blob_len);
  is.read(reinterpret_cast<char*>(c.blob.data()),
          static_cast<std::streamsize>(blob_len * sizeof(float)));
  if (!is) throw CorruptFileError("truncated " + kind + " file: " + path.string());
  std::string want = c.header.value("blob_sha256", "");
  std::string have = sha256_hex(c.blob.data(), c.blob.size() * sizeof(float));
  if (want != have)
    throw CorruptFileError(kind + " blob hash mismatch in " + path.string() +
                           " (file is corrupt)");
  return c;
}

inline std::string sha256_of_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  Sha256 h;
  char buf[1 << 16];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
    h.update(buf, static_cast<std::size_t>(is.gcount()));
    if (!is) break;
  }
  return h.hex_digest();
}

}  // namespace stada
