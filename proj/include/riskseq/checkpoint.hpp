#ifndef RISKSEQ_CHECKPOINT_HPP
#define RISKSEQ_CHECKPOINT_HPP

// model.ckpt layout:
//   8 bytes   magic "RSQCKPT\0"
//   8 bytes   manifest length N, little-endian
//   N bytes   JSON manifest (names, shapes, dtype, byte offsets, config, schema hash)
//   ...       float32 little-endian tensor blobs, offsets relative to the blob start
//   4 bytes   CRC32 of every preceding byte, little-endian

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>

#include "json.hpp"
#include "riskseq/error.hpp"
#include "riskseq/hash.hpp"
#include "riskseq/model.hpp"

namespace riskseq {

inline constexpr int kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'R', 'S', 'Q', 'C', 'K', 'P', 'T', '\0'};

namespace detail {

inline void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_le(const std::string& in, std::size_t pos, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

}  // namespace detail

struct Checkpoint {
  Model model;
  std::string schema_hash;
  nlohmann::json manifest;
};

inline std::string serialize_checkpoint(const Model& model, const std::string& schema_hash_hex) {
  using nlohmann::json;
  json tensors = json::array();
  std::string blobs;
  for (const auto& [name, t] : model.params) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"dtype", "float32"}, {"offset", blobs.size()},
                       {"nbytes", t.size() * 4}});
    for (double v : t.values()) detail::put_le(blobs, std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4);
  }
  std::vector<std::string> branches;
  for (std::size_t k : model.config.active_tasks()) branches.push_back(model.outcome_names.at(k));
  const json manifest{{"format_version", kCheckpointVersion},
                      {"config", config_to_json(model.config)},
                      {"schema_hash", schema_hash_hex},
                      {"outcomes", model.outcome_names},
                      {"branches", branches},
                      {"embedded_features", model.embedded_feature_names},
                      {"tensors", tensors}};
  const std::string mtext = manifest.dump();
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_le(out, mtext.size(), 8);
  out += mtext;
  out += blobs;
  detail::put_le(out, crc32_of(out), 4);
  return out;
}

inline void save_checkpoint(const Model& model, const std::string& schema_hash_hex, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint " + path);
  const std::string bytes = serialize_checkpoint(model, schema_hash_hex);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Checkpoint parse_checkpoint(const std::string& bytes, const std::string& origin = "checkpoint") {
  if (bytes.size() < sizeof kCheckpointMagic + 12 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw DataError(origin + ": not a checkpoint file or truncated");
  const std::uint32_t stored = static_cast<std::uint32_t>(detail::get_le(bytes, bytes.size() - 4, 4));
  if (crc32_of(std::string_view(bytes).substr(0, bytes.size() - 4)) != stored)
    throw DataError(origin + ": checksum mismatch (file is corrupt or truncated)");
  const std::uint64_t mlen = detail::get_le(bytes, 8, 8);
  if (16 + mlen + 4 > bytes.size()) throw DataError(origin + ": manifest length exceeds file size");

  Checkpoint ck;
  try {
    ck.manifest = nlohmann::json::parse(bytes.substr(16, mlen));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(origin + ": manifest is not valid JSON: " + e.what());
  }
  const auto& m = ck.manifest;
  try {
    const int version = m.at("format_version").get<int>();
    if (version != kCheckpointVersion)
      throw ConfigError(origin + ": unsupported checkpoint format_version " + std::to_string(version));
    ck.schema_hash = m.at("schema_hash").get<std::string>();
    ck.model.config = config_from_json(m.at("config"));
    ck.model.outcome_names = m.at("outcomes").get<std::vector<std::string>>();
    ck.model.embedded_feature_names = m.at("embedded_features").get<std::vector<std::string>>();
    const std::size_t blob_start = 16 + mlen;
    const std::size_t blob_len = bytes.size() - 4 - blob_start;
    for (const auto& jt : m.at("tensors")) {
      const std::string name = jt.at("name").get<std::string>();
      const Shape shape = jt.at("shape").get<Shape>();
      const std::size_t offset = jt.at("offset").get<std::size_t>();
      const std::size_t n = shape_size(shape);
      if (jt.at("dtype").get<std::string>() != "float32" || jt.at("nbytes").get<std::size_t>() != 4 * n ||
          offset + 4 * n > blob_len)
        throw DataError(origin + ": tensor '" + name + "' has an inconsistent manifest entry");
      Tensor t(shape);
      for (std::size_t i = 0; i < n; ++i)
        t[i] = std::bit_cast<float>(static_cast<std::uint32_t>(detail::get_le(bytes, blob_start + offset + 4 * i, 4)));
      ck.model.params.emplace(name, std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(origin + ": malformed manifest: " + e.what());
  }
  return ck;
}

/// Loads a checkpoint; when `expected_schema_hash` is given it must match.
inline Checkpoint load_checkpoint(const std::string& path,
                                  const std::optional<std::string>& expected_schema_hash = std::nullopt) {
  Checkpoint ck = parse_checkpoint(read_file_bytes(path), path);
  if (expected_schema_hash && *expected_schema_hash != ck.schema_hash)
    throw ConfigError(path + ": schema hash mismatch (checkpoint " + ck.schema_hash + ", data " +
                      *expected_schema_hash + ")");
  return ck;
}

/// Rounds every parameter through float32, as a save/load round trip does.
inline void round_to_float32(Model& m) {
  for (auto& [_, t] : m.params)
    for (double& v : t.storage()) v = static_cast<float>(v);
}

}  // namespace riskseq

#endif  // RISKSEQ_CHECKPOINT_HPP
