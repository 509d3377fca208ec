#pragma once

// Checkpoint container: magic, format version, policy kind, the resolved run
// config as YAML text, an opaque state payload and a trailing checksum.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "tacbench/binary_io.hpp"

namespace tacbench {

inline constexpr char kCheckpointMagic[8] = {'T', 'A', 'C', 'B', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline constexpr const char* kPolicyPpo = "ppo_gaussian_mlp";
inline constexpr const char* kPolicyScriptedBounceOracle = "scripted_bounce_oracle";

struct Checkpoint {
  std::string policy_kind;
  std::string config_yaml;
  std::string payload;
};

inline std::string encode_checkpoint(const Checkpoint& c) {
  BinaryWriter w;
  for (char ch : kCheckpointMagic) w.put(ch);
  w.put(kCheckpointVersion);
  w.put(c.policy_kind);
  w.put(c.config_yaml);
  w.put(c.payload);
  Digest d;
  d.add(w.bytes().data(), w.bytes().size());
  w.put(d.value());
  return w.take();
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) + 4 + 8 ||
      bytes.substr(0, sizeof(kCheckpointMagic)) !=
          std::string_view(kCheckpointMagic, sizeof(kCheckpointMagic)))
    throw FormatError("not a tacbench checkpoint (bad magic)");
  BinaryReader r(bytes.substr(sizeof(kCheckpointMagic)));
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint format version " + std::to_string(version) +
                      ", expected version " + std::to_string(kCheckpointVersion));
  Digest d;
  d.add(bytes.data(), bytes.size() - 8);
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  if (stored != d.value()) throw FormatError("corrupt checkpoint (checksum mismatch)");
  Checkpoint c;
  c.policy_kind = r.get_string();
  c.config_yaml = r.get_string();
  c.payload = r.get_string();
  return c;
}

/// Writes through a temporary file and a rename so a crash never leaves a
/// half-written checkpoint behind.
inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    const auto bytes = encode_checkpoint(c);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw std::runtime_error("cannot write " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace tacbench
