#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace scaleup {

inline constexpr const char* kToolVersion = "1.0.0";

// SHA-256 of a byte string / of a file's contents, as lowercase hex.
std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::string& path);  // throws when unreadable

// Run provenance written next to every command's outputs. Two runs that agree
// on the manifest (same config, inputs, seed, version) produce byte-identical
// outputs, so the manifest doubles as a reproducibility receipt. Maps keep
// the rendering deterministic; no timestamps on purpose.
struct RunManifest {
  std::string command;
  std::uint64_t seed = 0;
  std::string config_hash;  // hash of the configuration file's bytes
  std::map<std::string, std::string> inputs;    // path -> content hash
  std::map<std::string, std::string> outputs;   // path -> content hash
  std::map<std::string, std::string> settings;  // effective option echo
};

std::string manifest_json(const RunManifest& manifest);
void write_manifest(const RunManifest& manifest, const std::string& path);

}  // namespace scaleup
