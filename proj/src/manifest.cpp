#include "scaleup/manifest.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <fmt/format.h>
#include <json.hpp>

namespace scaleup {

namespace {

// FIPS 180-4 SHA-256.
constexpr std::array<std::uint32_t, 64> kRound = {
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4,
    0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe,
    0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f,
    0x4a7484aa, 0x5cb0a9dc, 0x76f988da, 0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7,
    0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc,
    0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
    0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070, 0x19a4c116,
    0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
    0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7,
    0xc67178f2};

std::uint32_t rotr(std::uint32_t x, int s) { return (x >> s) | (x << (32 - s)); }

class Sha256 {
 public:
  void update(const char* data, std::size_t size) {
    total_bits_ += static_cast<std::uint64_t>(size) * 8;
    while (size > 0) {
      const std::size_t take = std::min(size, sizeof(block_) - fill_);
      std::memcpy(block_ + fill_, data, take);
      fill_ += take;
      data += take;
      size -= take;
      if (fill_ == sizeof(block_)) {
        compress();
        fill_ = 0;
      }
    }
  }

  std::string hex() {
    const std::uint64_t bits = total_bits_;
    const char pad = static_cast<char>(0x80);
    update(&pad, 1);
    const char zero = 0;
    while (fill_ != 56) update(&zero, 1);
    for (int i = 7; i >= 0; --i) {
      const char b = static_cast<char>(bits >> (8 * i));
      update(&b, 1);
    }
    std::string out;
    out.reserve(64);
    for (std::uint32_t word : h_) out += fmt::format("{:08x}", word);
    return out;
  }

 private:
  void compress() {
    std::uint32_t w[64];
    for (int i = 0; i < 16; ++i) {
      w[i] = (static_cast<std::uint32_t>(static_cast<unsigned char>(block_[4 * i])) << 24) |
             (static_cast<std::uint32_t>(static_cast<unsigned char>(block_[4 * i + 1])) << 16) |
             (static_cast<std::uint32_t>(static_cast<unsigned char>(block_[4 * i + 2])) << 8) |
             static_cast<std::uint32_t>(static_cast<unsigned char>(block_[4 * i + 3]));
    }
    for (int i = 16; i < 64; ++i) {
      const std::uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
      const std::uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
      w[i] = w[i - 16] + s0 + w[i - 7] + s1;
    }
    std::uint32_t a = h_[0], b = h_[1], c = h_[2], d = h_[3];
    std::uint32_t e = h_[4], f = h_[5], g = h_[6], h = h_[7];
    for (int i = 0; i < 64; ++i) {
      const std::uint32_t s1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
      const std::uint32_t ch = (e & f) ^ (~e & g);
      const std::uint32_t t1 = h + s1 + ch + kRound[static_cast<std::size_t>(i)] + w[i];
      const std::uint32_t s0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
      const std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
      const std::uint32_t t2 = s0 + maj;
      h = g;
      g = f;
      f = e;
      e = d + t1;
      d = c;
      c = b;
      b = a;
      a = t1 + t2;
    }
    h_[0] += a;
    h_[1] += b;
    h_[2] += c;
    h_[3] += d;
    h_[4] += e;
    h_[5] += f;
    h_[6] += g;
    h_[7] += h;
  }

  std::array<std::uint32_t, 8> h_ = {0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
                                     0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19};
  char block_[64];
  std::size_t fill_ = 0;
  std::uint64_t total_bits_ = 0;
};

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  Sha256 hash;
  hash.update(bytes.data(), bytes.size());
  return hash.hex();
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("manifest: cannot read '{}'", path));
  Sha256 hash;
  char buffer[1 << 16];
  while (in) {
    in.read(buffer, sizeof(buffer));
    hash.update(buffer, static_cast<std::size_t>(in.gcount()));
  }
  return hash.hex();
}

std::string manifest_json(const RunManifest& manifest) {
  nlohmann::ordered_json j;
  j["tool"] = "scaleup";
  j["version"] = kToolVersion;
  j["command"] = manifest.command;
  j["seed"] = manifest.seed;
  j["config_hash"] = manifest.config_hash;
  j["inputs"] = nlohmann::ordered_json::object();
  for (const auto& [name, hash] : manifest.inputs) j["inputs"][name] = hash;
  j["outputs"] = nlohmann::ordered_json::object();
  for (const auto& [name, hash] : manifest.outputs) j["outputs"][name] = hash;
  j["settings"] = nlohmann::ordered_json::object();
  for (const auto& [key, value] : manifest.settings) j["settings"][key] = value;
  return j.dump(2) + "\n";
}

void write_manifest(const RunManifest& manifest, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("manifest: cannot open '{}' for writing", path));
  out << manifest_json(manifest);
  if (!out) throw std::runtime_error(fmt::format("manifest: write to '{}' failed", path));
}

}  // namespace scaleup
