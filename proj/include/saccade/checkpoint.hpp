#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "saccade/config.hpp"
#include "saccade/params.hpp"

namespace saccade {

/// Named parameters plus the JSON document of the run that produced them.
struct Checkpoint {
  ParamSet params;
  Json config;
};

/// "SANW", u16 version, u32 tensor count; per tensor u16 name length, name,
/// u8 rank, rank x u32 dims, little-endian f32 data; u32 length + JSON.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Checks that `loaded` has exactly the names and shapes of `expected`.
void check_compatible(const ParamSet& expected, const ParamSet& loaded, std::string_view what);

}  // namespace saccade
