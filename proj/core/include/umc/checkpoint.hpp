#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "umc/params.hpp"

namespace umc {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "UMCK", u32 version, u32 tensor count, then per tensor (in name order):
/// u32 name length, name bytes, u32 rank, rank x u32 dims, float32 data.
/// All integers and floats are little-endian.
std::vector<std::uint8_t> encode_checkpoint(const ParameterStore<float>& params);
ParameterStore<float> decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin = "checkpoint");

void save_checkpoint(const std::filesystem::path& path, const ParameterStore<float>& params);
ParameterStore<float> load_checkpoint(const std::filesystem::path& path);

/// Data error unless `params` holds exactly the declared names and shapes.
void check_against_specs(const ParameterStore<float>& params, const std::vector<ParamSpec>& specs,
                         const std::string& origin);

}  // namespace umc
