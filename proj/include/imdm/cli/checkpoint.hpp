#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "imdm/denoiser.hpp"

// Binary model checkpoint, little-endian throughout:
//
//   "IMDM"  u32 version  u32 kind (0 mdm, 1 imdm)
//   u32 n_data  u32 length  u32 d_embed  u32 width
//   u32 noise_dim  u32 noise_distribution (0 uniform, 1 gaussian)  f64 noise_scale
//   u32 entries, then per entry: u32 name_len, name bytes, u32 rank, u64 dims[rank]
//   u32 CRC32 of every preceding byte
//   u64 weight count, f64 weights in manifest order
//   u32 CRC32 of the weight block
namespace imdm::cli {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<unsigned char> encode_checkpoint(const DenoiserParams& params);
DenoiserParams decode_checkpoint(const std::vector<unsigned char>& bytes);

void save_checkpoint(const DenoiserParams& params, const std::filesystem::path& path);
DenoiserParams load_checkpoint(const std::filesystem::path& path);

std::uint32_t crc32_of(const unsigned char* data, std::size_t size);

}  // namespace imdm::cli
