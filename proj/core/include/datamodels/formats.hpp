#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "datamodels/core_data.hpp"

namespace dm {

// On-disk formats. All integers and floats are little-endian.
//
// Masks ("DMDM"):
//   magic[4] version:u32 m:u64 d:u64 alpha:f64 seed:u64
//   m rows of ceil(d/8) bytes (bit j at byte j/8, bit j%8; pad bits zero)
//   crc32:u32 over every preceding byte
//
// Outputs ("DMOU"):
//   magic[4] version:u32 m:u64 n:u64 output_fn:u32
//   trainer_id_len:u32 trainer_id[len] (UTF-8)
//   m*n values as row-major f32
//   m rows of ceil(n/8) exclusion bytes, packed as in masks
//   crc32:u32
//
// Datamodels ("DMTH"):
//   magic[4] n:u64 d:u64
//   n records of: target_id:u64 bias:f64 nnz:u64 nnz*(index:u64 value:f64)
//   lambda:f64, indices strictly increasing

inline constexpr std::uint32_t kFormatVersion = 1;

std::uint32_t crc32(std::span<const std::uint8_t> bytes,
                    std::uint32_t crc = 0) noexcept;

void write_masks(const MaskMatrix& masks, const std::filesystem::path& path);
MaskMatrix read_masks(const std::filesystem::path& path);

void write_outputs(const OutputMatrix& outputs,
                   const std::filesystem::path& path);
OutputMatrix read_outputs(const std::filesystem::path& path);

/// Only theta, bias, lambda and target_id are stored; the remaining
/// provenance fields come back default-initialized.
void write_datamodels(std::span<const Datamodel> models,
                      const std::filesystem::path& path);
std::vector<Datamodel> read_datamodels(const std::filesystem::path& path);

// In-memory variants used by the file functions and by tests.
std::vector<std::uint8_t> encode_masks(const MaskMatrix& masks);
MaskMatrix decode_masks(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_outputs(const OutputMatrix& outputs);
OutputMatrix decode_outputs(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_datamodels(std::span<const Datamodel> models);
std::vector<Datamodel> decode_datamodels(std::span<const std::uint8_t> bytes);

}  // namespace dm
