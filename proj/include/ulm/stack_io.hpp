#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ulm/core.hpp"

namespace ulm {

// ULMF frame-stack container:
//   "ULMF" | u32 version=1 | u32 n_frames | u32 height | u32 width
//   | f32 pixel_size_mm | f32 frame_rate_hz | n*h*w f32 (frame-major, row-major)
// All multi-byte fields little-endian.
inline constexpr std::uint32_t kStackFormatVersion = 1;
inline constexpr std::size_t kStackHeaderBytes = 28;

// Throws FormatError (naming the byte offset) on bad magic, unsupported
// version, truncated payload or invalid values; IoError when unreadable.
FrameStack read_stack(const std::filesystem::path &path);
FrameStack decode_stack(std::span<const std::uint8_t> bytes);

void write_stack(const FrameStack &stack, const std::filesystem::path &path);
std::vector<std::uint8_t> encode_stack(const FrameStack &stack);

namespace le {
void put_u32(std::vector<std::uint8_t> &out, std::uint32_t v);
void put_f32(std::vector<std::uint8_t> &out, float v);
std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t offset);
float get_f32(std::span<const std::uint8_t> in, std::size_t offset);
} // namespace le

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path &path);
void write_file_bytes(const std::filesystem::path &path, std::span<const std::uint8_t> bytes);

} // namespace ulm
