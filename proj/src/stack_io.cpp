#include "ulm/stack_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

namespace ulm {

namespace le {

void put_u32(std::vector<std::uint8_t> &out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFFu));
}

void put_f32(std::vector<std::uint8_t> &out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(in[offset + static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

float get_f32(std::span<const std::uint8_t> in, std::size_t offset) {
  return std::bit_cast<float>(get_u32(in, offset));
}

} // namespace le

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad())
    throw IoError("read failure on '" + path.string() + "'");
  return bytes;
}

void write_file_bytes(const std::filesystem::path &path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char *>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out)
    throw IoError("write failure on '" + path.string() + "'");
}

FrameStack decode_stack(std::span<const std::uint8_t> bytes) {
  auto offset_msg = [](std::size_t off) { return " at byte offset " + std::to_string(off); };
  if (bytes.size() < kStackHeaderBytes)
    throw FormatError("truncated header: " + std::to_string(bytes.size()) + " bytes" +
                      offset_msg(bytes.size()));
  if (std::memcmp(bytes.data(), "ULMF", 4) != 0)
    throw FormatError("bad magic (expected \"ULMF\")" + offset_msg(0));
  const std::uint32_t version = le::get_u32(bytes, 4);
  if (version != kStackFormatVersion)
    throw FormatError("unsupported version " + std::to_string(version) + offset_msg(4));
  const std::uint32_t n = le::get_u32(bytes, 8);
  const std::uint32_t h = le::get_u32(bytes, 12);
  const std::uint32_t w = le::get_u32(bytes, 16);
  const float pixel_size = le::get_f32(bytes, 20);
  const float frame_rate = le::get_f32(bytes, 24);
  if (h == 0 || w == 0 || h > 1u << 20 || w > 1u << 20)
    throw FormatError("invalid frame geometry " + std::to_string(h) + "x" + std::to_string(w) +
                      offset_msg(12));
  if (!(pixel_size > 0.0f) || !std::isfinite(pixel_size))
    throw FormatError("pixel_size must be positive and finite" + offset_msg(20));
  if (!(frame_rate > 0.0f) || !std::isfinite(frame_rate))
    throw FormatError("frame_rate must be positive and finite" + offset_msg(24));

  const std::uint64_t count = std::uint64_t{n} * h * w;
  const std::uint64_t payload = bytes.size() - kStackHeaderBytes;
  if (payload / 4 < count)
    throw FormatError("truncated payload: header promises " + std::to_string(count) +
                      " floats, file holds " + std::to_string(payload / 4) +
                      offset_msg(kStackHeaderBytes + (payload / 4) * 4));
  if (payload != count * 4)
    throw FormatError("trailing bytes after payload" + offset_msg(kStackHeaderBytes + count * 4));

  std::vector<float> data(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t off = kStackHeaderBytes + 4 * i;
    const float v = le::get_f32(bytes, off);
    if (!std::isfinite(v))
      throw FormatError("non-finite intensity" + offset_msg(off));
    if (v < 0.0f)
      throw FormatError("negative intensity" + offset_msg(off));
    data[i] = v;
  }
  return FrameStack(n, static_cast<int>(h), static_cast<int>(w), pixel_size, frame_rate,
                    std::move(data));
}

FrameStack read_stack(const std::filesystem::path &path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_stack(bytes);
  } catch (const FormatError &e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_stack(const FrameStack &stack) {
  // FrameStack construction already enforced finiteness; re-check for
  // default-constructed or moved-from instances.
  for (std::size_t i = 0; i < stack.data().size(); ++i)
    if (!std::isfinite(stack.data()[i]))
      throw ContractError("refusing to write non-finite intensity at element " + std::to_string(i));
  std::vector<std::uint8_t> out{'U', 'L', 'M', 'F'};
  out.reserve(kStackHeaderBytes + 4 * stack.data().size());
  le::put_u32(out, kStackFormatVersion);
  le::put_u32(out, static_cast<std::uint32_t>(stack.n_frames()));
  le::put_u32(out, static_cast<std::uint32_t>(stack.height()));
  le::put_u32(out, static_cast<std::uint32_t>(stack.width()));
  le::put_f32(out, stack.pixel_size_mm());
  le::put_f32(out, stack.frame_rate_hz());
  for (float v : stack.data())
    le::put_f32(out, v);
  return out;
}

void write_stack(const FrameStack &stack, const std::filesystem::path &path) {
  write_file_bytes(path, encode_stack(stack));
}

} // namespace ulm
