#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "hdr/image.h"

namespace hdr::io {

// 8-bit PNG codec. Gray images are written as 8-bit grayscale, three-channel images as RGB;
// values are rounded to the nearest k/255 level.
std::vector<std::uint8_t> encode_png(const Image& image);
Image decode_png(std::span<const std::uint8_t> bytes, int channels = 3);

Image read_png(const std::filesystem::path& path, int channels = 3);
void write_png(const std::filesystem::path& path, const Image& image);

// Masks are stored as 8-bit gray PNG with values 0/255.
void write_mask_png(const std::filesystem::path& path, const Mask& mask);
Mask read_mask_png(const std::filesystem::path& path);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace hdr::io
