#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "vdet/tensor.hpp"

namespace vdet::io {

/// Framed file: 8-byte magic, u64 little-endian header length, JSON header, raw payload.
struct FramedFile {
  nlohmann::json header;
  std::string payload;
};

void write_framed(const std::filesystem::path& path, std::string_view magic, const nlohmann::json& header,
                  std::string_view payload);
FramedFile read_framed(const std::filesystem::path& path, std::string_view magic);

void append_f64le(std::string& out, double v);
double read_f64le(const char* p);
void append_f32le(std::string& out, float v);
float read_f32le(const char* p);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

/// 64-bit FNV-1a, used for manifest checksums.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

}  // namespace vdet::io
