#include "vdet/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace vdet::io {

namespace {

void append_u64le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t read_u64le(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

}  // namespace

void append_f64le(std::string& out, double v) { append_u64le(out, std::bit_cast<std::uint64_t>(v)); }
double read_f64le(const char* p) { return std::bit_cast<double>(read_u64le(p)); }

void append_f32le(std::string& out, float v) {
  const auto u = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

float read_f32le(const char* p) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<float>(u);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw ValidationError("write failed for " + path.string());
}

void write_framed(const std::filesystem::path& path, std::string_view magic, const nlohmann::json& header,
                  std::string_view payload) {
  const std::string h = header.dump();
  std::string buf(magic);
  append_u64le(buf, h.size());
  buf += h;
  buf.append(payload.data(), payload.size());
  write_text(path, buf);
}

FramedFile read_framed(const std::filesystem::path& path, std::string_view magic) {
  const std::string bytes = read_text(path);
  if (bytes.size() < magic.size() + 8 || bytes.compare(0, magic.size(), magic) != 0) {
    throw FormatError(path.string() + ": bad magic, not a " + std::string(magic) + " file");
  }
  const std::uint64_t len = read_u64le(bytes.data() + magic.size());
  const std::size_t start = magic.size() + 8;
  if (len > bytes.size() - start) throw FormatError(path.string() + ": truncated header");
  FramedFile f;
  try {
    f.header = nlohmann::json::parse(bytes.substr(start, len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": corrupted header: " + e.what());
  }
  f.payload = bytes.substr(start + len);
  return f;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << v;
  return ss.str();
}

}  // namespace vdet::io
