#include "chunkscope/f32io.hpp"

#include <bit>
#include <cstdint>
#include <fstream>

#include "chunkscope/error.hpp"

namespace chunkscope {

namespace {

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
}

}  // namespace

void write_f32(const std::filesystem::path& path, std::span<const double> values) {
  std::vector<std::uint32_t> buf(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    buf[i] = to_little(std::bit_cast<std::uint32_t>(static_cast<float>(values[i])));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(std::uint32_t)));
  if (!out) throw Error(ErrorKind::Io, "failed writing " + path.string());
}

std::vector<double> read_f32(const std::filesystem::path& path, std::size_t expected_count) {
  std::error_code ec;
  const auto actual = std::filesystem::file_size(path, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot stat " + path.string());
  if (actual != expected_count * 4)
    throw Error(ErrorKind::Corruption, path.string() + ": declared " +
                                           std::to_string(expected_count * 4) + " bytes, actual " +
                                           std::to_string(actual));
  std::vector<std::uint32_t> buf(expected_count);
  std::ifstream in(path, std::ios::binary);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(actual));
  if (!in) throw Error(ErrorKind::Io, "failed reading " + path.string());
  std::vector<double> out(expected_count);
  for (std::size_t i = 0; i < expected_count; ++i)
    out[i] = std::bit_cast<float>(to_little(buf[i]));
  return out;
}

}  // namespace chunkscope
