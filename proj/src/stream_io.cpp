#include "wisense/stream_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace wisense::io {

namespace {

static_assert(std::endian::native == std::endian::little, "CSIS I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw std::runtime_error("CSIS: truncated file");
  T value;
  std::memcpy(&value, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_csi_stream(const std::filesystem::path& path, const synth::CsiStream& stream) {
  const auto T = static_cast<std::uint32_t>(stream.samples.rows());
  std::string out;
  out.reserve(36 + static_cast<std::size_t>(stream.samples.size()) * 8);
  out.append("CSIS", 4);
  put<std::uint32_t>(out, kCsisVersion);
  put<std::uint32_t>(out, T);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(stream.n_links));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(stream.n_subcarriers));
  put<double>(out, stream.packet_rate);
  put<std::uint64_t>(out, stream.seed);
  for (Index t = 0; t < stream.samples.rows(); ++t) {
    for (Index c = 0; c < stream.samples.cols(); ++c) {
      put<float>(out, static_cast<float>(stream.samples(t, c).real()));
      put<float>(out, static_cast<float>(stream.samples(t, c).imag()));
    }
  }
  write_file_atomic(path, out);
}

synth::CsiStream read_csi_stream(const std::filesystem::path& path) {
  const std::string in = read_file(path);
  if (in.size() < 4 || in.compare(0, 4, "CSIS") != 0) throw std::runtime_error("CSIS: bad magic in " + path.string());
  std::size_t pos = 4;
  const auto version = take<std::uint32_t>(in, pos);
  if (version != kCsisVersion) throw std::runtime_error("CSIS: unsupported version " + std::to_string(version));
  const auto T = take<std::uint32_t>(in, pos);
  const auto n_links = take<std::uint32_t>(in, pos);
  const auto n_sub = take<std::uint32_t>(in, pos);
  synth::CsiStream s;
  s.packet_rate = take<double>(in, pos);
  s.seed = take<std::uint64_t>(in, pos);
  s.n_links = static_cast<int>(n_links);
  s.n_subcarriers = static_cast<int>(n_sub);
  const std::size_t count = static_cast<std::size_t>(T) * n_links * n_sub;
  if (in.size() != pos + count * 8) throw std::runtime_error("CSIS: payload size mismatch in " + path.string());
  s.samples.resize(T, static_cast<Index>(n_links) * n_sub);
  for (Index t = 0; t < s.samples.rows(); ++t) {
    for (Index c = 0; c < s.samples.cols(); ++c) {
      const float re = take<float>(in, pos);
      const float im = take<float>(in, pos);
      s.samples(t, c) = synth::Complex(re, im);
    }
  }
  return s;
}

}  // namespace wisense::io
