#include "wisense/checkpoint.hpp"

#include "wisense/stream_io.hpp"

#include <bit>
#include <cstring>
#include <limits>

namespace wisense::ckpt {

namespace {

static_assert(std::endian::native == std::endian::little, "WSLM I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw std::runtime_error("WSLM: truncated checkpoint");
  T value;
  std::memcpy(&value, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

std::string encode(const TensorMap& tensors) {
  std::string out = "WSLM";
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) {
    if (name.empty() || name.size() > std::numeric_limits<std::uint16_t>::max())
      throw std::invalid_argument("WSLM: bad tensor name length");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, 0);
    put<std::uint8_t>(out, 2);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
    for (Index i = 0; i < m.size(); ++i) put<float>(out, static_cast<float>(m.data()[i]));
  }
  return out;
}

TensorMap decode(const std::string& bytes) {
  if (bytes.size() < 12 || bytes.compare(0, 4, "WSLM") != 0) throw std::runtime_error("WSLM: bad magic");
  std::size_t pos = 4;
  const auto version = take<std::uint32_t>(bytes, pos);
  if (version != kVersion) throw std::runtime_error("WSLM: unsupported version " + std::to_string(version));
  const auto count = take<std::uint32_t>(bytes, pos);
  TensorMap out;
  for (std::uint32_t n = 0; n < count; ++n) {
    const auto len = take<std::uint16_t>(bytes, pos);
    if (pos + len > bytes.size()) throw std::runtime_error("WSLM: truncated name");
    std::string name = bytes.substr(pos, len);
    pos += len;
    const auto dtype = take<std::uint8_t>(bytes, pos);
    if (dtype != 0) throw std::runtime_error("WSLM: tensor " + name + " has unsupported dtype");
    const auto rank = take<std::uint8_t>(bytes, pos);
    std::vector<std::uint32_t> shape(rank);
    for (auto& d : shape) d = take<std::uint32_t>(bytes, pos);
    Index rows = 1, cols = 1;
    if (rank == 1) {
      cols = shape[0];
    } else if (rank == 2) {
      rows = shape[0];
      cols = shape[1];
    } else if (rank > 2) {
      // Higher ranks are folded to [d0 * ... * d(n-2), d(n-1)].
      for (std::size_t i = 0; i + 1 < shape.size(); ++i) rows *= shape[i];
      cols = shape.back();
    }
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = take<float>(bytes, pos);
    if (!out.emplace(std::move(name), std::move(m)).second) throw std::runtime_error("WSLM: duplicate tensor name");
  }
  if (pos != bytes.size()) throw std::runtime_error("WSLM: trailing bytes");
  return out;
}

void save(const std::filesystem::path& path, const TensorMap& tensors) { io::write_file_atomic(path, encode(tensors)); }

TensorMap load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("checkpoint not found: " + path.string());
  return decode(io::read_file(path));
}

TensorMap gather(const nn::ParamList& params) {
  TensorMap out;
  for (auto* p : params)
    if (!out.emplace(p->name, p->value).second) throw std::logic_error("duplicate parameter name " + p->name);
  return out;
}

void scatter(const TensorMap& tensors, const nn::ParamList& params) {
  for (auto* p : params) {
    auto it = tensors.find(p->name);
    if (it == tensors.end()) throw std::runtime_error("checkpoint lacks tensor " + p->name);
    require_shape(it->second.rows() == p->value.rows() && it->second.cols() == p->value.cols(),
                  "checkpoint tensor " + p->name + " is " + dims(it->second) + ", model expects " + dims(p->value));
    p->value = it->second;
  }
}

void round_to_f32(const nn::ParamList& params) {
  for (auto* p : params) p->value = p->value.cast<float>().cast<double>();
}

}  // namespace wisense::ckpt
