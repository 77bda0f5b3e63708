#include "cffm/cft.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace cffm::cft {

namespace {

constexpr char kMagic[4] = {'C', 'F', 'T', '1'};

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::F32; }
template <>
constexpr DType dtype_of<double>() { return DType::F64; }
template <>
constexpr DType dtype_of<std::uint8_t>() { return DType::U8; }

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::F32: return 4;
    case DType::F64: return 8;
    case DType::U8: return 1;
  }
  throw FormatError("unknown CFT1 dtype code " + std::to_string(static_cast<int>(d)));
}

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  out.insert(out.end(), raw, raw + sizeof(T));
}

template <typename T>
T get_le(const std::uint8_t* p) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
  T v;
  std::memcpy(&v, raw, sizeof(T));
  return v;
}

struct Header {
  DType dtype;
  Shape shape;
  std::size_t payload_offset;
};

Header parse_header(const std::vector<std::uint8_t>& b) {
  if (b.size() < 6 || std::memcmp(b.data(), kMagic, 4) != 0) throw FormatError("missing CFT1 magic");
  Header h;
  h.dtype = static_cast<DType>(b[4]);
  dtype_size(h.dtype);
  const std::size_t rank = b[5];
  if (rank == 0) throw FormatError("CFT1 rank must be >= 1");
  if (b.size() < 6 + 4 * rank) throw FormatError("truncated CFT1 header");
  for (std::size_t i = 0; i < rank; ++i) {
    const auto e = get_le<std::uint32_t>(b.data() + 6 + 4 * i);
    if (e == 0) throw FormatError("CFT1 extent of zero");
    h.shape.push_back(e);
  }
  h.payload_offset = 6 + 4 * rank;
  if (b.size() != h.payload_offset + shape_numel(h.shape) * dtype_size(h.dtype)) {
    throw FormatError("CFT1 payload size does not match header " + shape_str(h.shape));
  }
  return h;
}

}  // namespace

template <typename T>
std::vector<std::uint8_t> encode(const Tensor<T>& t) {
  if (t.rank() > 255) throw FormatError("rank too large for CFT1");
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.push_back(static_cast<std::uint8_t>(dtype_of<T>()));
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  for (auto e : t.shape()) {
    if (e > UINT32_MAX) throw FormatError("extent too large for CFT1");
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e));
  }
  out.reserve(out.size() + t.size() * sizeof(T));
  for (T v : t.data()) put_le<T>(out, v);
  return out;
}

DType peek_dtype(const std::vector<std::uint8_t>& bytes) { return parse_header(bytes).dtype; }

template <typename T>
Tensor<T> decode(const std::vector<std::uint8_t>& bytes) {
  const Header h = parse_header(bytes);
  const std::uint8_t* p = bytes.data() + h.payload_offset;
  const std::size_t n = shape_numel(h.shape);
  std::vector<T> data(n);
  if constexpr (std::is_same_v<T, std::uint8_t>) {
    if (h.dtype != DType::U8) throw FormatError("expected a u8 CFT1 tensor");
    std::copy(p, p + n, data.begin());
  } else {
    switch (h.dtype) {
      case DType::F32:
        for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<T>(get_le<float>(p + 4 * i));
        break;
      case DType::F64:
        for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<T>(get_le<double>(p + 8 * i));
        break;
      case DType::U8:
        throw FormatError("expected a floating CFT1 tensor, found u8");
    }
  }
  return Tensor<T>(h.shape, std::move(data));
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename T>
void save(const std::filesystem::path& path, const Tensor<T>& t) {
  const auto bytes = encode(t);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

template <typename T>
Tensor<T> load(const std::filesystem::path& path) {
  return decode<T>(read_bytes(path));
}

#define CFFM_INSTANTIATE(T)                                               \
  template std::vector<std::uint8_t> encode(const Tensor<T>&);            \
  template Tensor<T> decode(const std::vector<std::uint8_t>&);            \
  template void save(const std::filesystem::path&, const Tensor<T>&);     \
  template Tensor<T> load(const std::filesystem::path&);

CFFM_INSTANTIATE(float)
CFFM_INSTANTIATE(double)
CFFM_INSTANTIATE(std::uint8_t)

#undef CFFM_INSTANTIATE

}  // namespace cffm::cft
