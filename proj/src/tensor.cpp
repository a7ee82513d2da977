#include "cdisco/tensor.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include "cdisco/error.hpp"

namespace cdisco {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShape: return "shape error";
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kIo: return "I/O error";
    case ErrorCode::kBadMagic: return "bad magic";
    case ErrorCode::kVersionMismatch: return "version mismatch";
    case ErrorCode::kTruncated: return "truncated payload";
    case ErrorCode::kMissingFile: return "missing file";
    case ErrorCode::kSchema: return "schema error";
    case ErrorCode::kValidation: return "validation error";
    case ErrorCode::kNotFound: return "not found";
    case ErrorCode::kNumerical: return "numerical failure";
  }
  return "error";
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

void check_dims(const Shape& shape) {
  for (auto d : shape) {
    if (d == 0) {
      throw Error(ErrorCode::kShape,
                  "zero-sized dimension in " + shape_to_string(shape));
    }
  }
}

}  // namespace

DenseTensor::DenseTensor(Shape shape) : shape_(std::move(shape)) {
  check_dims(shape_);
  data_.assign(shape_size(shape_), 0.0f);
}

DenseTensor::DenseTensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_dims(shape_);
  if (data_.size() != shape_size(shape_)) {
    throw Error(ErrorCode::kShape, "data length " + std::to_string(data_.size()) +
                                       " does not match shape " +
                                       shape_to_string(shape_));
  }
  check_finite();
}

DenseTensor DenseTensor::scalar(float value) { return DenseTensor({}, {value}); }

std::size_t DenseTensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw Error(ErrorCode::kShape, "axis " + std::to_string(axis) +
                                       " out of range for rank " +
                                       std::to_string(shape_.size()));
  }
  return shape_[axis];
}

std::size_t DenseTensor::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw Error(ErrorCode::kShape, "index rank mismatch");
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) throw Error(ErrorCode::kShape, "index out of range");
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return flat;
}

void DenseTensor::check_finite() const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw Error(ErrorCode::kInvalidArgument,
                  "non-finite value at flat index " + std::to_string(i));
    }
  }
}

DenseTensor DenseTensor::reshaped(Shape shape) const {
  return DenseTensor(std::move(shape), data_);
}

bool DenseTensor::operator==(const DenseTensor& other) const {
  if (shape_ != other.shape_) return false;
  // Bitwise comparison so that round trips are checked exactly.
  return std::equal(data_.begin(), data_.end(), other.data_.begin(),
                    [](float a, float b) {
                      return std::bit_cast<std::uint32_t>(a) ==
                             std::bit_cast<std::uint32_t>(b);
                    });
}

void LabeledBatch::validate() const {
  if (labels.empty()) throw Error(ErrorCode::kValidation, "batch has no samples");
  if (class_count < 1) throw Error(ErrorCode::kValidation, "class_count < 1");
  if (features.rank() < 1 || features.dim(0) != labels.size()) {
    throw Error(ErrorCode::kValidation,
                "features leading axis does not match label count");
  }
  for (int y : labels) {
    if (y < 0 || y >= class_count) {
      throw Error(ErrorCode::kValidation,
                  "label " + std::to_string(y) + " outside [0, K)");
    }
  }
}

DenseTensor LabeledBatch::sample(std::size_t i) const {
  const Shape& s = features.shape();
  Shape inner(s.begin() + 1, s.end());
  const std::size_t stride = shape_size(inner);
  auto src = features.data().subspan(i * stride, stride);
  return DenseTensor(std::move(inner), std::vector<float>(src.begin(), src.end()));
}

DenseTensor pool_gap(const DenseTensor& features) {
  if (features.rank() != 3) {
    throw Error(ErrorCode::kShape, "pool_gap expects [H, W, D], got " +
                                       shape_to_string(features.shape()));
  }
  const std::size_t hw = features.dim(0) * features.dim(1);
  const std::size_t d = features.dim(2);
  std::vector<double> acc(d, 0.0);
  auto data = features.data();
  for (std::size_t p = 0; p < hw; ++p) {
    for (std::size_t j = 0; j < d; ++j) acc[j] += data[p * d + j];
  }
  std::vector<float> out(d);
  for (std::size_t j = 0; j < d; ++j) {
    out[j] = static_cast<float>(acc[j] / static_cast<double>(hw));
  }
  return DenseTensor({d}, std::move(out));
}

DenseTensor elementwise_product(const DenseTensor& a, const DenseTensor& b) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::kShape, "elementwise_product shape mismatch " +
                                       shape_to_string(a.shape()) + " vs " +
                                       shape_to_string(b.shape()));
  }
  std::vector<float> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return DenseTensor(a.shape(), std::move(out));
}

double percentile(std::span<const double> values, double p) {
  if (values.empty()) throw Error(ErrorCode::kInvalidArgument, "percentile of empty input");
  if (!(p >= 0.0 && p <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "percentile fraction outside [0, 1]");
  }
  const std::size_t n = values.size();
  // The small slack keeps products such as 0.7 * 10 from rounding up a rank.
  auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n) - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, n);
  std::vector<double> sorted(values.begin(), values.end());
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(rank - 1),
                   sorted.end());
  return sorted[rank - 1];
}

namespace {

constexpr std::array<char, 4> kMagic = {'C', 'D', 'A', 'D'};

template <typename T>
void put_le(std::ostream& os, T value) {
  std::array<unsigned char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFF);
  }
  os.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <typename T>
T get_le(std::istream& is, const std::filesystem::path& path) {
  std::array<unsigned char, sizeof(T)> bytes{};
  is.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (is.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw Error(ErrorCode::kTruncated, "header cut short in " + path.string());
  }
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    value |= static_cast<T>(bytes[i]) << (8 * i);
  }
  return value;
}

}  // namespace

void write_tensor(const DenseTensor& tensor, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  os.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(os, kCdadVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(tensor.rank()));
  for (auto d : tensor.shape()) put_le<std::uint64_t>(os, d);
  for (float v : tensor.data()) put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(v));
  if (!os) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

DenseTensor read_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::kMissingFile, "cannot open " + path.string());
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  if (is.gcount() != 4) throw Error(ErrorCode::kTruncated, "no header in " + path.string());
  if (magic != kMagic) throw Error(ErrorCode::kBadMagic, path.string() + " is not a CDAD file");
  const auto version = get_le<std::uint32_t>(is, path);
  if (version != kCdadVersion) {
    throw Error(ErrorCode::kVersionMismatch,
                "CDAD version " + std::to_string(version) + " in " + path.string());
  }
  const auto rank = get_le<std::uint32_t>(is, path);
  if (rank > 16) throw Error(ErrorCode::kShape, "implausible rank in " + path.string());
  Shape shape(rank);
  for (auto& d : shape) d = static_cast<std::size_t>(get_le<std::uint64_t>(is, path));
  for (auto d : shape) {
    if (d == 0) throw Error(ErrorCode::kShape, "zero dimension in " + path.string());
  }
  const std::size_t n = shape_size(shape);
  std::vector<unsigned char> raw(n * 4);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(is.gcount()) != raw.size()) {
    throw Error(ErrorCode::kTruncated, "payload cut short in " + path.string());
  }
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    for (std::size_t b = 0; b < 4; ++b) bits |= std::uint32_t{raw[4 * i + b]} << (8 * b);
    data[i] = std::bit_cast<float>(bits);
  }
  return DenseTensor(std::move(shape), std::move(data));
}

std::vector<std::uint8_t> pgm_pixels(const DenseTensor& map, bool signed_map) {
  if (map.rank() != 2) {
    throw Error(ErrorCode::kShape, "PGM export expects a rank-2 map, got " +
                                       shape_to_string(map.shape()));
  }
  map.check_finite();
  auto data = map.data();
  std::vector<std::uint8_t> pixels(data.size(), 128);
  if (signed_map) {
    double peak = 0.0;
    for (float v : data) peak = std::max(peak, std::abs(static_cast<double>(v)));
    if (peak == 0.0) return pixels;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double scaled = 127.5 + 127.5 * static_cast<double>(data[i]) / peak;
      pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(scaled), 0L, 255L));
    }
    return pixels;
  }
  const auto [lo, hi] = std::minmax_element(data.begin(), data.end());
  const double range = static_cast<double>(*hi) - static_cast<double>(*lo);
  if (range == 0.0) return pixels;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double scaled = (static_cast<double>(data[i]) - *lo) / range * 255.0;
    pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(scaled), 0L, 255L));
  }
  return pixels;
}

void write_pgm(const DenseTensor& map, const std::filesystem::path& path,
               bool signed_map) {
  const auto pixels = pgm_pixels(map, signed_map);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  os << "P5\n" << map.dim(1) << ' ' << map.dim(0) << "\n255\n";
  os.write(reinterpret_cast<const char*>(pixels.data()),
           static_cast<std::streamsize>(pixels.size()));
  if (!os) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

}  // namespace cdisco
