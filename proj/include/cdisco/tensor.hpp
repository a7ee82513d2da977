#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace cdisco {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Row-major float32 tensor. The shape may be empty (a scalar); every listed
// dimension is positive and data().size() == shape_size(shape()) always.
class DenseTensor {
 public:
  DenseTensor() : data_(1, 0.0f) {}
  explicit DenseTensor(Shape shape);
  DenseTensor(Shape shape, std::vector<float> data);

  static DenseTensor scalar(float value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const;

  std::span<const float> data() const noexcept { return data_; }
  std::span<float> mutable_data() noexcept { return data_; }

  float operator[](std::size_t i) const { return data_[i]; }
  float& operator[](std::size_t i) { return data_[i]; }

  // Flat offset of a multi-index; bounds-checked.
  std::size_t offset(std::initializer_list<std::size_t> index) const;
  float at(std::initializer_list<std::size_t> index) const {
    return data_[offset(index)];
  }
  float& at(std::initializer_list<std::size_t> index) {
    return data_[offset(index)];
  }

  // Rejects NaN/Inf; constructors call this, mutable writers should too.
  void check_finite() const;

  DenseTensor reshaped(Shape shape) const;

  bool operator==(const DenseTensor& other) const;

 private:
  Shape shape_;
  std::vector<float> data_;
};

// features' leading axis indexes samples.
struct LabeledBatch {
  DenseTensor features;
  std::vector<int> labels;
  int class_count = 0;

  std::size_t size() const { return labels.size(); }
  void validate() const;
  // Feature slice of one sample as a tensor with the leading axis dropped.
  DenseTensor sample(std::size_t i) const;
};

// [H, W, D] -> [D], mean over spatial positions.
DenseTensor pool_gap(const DenseTensor& features);

DenseTensor elementwise_product(const DenseTensor& a, const DenseTensor& b);

// Nearest-rank percentile: the value at rank ceil(p * n) of the ascending
// order, with rank clamped to [1, n].
double percentile(std::span<const double> values, double p);

// CDAD container: "CDAD", u32 version = 1, u32 rank, u64 dims, f32 payload.
// All fields little-endian.
inline constexpr std::uint32_t kCdadVersion = 1;

void write_tensor(const DenseTensor& tensor, const std::filesystem::path& path);
DenseTensor read_tensor(const std::filesystem::path& path);

// Binary P5 greymap. Unsigned maps are min-max scaled; signed maps are
// scaled symmetrically around zero so that 0 renders as mid-gray.
void write_pgm(const DenseTensor& map, const std::filesystem::path& path,
               bool signed_map = false);
std::vector<std::uint8_t> pgm_pixels(const DenseTensor& map,
                                     bool signed_map = false);

}  // namespace cdisco
