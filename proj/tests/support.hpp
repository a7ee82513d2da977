#pragma once

#include <doctest.h>

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cdisco/activation_store.hpp"
#include "cdisco/error.hpp"
#include "cdisco/linalg.hpp"
#include "cdisco/tensor.hpp"

namespace test {

// Asserts that `expr` throws a cdisco::Error carrying `expected`.
#define CHECK_CODE(expr, expected)                                          \
  do {                                                                      \
    bool thrown_ = false;                                                   \
    try {                                                                   \
      (void)(expr);                                                         \
    } catch (const cdisco::Error& e_) {                                     \
      thrown_ = true;                                                       \
      CHECK_MESSAGE(e_.code() == (expected), e_.what());                    \
    }                                                                       \
    CHECK_MESSAGE(thrown_, "expected an error from " #expr);                \
  } while (0)

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("cdisco_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::vector<float> normal_floats(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<float> out(n);
  for (auto& x : out) x = static_cast<float>(dist(rng));
  return out;
}

inline cdisco::Matrix normal_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  cdisco::Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = dist(rng);
  return m;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Valid random dump: labels cycle through the classes, every class tracked,
// optional spatial maps whose GAP reproduces the pooled rows.
inline cdisco::ActivationDump random_dump(std::size_t n, std::size_t d, int k, std::mt19937_64& rng,
                                          bool spatial = false, std::size_t h = 2, std::size_t w = 2) {
  cdisco::ActivationDump dump;
  dump.layer_name = "layer";
  dump.class_count = k;
  for (int c = 0; c < k; ++c) dump.tracked_classes.push_back(c);
  for (std::size_t i = 0; i < n; ++i) {
    dump.labels.push_back(static_cast<int>(i % static_cast<std::size_t>(k)));
    dump.sample_ids.push_back("s" + std::to_string(i));
  }
  dump.gradients = cdisco::DenseTensor({n, static_cast<std::size_t>(k), d},
                                       normal_floats(n * static_cast<std::size_t>(k) * d, rng));
  if (spatial) {
    cdisco::DenseTensor sp({n, h, w, d}, normal_floats(n * h * w * d, rng));
    std::vector<float> pooled;
    for (std::size_t i = 0; i < n; ++i) {
      const cdisco::DenseTensor p = cdisco::pool_gap(
          cdisco::DenseTensor({h, w, d}, std::vector<float>(sp.data().begin() + static_cast<std::ptrdiff_t>(i * h * w * d),
                                                            sp.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * h * w * d))));
      pooled.insert(pooled.end(), p.data().begin(), p.data().end());
    }
    dump.pooled_activations = cdisco::DenseTensor({n, d}, std::move(pooled));
    dump.spatial_activations = std::move(sp);
    dump.sensitivity_convention = cdisco::SensitivityConvention::kPooledProduct;
  } else {
    dump.pooled_activations = cdisco::DenseTensor({n, d}, normal_floats(n * d, rng));
  }
  return dump;
}

}  // namespace test
