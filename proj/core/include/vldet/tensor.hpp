#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <iosfwd>
#include <string>
#include <vector>

namespace vldet {

// Serialization width. All in-memory arithmetic runs in double; the tag
// controls how a tensor is written in the VLDT container and survives
// load/save round trips.
enum class DType : uint8_t { F32 = 0, F64 = 1 };

// Dense row-major n-d array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, DType dtype = DType::F64);
  Tensor(std::initializer_list<std::size_t> shape, DType dtype = DType::F64);

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double value);
  static Tensor from_values(std::vector<std::size_t> shape,
                            std::vector<double> values);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t size() const { return data_.size(); }
  DType dtype() const { return dtype_; }
  void set_dtype(DType d) { dtype_ = d; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // 2-d / 3-d accessors (row-major).
  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  void fill(double value);
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  std::string shape_str() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  DType dtype_ = DType::F64;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);
std::string shape_to_string(const std::vector<std::size_t>& shape);

// "VLDT" binary tensor encoding: magic bytes, u8 version=1, u8 dtype code
// (0=f32, 1=f64), u8 rank, rank little-endian u64 extents, then raw
// little-endian scalars at the tagged width.
void write_vldt(std::ostream& out, const Tensor& t);
Tensor read_vldt(std::istream& in);
void save_vldt(const std::string& path, const Tensor& t);
Tensor load_vldt(const std::string& path);

// FNV-1a over raw bytes; used for content-hash comparisons in tools/tests.
uint64_t fnv1a64(const void* data, std::size_t n, uint64_t seed = 0xcbf29ce484222325ull);
uint64_t hash_file(const std::string& path);

}  // namespace vldet
