#include "vldet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vldet {

Tensor::Tensor(std::vector<std::size_t> shape, DType dtype)
    : shape_(std::move(shape)), dtype_(dtype) {
  for (std::size_t e : shape_) {
    if (e == 0) throw std::invalid_argument("Tensor: zero extent in shape " + shape_to_string(shape_));
  }
  data_.assign(shape_product(shape_), 0.0);
}

Tensor::Tensor(std::initializer_list<std::size_t> shape, DType dtype)
    : Tensor(std::vector<std::size_t>(shape), dtype) {}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  return Tensor(std::move(shape));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return t;
}

Tensor Tensor::from_values(std::vector<std::size_t> shape,
                           std::vector<double> values) {
  Tensor t(std::move(shape));
  if (values.size() != t.size()) {
    throw std::invalid_argument("Tensor::from_values: " +
                                std::to_string(values.size()) +
                                " values for shape " + t.shape_str());
  }
  std::copy(values.begin(), values.end(), t.data());
  return t;
}

void Tensor::fill(double value) {
  std::fill(data_.begin(), data_.end(), value);
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_to_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

namespace {

void put_u64_le(std::ostream& out, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t get_u64_le(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw std::runtime_error("VLDT: truncated extent");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void write_vldt(std::ostream& out, const Tensor& t) {
  out.write("VLDT", 4);
  unsigned char version = 1;
  unsigned char dtype = static_cast<unsigned char>(t.dtype());
  unsigned char rank = static_cast<unsigned char>(t.rank());
  out.put(static_cast<char>(version));
  out.put(static_cast<char>(dtype));
  out.put(static_cast<char>(rank));
  for (std::size_t e : t.shape()) put_u64_le(out, static_cast<uint64_t>(e));
  if (t.dtype() == DType::F64) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      uint64_t bits;
      double v = t[i];
      std::memcpy(&bits, &v, 8);
      put_u64_le(out, bits);
    }
  } else {
    for (std::size_t i = 0; i < t.size(); ++i) {
      float f = static_cast<float>(t[i]);
      uint32_t bits;
      std::memcpy(&bits, &f, 4);
      unsigned char b[4];
      for (int k = 0; k < 4; ++k) b[k] = static_cast<unsigned char>((bits >> (8 * k)) & 0xff);
      out.write(reinterpret_cast<const char*>(b), 4);
    }
  }
  if (!out) throw std::runtime_error("VLDT: write failed");
}

Tensor read_vldt(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "VLDT", 4) != 0)
    throw std::runtime_error("VLDT: bad magic");
  int version = in.get();
  int dtype_code = in.get();
  int rank = in.get();
  if (version != 1) throw std::runtime_error("VLDT: unsupported version " + std::to_string(version));
  if (dtype_code != 0 && dtype_code != 1)
    throw std::runtime_error("VLDT: unknown dtype code " + std::to_string(dtype_code));
  if (rank < 0 || !in) throw std::runtime_error("VLDT: truncated header");
  std::vector<std::size_t> shape(static_cast<std::size_t>(rank));
  for (auto& e : shape) {
    e = static_cast<std::size_t>(get_u64_le(in));
    if (e == 0) throw std::runtime_error("VLDT: zero extent");
  }
  Tensor t(shape, static_cast<DType>(dtype_code));
  if (t.dtype() == DType::F64) {
    for (std::size_t i = 0; i < t.size(); ++i) {
      uint64_t bits = get_u64_le(in);
      double v;
      std::memcpy(&v, &bits, 8);
      t[i] = v;
    }
  } else {
    for (std::size_t i = 0; i < t.size(); ++i) {
      unsigned char b[4];
      in.read(reinterpret_cast<char*>(b), 4);
      if (!in) throw std::runtime_error("VLDT: truncated payload");
      uint32_t bits = 0;
      for (int k = 0; k < 4; ++k) bits |= static_cast<uint32_t>(b[k]) << (8 * k);
      float f;
      std::memcpy(&f, &bits, 4);
      t[i] = static_cast<double>(f);
    }
  }
  return t;
}

void save_vldt(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  write_vldt(out, t);
}

Tensor load_vldt(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for read: " + path);
  return read_vldt(in);
}

uint64_t fnv1a64(const void* data, std::size_t n, uint64_t seed) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

uint64_t hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for read: " + path);
  uint64_t h = 0xcbf29ce484222325ull;
  char buf[65536];
  while (in) {
    in.read(buf, sizeof(buf));
    std::streamsize got = in.gcount();
    if (got > 0) h = fnv1a64(buf, static_cast<std::size_t>(got), h);
  }
  return h;
}

}  // namespace vldet
