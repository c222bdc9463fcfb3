#pragma once

// Dense row-major tensors of 64-bit floats, plus the handful of matrix
// kernels everything else is built from. Tensors are plain values; ops
// return fresh tensors.

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <cstring>
#include <initializer_list>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace lrdrop {

// Raised when a computation leaves the finite-float domain (NaN/Inf).
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (checked_numel(shape_) != data_.size())
      throw std::invalid_argument("Tensor: shape does not match data length");
  }

  static Tensor vec(std::initializer_list<double> v) {
    return Tensor({v.size()}, std::vector<double>(v));
  }

  static Tensor mat(std::initializer_list<std::initializer_list<double>> rows) {
    std::size_t r = rows.size();
    std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw std::invalid_argument("Tensor::mat: ragged rows");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  static Tensor full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }

  std::size_t rows() const { require_2d(); return shape_[0]; }
  std::size_t cols() const { require_2d(); return shape_[1]; }

  double& at(std::size_t i, std::size_t j) { require_2d(); return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { require_2d(); return data_[i * shape_[1] + j]; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  const std::vector<double>& values() const { return data_; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  Tensor reshaped(std::vector<std::size_t> shape) const {
    if (checked_numel(shape) != numel())
      throw std::invalid_argument("Tensor::reshaped: element count mismatch");
    return Tensor(std::move(shape), data_);
  }

 private:
  static std::size_t checked_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
      if (d == 0) throw std::invalid_argument("Tensor: zero extent");
      n *= d;
    }
    return n;
  }

  void require_2d() const {
    if (shape_.size() != 2) throw std::invalid_argument("Tensor: 2-D access on non-2-D tensor");
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// Named parameter blocks; sorted iteration keeps every consumer deterministic.
using ParamMap = std::map<std::string, Tensor>;
using GradMap = std::map<std::string, Tensor>;

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.same_shape(b) &&
         (a.numel() == 0 ||
          std::memcmp(a.data(), b.data(), a.numel() * sizeof(double)) == 0);
}

inline bool bitwise_equal(const ParamMap& a, const ParamMap& b) {
  if (a.size() != b.size()) return false;
  auto it = b.begin();
  for (const auto& [name, t] : a) {
    if (it->first != name || !bitwise_equal(t, it->second)) return false;
    ++it;
  }
  return true;
}

// Shortest decimal form that round-trips a double exactly; the one float
// format used by every file this library writes.
inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace detail {
inline void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
  if (!a.same_shape(b)) throw std::invalid_argument(std::string(who) + ": shape mismatch");
}
}  // namespace detail

// C = A(r×k) · B(k×c)
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows())
    throw std::invalid_argument("matmul: incompatible shapes");
  const std::size_t r = a.rows(), k = a.cols(), c = b.cols();
  Tensor out({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    const double* ai = a.data() + i * k;
    double* oi = out.data() + i * c;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b.data() + p * c;
      for (std::size_t j = 0; j < c; ++j) oi[j] += av * bp[j];
    }
  }
  return out;
}

// C = A(r×k) · B(c×k)ᵀ
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.cols())
    throw std::invalid_argument("matmul_nt: incompatible shapes");
  const std::size_t r = a.rows(), k = a.cols(), c = b.rows();
  Tensor out({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    const double* ai = a.data() + i * k;
    double* oi = out.data() + i * c;
    for (std::size_t j = 0; j < c; ++j) {
      const double* bj = b.data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      oi[j] = s;
    }
  }
  return out;
}

// C = A(k×r)ᵀ · B(k×c)
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.rows() != b.rows())
    throw std::invalid_argument("matmul_tn: incompatible shapes");
  const std::size_t r = a.cols(), k = a.rows(), c = b.cols();
  Tensor out({r, c});
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a.data() + p * r;
    const double* bp = b.data() + p * c;
    for (std::size_t i = 0; i < r; ++i) {
      const double av = ap[i];
      double* oi = out.data() + i * c;
      for (std::size_t j = 0; j < c; ++j) oi[j] += av * bp[j];
    }
  }
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b[i];
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b[i];
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b[i];
  return out;
}

inline Tensor scale(const Tensor& a, double c) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= c;
  return out;
}

inline Tensor relu(const Tensor& a) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.numel(); ++i)
    if (out[i] < 0.0) out[i] = 0.0;
  return out;
}

inline double dot_flat(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "dot_flat");
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm_flat(const Tensor& a) { return std::sqrt(dot_flat(a, a)); }

}  // namespace lrdrop
