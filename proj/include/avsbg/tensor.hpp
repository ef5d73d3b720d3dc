#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "avsbg/errors.hpp"

namespace avsbg {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t acc, int d) { return acc * static_cast<std::size_t>(d); });
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// Every buffer starts on a 64-byte boundary. Vectorised kernels peel
// differently depending on alignment, so without this the low bits of a
// reduction would depend on where malloc happened to place the data.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Storage = std::vector<double, AlignedAllocator<double>>;

/// Dense row-major tensor of doubles. Plain value type; copies are deep.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
    for (int d : shape_)
      if (d < 0) throw ArgumentError("negative tensor dimension in " + shape_str(shape_));
  }
  Tensor(Shape shape, const std::vector<double>& data) : Tensor(std::move(shape), Storage(data.begin(), data.end())) {}
  Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_))
      throw ArgumentError("tensor data size " + std::to_string(data_.size()) +
                          " does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor full(Shape shape, double v) { return Tensor(std::move(shape), v); }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_, 0.0); }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i < 0 ? rank() + i : i)); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  const Storage& vec() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  template <class... Idx>
  double& at(Idx... idx) {
    return data_[offset({static_cast<int>(idx)...})];
  }
  template <class... Idx>
  double at(Idx... idx) const {
    return data_[offset({static_cast<int>(idx)...})];
  }

  /// Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size())
      throw ArgumentError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
  }

  /// Contiguous slice along the leading axis: rows [begin, begin + count).
  Tensor slice0(int begin, int count) const {
    if (rank() == 0 || begin < 0 || count < 0 || begin + count > shape_[0])
      throw ArgumentError("slice0 out of range for " + shape_str(shape_));
    const std::size_t inner = data_.size() / static_cast<std::size_t>(shape_[0]);
    Shape s = shape_;
    s[0] = count;
    return Tensor(std::move(s), Storage(data_.begin() + static_cast<std::ptrdiff_t>(begin * inner),
                                        data_.begin() + static_cast<std::ptrdiff_t>((begin + count) * inner)));
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    check_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  template <class F>
  Tensor map(F&& f) const {
    Tensor out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out.data_[i] = f(data_[i]);
    return out;
  }

  double sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }
  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  bool operator==(const Tensor& o) const = default;

  void check_same(const Tensor& o, const char* what) const {
    if (shape_ != o.shape_)
      throw ArgumentError(std::string(what) + ": shape mismatch " + shape_str(shape_) + " vs " +
                          shape_str(o.shape_));
  }

 private:
  std::size_t offset(std::initializer_list<int> idx) const {
    assert(idx.size() == shape_.size());
    std::size_t off = 0;
    std::size_t k = 0;
    for (int i : idx) {
      assert(i >= 0 && i < shape_[k]);
      off = off * static_cast<std::size_t>(shape_[k]) + static_cast<std::size_t>(i);
      ++k;
    }
    return off;
  }

  Shape shape_;
  Storage data_;
};

/// Stacks equally shaped tensors along a new leading axis.
inline Tensor stack(std::span<const Tensor> parts) {
  if (parts.empty()) throw ArgumentError("stack of zero tensors");
  Shape s = parts.front().shape();
  s.insert(s.begin(), static_cast<int>(parts.size()));
  Storage data;
  data.reserve(shape_numel(s));
  for (const Tensor& p : parts) {
    p.check_same(parts.front(), "stack");
    data.insert(data.end(), p.vec().begin(), p.vec().end());
  }
  return Tensor(std::move(s), std::move(data));
}

/// Concatenates along the leading axis.
inline Tensor concat0(std::span<const Tensor> parts) {
  if (parts.empty()) throw ArgumentError("concat of zero tensors");
  Shape s = parts.front().shape();
  int lead = 0;
  Storage data;
  for (const Tensor& p : parts) {
    Shape inner_p(p.shape().begin() + 1, p.shape().end());
    Shape inner_s(s.begin() + 1, s.end());
    if (inner_p != inner_s) throw ArgumentError("concat0: trailing shape mismatch");
    lead += p.dim(0);
    data.insert(data.end(), p.vec().begin(), p.vec().end());
  }
  s[0] = lead;
  return Tensor(std::move(s), std::move(data));
}

}  // namespace avsbg
