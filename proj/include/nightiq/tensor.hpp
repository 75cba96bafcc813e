#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace nightiq {

/// Cache-line aligned allocation. Vectorized kernels pick their code path from
/// the buffer address, so a fixed alignment keeps results bit-reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using AlignedVector = std::vector<double, AlignedAllocator<double>>;

/// Dense NCHW extents. Vectors are carried as (N, F, 1, 1).
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  [[nodiscard]] std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  [[nodiscard]] std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Owning float64 NCHW buffer. Value type; copies are deep.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(Shape{}, v); }

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  [[nodiscard]] double* data() { return data_.data(); }
  [[nodiscard]] const double* data() const { return data_.data(); }
  [[nodiscard]] std::span<double> values() { return data_; }
  [[nodiscard]] std::span<const double> values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  [[nodiscard]] double at(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

  [[nodiscard]] std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  /// Pointer to the start of one (sample, channel) plane.
  double* plane(int n, int c) { return data_.data() + index(n, c, 0, 0); }
  [[nodiscard]] const double* plane(int n, int c) const { return data_.data() + index(n, c, 0, 0); }

  void fill(double v);
  /// this += other, shapes must match.
  void add_inplace(const Tensor& other);
  /// Same data, new extents of equal element count.
  [[nodiscard]] Tensor reshaped(Shape shape) const;

  [[nodiscard]] double sum() const;
  [[nodiscard]] double min() const;
  [[nodiscard]] double max() const;
  [[nodiscard]] bool all_finite() const;

 private:
  Shape shape_{0, 0, 0, 0};
  AlignedVector data_;
};

}  // namespace nightiq
