#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "zutis/error.hpp"

namespace zutis {

/// Dense row-major 2-D array.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int height, int width, T fill = T{})
      : height_(height), width_(width),
        data_(static_cast<std::size_t>(checked(height, width)), fill) {}

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int y, int x) { return data_[index(y, x)]; }
  const T& operator()(int y, int x) const { return data_[index(y, x)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  bool same_shape(const auto& other) const {
    return height_ == other.height() && width_ == other.width();
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  static long checked(int h, int w) {
    if (h < 0 || w < 0) throw ArgumentError("grid dimensions must be non-negative");
    return static_cast<long>(h) * w;
  }
  std::size_t index(int y, int x) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

using BinaryMask = Grid<std::uint8_t>;
using SoftMask = Grid<float>;
using LabelMap = Grid<std::int32_t>;

/// 8-bit interleaved RGB image.
class Image {
 public:
  Image() = default;
  Image(int height, int width, std::uint8_t fill = 0)
      : height_(height), width_(width),
        data_(static_cast<std::size_t>(height) * width * 3, fill) {
    if (height < 0 || width < 0) throw ArgumentError("image dimensions must be non-negative");
  }

  int height() const { return height_; }
  int width() const { return width_; }
  bool empty() const { return height_ == 0 || width_ == 0; }

  std::uint8_t& at(int y, int x, int c) { return data_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c]; }
  std::uint8_t at(int y, int x, int c) const {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c];
  }

  std::span<std::uint8_t> bytes() { return data_; }
  std::span<const std::uint8_t> bytes() const { return data_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> data_;
};

inline long count_foreground(const BinaryMask& m) {
  long n = 0;
  for (auto v : m.values()) n += v != 0;
  return n;
}

}  // namespace zutis
