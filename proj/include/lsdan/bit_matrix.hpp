#pragma once

#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "lsdan/errors.hpp"

namespace lsdan {

// Dense boolean matrix, one bit per entry, rows padded to whole 64-bit words.
class BitMatrix {
 public:
  BitMatrix() = default;
  BitMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), words_((cols + 63) / 64), bits_(rows * words_, 0) {}

  static BitMatrix identity(std::size_t n) {
    BitMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m.set(i, i);
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t words_per_row() const noexcept { return words_; }

  bool get(std::size_t i, std::size_t j) const noexcept {
    return (bits_[i * words_ + j / 64] >> (j % 64)) & 1u;
  }
  bool operator()(std::size_t i, std::size_t j) const noexcept { return get(i, j); }

  void set(std::size_t i, std::size_t j, bool value = true) noexcept {
    auto& w = bits_[i * words_ + j / 64];
    const std::uint64_t bit = std::uint64_t{1} << (j % 64);
    w = value ? (w | bit) : (w & ~bit);
  }

  std::span<const std::uint64_t> row_words(std::size_t i) const noexcept {
    return {bits_.data() + i * words_, words_};
  }
  std::span<std::uint64_t> row_words(std::size_t i) noexcept { return {bits_.data() + i * words_, words_}; }

  std::size_t row_count(std::size_t i) const noexcept {
    std::size_t c = 0;
    for (auto w : row_words(i)) c += static_cast<std::size_t>(std::popcount(w));
    return c;
  }

  std::size_t count() const noexcept {
    std::size_t c = 0;
    for (auto w : bits_) c += static_cast<std::size_t>(std::popcount(w));
    return c;
  }

  // Row-wise containment: every set bit of *this is set in other.
  bool subset_of(const BitMatrix& other) const noexcept {
    if (rows_ != other.rows_ || cols_ != other.cols_) return false;
    for (std::size_t k = 0; k < bits_.size(); ++k)
      if (bits_[k] & ~other.bits_[k]) return false;
    return true;
  }

  bool is_symmetric() const noexcept {
    if (rows_ != cols_) return false;
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = i + 1; j < cols_; ++j)
        if (get(i, j) != get(j, i)) return false;
    return true;
  }

  std::span<const std::uint64_t> words() const noexcept { return bits_; }
  std::span<std::uint64_t> words() noexcept { return bits_; }

  friend bool operator==(const BitMatrix&, const BitMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::size_t words_ = 0;
  std::vector<std::uint64_t> bits_;
};

/// Compressed-row view of a boolean matrix: the support that attention iterates over.
class SparsePattern {
 public:
  SparsePattern() = default;

  explicit SparsePattern(const BitMatrix& m) : rows_(m.rows()), cols_(m.cols()) {
    row_ptr_.reserve(rows_ + 1);
    col_.reserve(m.count());
    for (std::size_t i = 0; i < rows_; ++i) {
      auto words = m.row_words(i);
      for (std::size_t w = 0; w < words.size(); ++w) {
        std::uint64_t bits = words[w];
        while (bits) {
          col_.push_back(w * 64 + static_cast<std::size_t>(std::countr_zero(bits)));
          bits &= bits - 1;
        }
      }
      row_ptr_.push_back(col_.size());
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t nnz() const noexcept { return col_.size(); }

  std::size_t row_begin(std::size_t i) const noexcept { return row_ptr_[i]; }
  std::size_t row_end(std::size_t i) const noexcept { return row_ptr_[i + 1]; }
  std::span<const std::size_t> row(std::size_t i) const noexcept {
    return {col_.data() + row_ptr_[i], row_ptr_[i + 1] - row_ptr_[i]};
  }
  std::span<const std::size_t> columns() const noexcept { return col_; }

  BitMatrix to_dense() const {
    BitMatrix m(rows_, cols_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (auto j : row(i)) m.set(i, j);
    return m;
  }

  friend bool operator==(const SparsePattern&, const SparsePattern&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<std::size_t> col_;
};

}  // namespace lsdan
