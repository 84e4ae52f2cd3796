#pragma once

#include <cassert>
#include <cstddef>
#include <cstring>
#include <memory>
#include <span>
#include <vector>

namespace cellscape {

// Dense row-major matrix over an immutable, shareable buffer. Copies are
// cheap; every "modification" builds a new buffer.
template <typename T>
class Matrix {
public:
    Matrix() : data_(std::make_shared<const std::vector<T>>()) {}

    Matrix(std::size_t rows, std::size_t cols, T fill = T{})
        : rows_(rows), cols_(cols), data_(std::make_shared<const std::vector<T>>(rows * cols, fill)) {}

    Matrix(std::size_t rows, std::size_t cols, std::vector<T> values)
        : rows_(rows), cols_(cols) {
        assert(values.size() == rows * cols);
        data_ = std::make_shared<const std::vector<T>>(std::move(values));
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return rows_ * cols_; }

    T operator()(std::size_t r, std::size_t c) const { return (*data_)[r * cols_ + c]; }

    std::span<const T> row(std::size_t r) const {
        return std::span<const T>(data_->data() + r * cols_, cols_);
    }
    std::span<const T> values() const noexcept { return std::span<const T>(*data_); }

    // Column j gathered into a new vector.
    std::vector<T> column(std::size_t j) const {
        std::vector<T> out(rows_);
        for (std::size_t r = 0; r < rows_; ++r) out[r] = (*data_)[r * cols_ + j];
        return out;
    }

    bool same_shape(const Matrix& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    // Bitwise equality; distinguishes -0.0 from 0.0 and compares NaN payloads.
    bool bit_equal(const Matrix& other) const noexcept {
        return same_shape(other) &&
               (size() == 0 || std::memcmp(data_->data(), other.data_->data(), size() * sizeof(T)) == 0);
    }

    Matrix select_rows(std::span<const std::size_t> rows) const {
        std::vector<T> out;
        out.reserve(rows.size() * cols_);
        for (std::size_t r : rows) {
            auto src = row(r);
            out.insert(out.end(), src.begin(), src.end());
        }
        return Matrix(rows.size(), cols_, std::move(out));
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::shared_ptr<const std::vector<T>> data_;
};

}  // namespace cellscape
