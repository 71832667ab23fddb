#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace exdiff {

using Complex = std::complex<double>;

/// Dense row-major grid of complex values (rows = frequency bins, cols = frames
/// when it holds a spectrogram). std::complex stores (real, imag) contiguously.
struct ComplexGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Complex> data;

  ComplexGrid() = default;
  ComplexGrid(std::size_t r, std::size_t c, Complex fill = {}) : rows(r), cols(c), data(r * c, fill) {}

  std::size_t size() const { return data.size(); }
  Complex& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const Complex& at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  bool same_shape(const ComplexGrid& o) const { return rows == o.rows && cols == o.cols; }
};

/// Throws ShapeError naming `what` when shapes differ.
void require_same_shape(const ComplexGrid& a, const ComplexGrid& b, const char* what);

double squared_norm(const ComplexGrid& g);
double l2_distance(const ComplexGrid& a, const ComplexGrid& b);
bool all_finite(const ComplexGrid& g);

/// Columns [begin, begin + count) of g; columns past the end are zero.
ComplexGrid slice_cols(const ComplexGrid& g, std::size_t begin, std::size_t count);

}  // namespace exdiff
