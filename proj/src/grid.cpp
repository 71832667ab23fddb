#include "exdiff/grid.hpp"

#include <cmath>
#include <string>

#include "exdiff/error.hpp"

namespace exdiff {

void require_same_shape(const ComplexGrid& a, const ComplexGrid& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch (" + std::to_string(a.rows) + "x" +
                     std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" +
                     std::to_string(b.cols) + ")");
  }
}

double squared_norm(const ComplexGrid& g) {
  double s = 0.0;
  for (const auto& v : g.data) s += std::norm(v);
  return s;
}

double l2_distance(const ComplexGrid& a, const ComplexGrid& b) {
  require_same_shape(a, b, "l2_distance");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::norm(a.data[i] - b.data[i]);
  return std::sqrt(s);
}

bool all_finite(const ComplexGrid& g) {
  for (const auto& v : g.data) {
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
  }
  return true;
}

ComplexGrid slice_cols(const ComplexGrid& g, std::size_t begin, std::size_t count) {
  ComplexGrid out(g.rows, count);
  for (std::size_t r = 0; r < g.rows; ++r) {
    for (std::size_t c = 0; c < count && begin + c < g.cols; ++c) out.at(r, c) = g.at(r, begin + c);
  }
  return out;
}

}  // namespace exdiff
