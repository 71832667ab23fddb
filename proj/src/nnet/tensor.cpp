#include "exdiff/nnet/tensor.hpp"

#include "exdiff/error.hpp"

namespace exdiff::nnet {

std::string shape_string(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

template <typename Real>
Tensor<Real>::Tensor(Shape shape, std::vector<Real> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("tensor: " + std::to_string(data_.size()) + " values for shape " + shape_string(shape_));
  }
}

template <typename Real>
void Tensor<Real>::reshape(Shape s) {
  if (shape_numel(s) != data_.size()) {
    throw ShapeError("reshape: " + shape_string(shape_) + " -> " + shape_string(s));
  }
  shape_ = std::move(s);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace exdiff::nnet
