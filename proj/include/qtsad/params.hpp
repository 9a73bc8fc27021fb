#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "qtsad/errors.hpp"
#include "qtsad/tensor.hpp"

namespace qtsad {

// A parameter bundle exposes its tensors in a fixed order through
//   for_each_tensor(fn)  with fn(const std::string& name,
//                              const std::vector<std::size_t>& shape,
//                              std::span<double or const double> values)
// The helpers below treat any bundle as one flat vector in that order.
template <class B>
concept TensorBundle = requires(B& b, const B& cb) {
  b.for_each_tensor([](const std::string&, const std::vector<std::size_t>&, std::span<double>) {});
  cb.for_each_tensor([](const std::string&, const std::vector<std::size_t>&, std::span<const double>) {});
};

namespace detail {
template <class V, class Fn>
void visit_matrix(const std::string& name, V& m, Fn& fn) {
  fn(name, std::vector<std::size_t>{m.rows, m.cols}, std::span(m.data));
}
template <class V, class Fn>
void visit_vector(const std::string& name, V& v, Fn& fn) {
  fn(name, std::vector<std::size_t>{v.size()}, std::span(v));
}
}  // namespace detail

template <TensorBundle B>
std::size_t parameter_count(const B& b) {
  std::size_t n = 0;
  b.for_each_tensor([&](const std::string&, const std::vector<std::size_t>&, std::span<const double> v) { n += v.size(); });
  return n;
}

template <TensorBundle B>
Vec flatten(const B& b) {
  Vec out;
  out.reserve(parameter_count(b));
  b.for_each_tensor([&](const std::string&, const std::vector<std::size_t>&, std::span<const double> v) {
    out.insert(out.end(), v.begin(), v.end());
  });
  return out;
}

template <TensorBundle B>
void unflatten(std::span<const double> flat, B& b) {
  if (flat.size() != parameter_count(b)) throw ShapeError("flat parameter vector has wrong length");
  std::size_t off = 0;
  b.for_each_tensor([&](const std::string&, const std::vector<std::size_t>&, std::span<double> v) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), v.size(), v.begin());
    off += v.size();
  });
}

template <TensorBundle B>
B zeros_like(const B& b) {
  B out = b;
  out.for_each_tensor([](const std::string&, const std::vector<std::size_t>&, std::span<double> v) {
    std::fill(v.begin(), v.end(), 0.0);
  });
  return out;
}

// y += a * x
template <TensorBundle B>
void axpy(double a, const B& x, B& y) {
  const Vec fx = flatten(x);
  std::size_t off = 0;
  y.for_each_tensor([&](const std::string&, const std::vector<std::size_t>&, std::span<double> v) {
    for (double& e : v) e += a * fx[off++];
  });
}

}  // namespace qtsad
