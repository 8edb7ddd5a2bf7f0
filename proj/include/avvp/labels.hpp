#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace avvp {

// Binary per-snippet labels or predictions, dense N x T x C.
struct LabelArray {
  std::size_t n = 0, t = 0, c = 0;
  std::vector<std::uint8_t> v;

  LabelArray() = default;
  LabelArray(std::size_t n_, std::size_t t_, std::size_t c_) : n(n_), t(t_), c(c_), v(n_ * t_ * c_, 0) {}

  std::uint8_t& at(std::size_t vi, std::size_t ti, std::size_t ci) {
    return v[(vi * t + ti) * c + ci];
  }
  std::uint8_t at(std::size_t vi, std::size_t ti, std::size_t ci) const {
    return v[(vi * t + ti) * c + ci];
  }
  std::size_t size() const { return v.size(); }
  bool same_shape(const LabelArray& o) const { return n == o.n && t == o.t && c == o.c; }
};

}  // namespace avvp
