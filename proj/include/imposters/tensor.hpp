// Dense row-major double tensor.
#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "imposters/rng.hpp"
#include "imposters/util.hpp"

namespace imposters {

struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(numel_of(shape), 0.0);
  }

  static std::size_t numel_of(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int e : s) n *= static_cast<std::size_t>(e);
    return n;
  }

  std::size_t numel() const { return data.size(); }

  static Tensor scalar(double v) {
    Tensor t({1});
    t.data[0] = v;
    return t;
  }

  // Xavier-uniform init, deterministic in the seed.
  static Tensor xavier(std::vector<int> s, int fanIn, int fanOut, std::uint64_t seed) {
    Tensor t(std::move(s));
    const double a = std::sqrt(6.0 / (fanIn + fanOut));
    Rng rng(seed);
    for (auto& v : t.data) v = rng.uniform(-a, a);
    return t;
  }

  bool operator==(const Tensor&) const = default;
};

}  // namespace imposters
