#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "pcb_sentinel/errors.hpp"

namespace pcb_sentinel {

template <typename T>
std::array<std::vector<T>, 3> split(std::vector<T> items, SplitCounts counts, std::uint64_t seed) {
  if (counts.train + counts.val + counts.test != items.size()) {
    throw ArgumentError("split sizes " + std::to_string(counts.train) + "+" + std::to_string(counts.val) + "+" +
                        std::to_string(counts.test) + " do not add up to " + std::to_string(items.size()));
  }
  std::mt19937_64 rng(seed);
  std::shuffle(items.begin(), items.end(), rng);
  std::array<std::vector<T>, 3> out;
  auto it = items.begin();
  out[0].assign(it, it + counts.train);
  it += counts.train;
  out[1].assign(it, it + counts.val);
  it += counts.val;
  out[2].assign(it, items.end());
  return out;
}

template <typename T>
std::array<std::vector<T>, 3> split(std::vector<T> items, std::array<double, 3> ratios, std::uint64_t seed) {
  for (double r : ratios) {
    if (!(r >= 0.0)) throw ArgumentError("split ratios must be non-negative");
  }
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) throw ArgumentError("split ratios must sum to 1");
  const auto n = items.size();
  SplitCounts c;
  c.train = std::min(n, static_cast<std::size_t>(std::llround(n * ratios[0])));
  c.val = std::min(n - c.train, static_cast<std::size_t>(std::llround(n * ratios[1])));
  c.test = n - c.train - c.val;
  return split(std::move(items), c, seed);
}

}  // namespace pcb_sentinel
