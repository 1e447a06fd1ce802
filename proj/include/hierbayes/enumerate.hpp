#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace hierbayes {

/// log of n! / prod(c_k!).
inline double log_multinomial(const std::vector<int>& counts) {
  int n = 0;
  double acc = 0.0;
  for (int c : counts) {
    n += c;
    acc -= std::lgamma(c + 1.0);
  }
  return acc + std::lgamma(n + 1.0);
}

/// Calls `f(counts)` for every way of placing n exchangeable items into `bins`
/// bins (counts sum to n).
template <typename F>
void for_each_composition(int n, int bins, F&& f) {
  std::vector<int> counts(static_cast<std::size_t>(bins), 0);
  auto recurse = [&](auto&& self, int bin, int remaining) -> void {
    if (bin == bins - 1) {
      counts[static_cast<std::size_t>(bin)] = remaining;
      f(static_cast<const std::vector<int>&>(counts));
      return;
    }
    for (int c = remaining; c >= 0; --c) {
      counts[static_cast<std::size_t>(bin)] = c;
      self(self, bin + 1, remaining - c);
    }
  };
  if (bins > 0) recurse(recurse, 0, n);
}

/// Calls `f(values)` for every tuple in {0..base-1}^length, in lexicographic order.
template <typename F>
void for_each_tuple(int length, int base, F&& f) {
  std::vector<int> values(static_cast<std::size_t>(length), 0);
  while (true) {
    f(static_cast<const std::vector<int>&>(values));
    int k = length - 1;
    while (k >= 0 && values[static_cast<std::size_t>(k)] == base - 1) values[static_cast<std::size_t>(k--)] = 0;
    if (k < 0) return;
    ++values[static_cast<std::size_t>(k)];
  }
}

}  // namespace hierbayes
