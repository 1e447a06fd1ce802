#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <thread>
#include <vector>

namespace hierbayes {

using Rng = std::mt19937_64;

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Identifies one reproducible random stream. Identical specs give identical
/// sequences; distinct specs give unrelated ones.
struct SeedSpec {
  std::uint64_t master_seed = 0;
  std::uint64_t stream_id = 0;

  /// Sub-stream `k` of this stream, used to key Monte Carlo chunks and tasks.
  [[nodiscard]] SeedSpec child(std::uint64_t k) const {
    return {detail::splitmix64(master_seed ^ detail::splitmix64(stream_id + 0x632be59bd9b4e019ULL)), k};
  }

  friend bool operator==(const SeedSpec&, const SeedSpec&) = default;
};

inline Rng make_rng(const SeedSpec& seed) {
  const std::uint64_t a = detail::splitmix64(seed.master_seed);
  const std::uint64_t b = detail::splitmix64(seed.stream_id ^ 0xd1b54a32d192ed03ULL);
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32),
                    static_cast<std::uint32_t>(seed.stream_id), static_cast<std::uint32_t>(seed.stream_id >> 32)};
  return Rng(seq);
}

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

inline double uniform01(Rng& rng) {
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

/// Splits `total` work items into fixed-size chunks, each with its own stream
/// `seed.child(chunk)`, and merges per-chunk accumulators in chunk order. The
/// result does not depend on `threads`.
///
/// `work(rng, begin, end, acc)` fills one accumulator; `Acc` must provide
/// `merge(const Acc&)`.
template <typename Acc, typename Work>
Acc chunked_reduce(std::size_t total, std::size_t chunk_size, const SeedSpec& seed, unsigned threads, Work&& work) {
  chunk_size = std::max<std::size_t>(chunk_size, 1);
  const std::size_t chunks = (total + chunk_size - 1) / chunk_size;
  std::vector<Acc> partial(chunks);

  auto run_chunk = [&](std::size_t c) {
    Rng rng = make_rng(seed.child(c));
    const std::size_t begin = c * chunk_size;
    const std::size_t end = std::min(total, begin + chunk_size);
    work(rng, begin, end, partial[c]);
  };

  threads = std::max(1u, threads);
  if (threads == 1 || chunks <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) run_chunk(c);
  } else {
    std::vector<std::jthread> pool;
    const unsigned used = static_cast<unsigned>(std::min<std::size_t>(threads, chunks));
    for (unsigned t = 0; t < used; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t c = t; c < chunks; c += used) run_chunk(c);
      });
    }
  }

  Acc total_acc{};
  for (const Acc& a : partial) total_acc.merge(a);
  return total_acc;
}

}  // namespace hierbayes
