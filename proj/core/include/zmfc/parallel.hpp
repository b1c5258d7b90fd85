#pragma once

#include <cstddef>
#include <span>
#include <thread>
#include <vector>

namespace zmfc {

// Runs fn(lo, hi) over [0, n) split into contiguous chunks, one per worker.
// Writes must go to disjoint per-index slots; reductions go through
// pairwise_sum below so results are identical for any thread count.
template <typename Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
    if (threads <= 1 || n < 2048) {
        fn(std::size_t{0}, n);
        return;
    }
    const std::size_t chunk = (n + threads - 1) / threads;
    std::vector<std::thread> workers;
    workers.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) {
        const std::size_t lo = t * chunk;
        if (lo >= n) break;
        const std::size_t hi = std::min(n, lo + chunk);
        workers.emplace_back([&fn, lo, hi] { fn(lo, hi); });
    }
    for (auto& w : workers) w.join();
}

// Deterministic pairwise summation: a fixed binary tree over the index range,
// so the result depends only on the array contents, never on chunking.
inline double pairwise_sum(std::span<const double> v) {
    if (v.size() <= 8) {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
    const std::size_t mid = v.size() / 2;
    return pairwise_sum(v.first(mid)) + pairwise_sum(v.subspan(mid));
}

// Strided view: sums v[offset], v[offset+stride], ... with the same fixed tree.
inline double pairwise_sum_strided(std::span<const double> v, std::size_t offset,
                                   std::size_t stride, std::size_t count) {
    if (count <= 8) {
        double s = 0.0;
        for (std::size_t i = 0; i < count; ++i) s += v[offset + i * stride];
        return s;
    }
    const std::size_t mid = count / 2;
    return pairwise_sum_strided(v, offset, stride, mid) +
           pairwise_sum_strided(v, offset + mid * stride, stride, count - mid);
}

} // namespace zmfc
