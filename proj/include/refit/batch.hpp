#pragma once

#include <cstddef>
#include <exception>
#include <span>
#include <vector>

#include "refit/exec.hpp"

namespace refit {

// Per-example contributions accumulated into one gradient buffer.
//
// Examples are grouped into fixed chunks of kChunk consecutive indices. Each
// chunk accumulates serially into its own buffer and the chunk buffers are
// summed in chunk order. Serial and parallel execution perform the same
// floating-point operations, so they agree bit-for-bit on any thread count.
struct BatchSum {
  double value = 0.0;
  std::vector<double> grad;
};

inline constexpr std::size_t kChunk = 8;

template <class Fn>  // Fn: double(std::size_t example, std::span<double> grad)
BatchSum accumulate_batch(std::size_t count, std::size_t num_params, Exec exec, Fn&& fn) {
  BatchSum out;
  out.grad.assign(num_params, 0.0);
  const std::size_t chunks = (count + kChunk - 1) / kChunk;
  auto run_chunk = [&](std::size_t c, std::vector<double>& g) {
    g.assign(num_params, 0.0);
    double v = 0.0;
    const std::size_t lo = c * kChunk;
    const std::size_t hi = std::min(count, lo + kChunk);
    for (std::size_t b = lo; b < hi; ++b) v += fn(b, std::span<double>(g));
    return v;
  };
  auto fold = [&](double v, const std::vector<double>& g) {
    out.value += v;
    for (std::size_t k = 0; k < num_params; ++k) out.grad[k] += g[k];
  };
  if (exec == Exec::Serial || chunks <= 1) {
    std::vector<double> g;
    for (std::size_t c = 0; c < chunks; ++c) {
      const double v = run_chunk(c, g);
      fold(v, g);
    }
    return out;
  }
  std::vector<std::vector<double>> partial(chunks);
  std::vector<double> values(chunks, 0.0);
  std::exception_ptr err;
  const auto nchunks = static_cast<std::ptrdiff_t>(chunks);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t c = 0; c < nchunks; ++c) {
    try {
      values[static_cast<std::size_t>(c)] = run_chunk(static_cast<std::size_t>(c), partial[static_cast<std::size_t>(c)]);
    } catch (...) {
#pragma omp critical
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
  for (std::size_t c = 0; c < chunks; ++c) fold(values[c], partial[c]);
  return out;
}

// Runs fn(i) for i in [0, count); exceptions are rethrown after the loop.
template <class Fn>
void parallel_for(std::size_t count, Exec exec, Fn&& fn) {
  if (exec == Exec::Serial) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::exception_ptr err;
  const auto n = static_cast<std::ptrdiff_t>(count);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
#pragma omp critical
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
}

}  // namespace refit
