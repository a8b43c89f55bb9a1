#pragma once

namespace refit {

// Kernels that have an OpenMP path keep a plain serial loop alongside it.
// Results of the two paths agree to rounding (see tests/unit/test_parallel.cpp).
enum class Exec { Serial, Parallel };

// 0 leaves the OpenMP runtime default in place.
void set_num_threads(int n);
int max_threads();

}  // namespace refit
