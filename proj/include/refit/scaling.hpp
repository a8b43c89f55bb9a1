#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "refit/rng.hpp"

namespace refit::eval {

enum class ScaleAxis { Users, Items };

ScaleAxis parse_axis(std::string_view name);
std::string_view axis_name(ScaleAxis a);

struct ScalingConfig {
  ScaleAxis vary = ScaleAxis::Users;
  std::vector<std::size_t> sizes;
  std::size_t fixed_other = 2000;
  double sparsity = 0.99;
  std::size_t iters_per_point = 5;
  std::size_t warmup = 1;
  Seed seed = 0;
  // Fixed model and fine-tuning settings shared by every point.
  std::size_t hidden = 8;
  std::size_t time_embedding = 4;
  int steps = 2;
  std::size_t batch_users = 100;
  std::size_t K = 10;
  std::size_t d = 10;
  double alpha = 0.5;
  // Also time a full similarity-index build per point (quadratic in users).
  bool time_index_build = false;
};

struct ScalingPoint {
  std::size_t size = 0;
  double seconds_per_iteration = 0.0;  // median over measured iterations
  double neighbor_seconds_per_iteration = 0.0;
  double index_build_seconds = 0.0;  // 0 unless time_index_build
  double coefficient_of_variation = 0.0;
  bool unstable = false;  // CV > 0.5
};

struct ScalingReport {
  ScaleAxis vary = ScaleAxis::Users;
  std::size_t fixed_other = 0;
  std::vector<ScalingPoint> points;
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  int workers = 1;

  std::vector<double> doubling_ratios() const;  // t[k+1]/t[k]
};

struct LinearFit {
  double slope, intercept, r2;
};
LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

// Times REINFORCE fine-tuning iterations on synthetic data of growing size.
// Each iteration searches the sampled users' top-d neighbours over all
// users, so both the |U| and |I| terms of the per-iteration cost are timed.
ScalingReport scaling_benchmark(const ScalingConfig& cfg);

std::string to_json(const ScalingReport& r);
std::string to_csv(const ScalingReport& r);

}  // namespace refit::eval
