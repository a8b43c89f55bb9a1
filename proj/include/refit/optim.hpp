#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace refit {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam minimizer; ascent callers pass the negated gradient.
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t n, AdamConfig cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> params, std::span<const double> grad);

  const AdamConfig& config() const { return cfg_; }
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }
  std::uint64_t steps() const { return t_; }
  const std::vector<double>& first_moment() const { return m_; }
  const std::vector<double>& second_moment() const { return v_; }
  void restore(std::uint64_t steps, std::vector<double> m, std::vector<double> v);

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
  std::vector<double> m_, v_;
};

}  // namespace refit
