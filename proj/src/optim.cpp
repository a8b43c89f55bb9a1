#include "refit/optim.hpp"

#include <cmath>

#include "refit/error.hpp"

namespace refit {

void Adam::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) throw DimensionError("Adam: size mismatch");
  ++t_;
  // lr = 0 must leave parameters bit-identical.
  if (cfg_.learning_rate == 0.0) {
    for (std::size_t i = 0; i < m_.size(); ++i) {
      m_[i] = cfg_.beta1 * m_[i] + (1 - cfg_.beta1) * grad[i];
      v_[i] = cfg_.beta2 * v_[i] + (1 - cfg_.beta2) * grad[i] * grad[i];
    }
    return;
  }
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < m_.size(); ++i) {
    m_[i] = cfg_.beta1 * m_[i] + (1 - cfg_.beta1) * grad[i];
    v_[i] = cfg_.beta2 * v_[i] + (1 - cfg_.beta2) * grad[i] * grad[i];
    params[i] -= cfg_.learning_rate * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + cfg_.eps);
  }
}

void Adam::restore(std::uint64_t steps, std::vector<double> m, std::vector<double> v) {
  if (m.size() != m_.size() || v.size() != v_.size()) throw DimensionError("Adam: restored state size mismatch");
  t_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace refit
