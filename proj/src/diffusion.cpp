#include "refit/diffusion.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "refit/error.hpp"

namespace refit::diffusion {

double DiffusionSchedule::sqrt_alpha_bar(int t) const { return std::sqrt(alpha_bar[static_cast<std::size_t>(t)]); }

void DiffusionSchedule::check_step(int t) const {
  if (t < 1 || t > steps) throw StepError("t=" + std::to_string(t) + " outside [1, " + std::to_string(steps) + "]");
}

DiffusionSchedule build_schedule(int steps, double beta_start, double beta_end, ScheduleKind kind) {
  if (steps < 1) throw ConfigError("diffusion steps must be >= 1");
  if (!(beta_start > 0 && beta_start <= beta_end && beta_end < 1))
    throw ConfigError("betas must satisfy 0 < beta_start <= beta_end < 1");
  (void)kind;
  DiffusionSchedule s;
  s.steps = steps;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  const auto n = static_cast<std::size_t>(steps) + 1;
  s.beta.assign(n, 0.0);
  s.alpha.assign(n, 1.0);
  s.alpha_bar.assign(n, 1.0);
  s.sigma2.assign(n, 0.0);
  long double abar = 1.0L;
  for (int t = 1; t <= steps; ++t) {
    const auto k = static_cast<std::size_t>(t);
    const double b = steps == 1 ? beta_start
                                : beta_start + (beta_end - beta_start) * static_cast<double>(t - 1) / (steps - 1);
    s.beta[k] = b;
    s.alpha[k] = 1.0 - b;
    abar *= 1.0L - static_cast<long double>(b);
    s.alpha_bar[k] = static_cast<double>(abar);
  }
  // Posterior variance; at t=1 it would be 0, so the forward beta_1 is used.
  s.sigma2[1] = s.beta[1];
  for (std::size_t t = 2; t < n; ++t)
    s.sigma2[t] = s.beta[t] * (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]);
  return s;
}

std::size_t Architecture::num_params() const {
  return hidden * input_width() + hidden + num_items * hidden + num_items;
}

Denoiser::Denoiser(Architecture arch) : arch_(arch), params_(arch.num_params(), 0.0) {}

Denoiser::Denoiser(Architecture arch, Vec params) : arch_(arch), params_(std::move(params)) {
  if (params_.size() != arch_.num_params())
    throw DimensionError("parameter vector has " + std::to_string(params_.size()) + " entries, architecture needs " +
                         std::to_string(arch_.num_params()));
}

Denoiser Denoiser::initialized(Architecture arch, Seed seed) {
  if (arch.num_items == 0 || arch.hidden == 0) throw ConfigError("denoiser needs num_items > 0 and hidden > 0");
  Denoiser d(arch);
  Rng rng(seed);
  const double a1 = 1.0 / std::sqrt(static_cast<double>(arch.input_width()));
  const double a2 = 1.0 / std::sqrt(static_cast<double>(arch.hidden));
  std::uniform_real_distribution<double> u1(-a1, a1), u2(-a2, a2);
  const std::size_t n1 = arch.hidden * arch.input_width() + arch.hidden;
  for (std::size_t k = 0; k < d.params_.size(); ++k) d.params_[k] = k < n1 ? u1(rng) : u2(rng);
  return d;
}

void time_embedding(int t, std::size_t width, VecView out) {
  const std::size_t half = width / 2;
  for (std::size_t k = 0; k < width; ++k) {
    const std::size_t f = k % std::max<std::size_t>(half, 1);
    const double freq = std::pow(10000.0, -static_cast<double>(f) / static_cast<double>(std::max<std::size_t>(half, 1)));
    out[k] = k < half ? std::sin(t * freq) : std::cos(t * freq);
  }
}

Vec Denoiser::forward(CVecView ut, int t) const {
  ForwardCache cache;
  return forward(ut, t, cache);
}

Vec Denoiser::forward(CVecView ut, int t, ForwardCache& cache) const {
  const std::size_t ni = arch_.num_items, nh = arch_.hidden, nin = arch_.input_width();
  if (ut.size() != ni) throw DimensionError("input length " + std::to_string(ut.size()) + " != " + std::to_string(ni));
  cache.input.resize(nin);
  std::copy(ut.begin(), ut.end(), cache.input.begin());
  time_embedding(t, arch_.time_embedding, VecView(cache.input).subspan(ni));

  const double* w1 = params_.data();
  const double* b1 = w1 + nh * nin;
  const double* w2 = b1 + nh;
  const double* b2 = w2 + ni * nh;

  cache.hidden.resize(nh);
  for (std::size_t h = 0; h < nh; ++h) {
    const double* row = w1 + h * nin;
    double z = b1[h];
    for (std::size_t j = 0; j < nin; ++j) z += row[j] * cache.input[j];
    cache.hidden[h] = std::tanh(z);
  }
  Vec out(ni);
  for (std::size_t i = 0; i < ni; ++i) {
    const double* row = w2 + i * nh;
    double y = b2[i];
    for (std::size_t h = 0; h < nh; ++h) y += row[h] * cache.hidden[h];
    out[i] = y;
  }
  return out;
}

void Denoiser::accumulate_grad(const ForwardCache& cache, CVecView dout, VecView grad, double scale) const {
  const std::size_t ni = arch_.num_items, nh = arch_.hidden, nin = arch_.input_width();
  if (dout.size() != ni || grad.size() != params_.size()) throw DimensionError("gradient buffer size mismatch");
  const double* w2 = params_.data() + nh * nin + nh;
  double* gw1 = grad.data();
  double* gb1 = gw1 + nh * nin;
  double* gw2 = gb1 + nh;
  double* gb2 = gw2 + ni * nh;

  Vec dz(nh, 0.0);
  for (std::size_t i = 0; i < ni; ++i) {
    const double g = scale * dout[i];
    if (g == 0.0) continue;
    gb2[i] += g;
    double* grow = gw2 + i * nh;
    const double* wrow = w2 + i * nh;
    for (std::size_t h = 0; h < nh; ++h) {
      grow[h] += g * cache.hidden[h];
      dz[h] += g * wrow[h];
    }
  }
  for (std::size_t h = 0; h < nh; ++h) {
    const double g = dz[h] * (1.0 - cache.hidden[h] * cache.hidden[h]);
    gb1[h] += g;
    double* grow = gw1 + h * nin;
    for (std::size_t j = 0; j < nin; ++j) grow[j] += g * cache.input[j];
  }
}

namespace {

void check_len(CVecView a, CVecView b, const char* what) {
  if (a.size() != b.size())
    throw DimensionError(std::string(what) + ": lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
}

void check_finite(CVecView v, int t) {
  for (double x : v)
    if (!std::isfinite(x)) throw NumericalError("non-finite state at step " + std::to_string(t));
}

}  // namespace

Vec q_sample(CVecView u0, int t, CVecView noise, const DiffusionSchedule& s) {
  s.check_step(t);
  check_len(u0, noise, "q_sample");
  const double a = std::sqrt(s.alpha_bar[static_cast<std::size_t>(t)]);
  const double b = std::sqrt(1.0 - s.alpha_bar[static_cast<std::size_t>(t)]);
  Vec out(u0.size());
  for (std::size_t i = 0; i < u0.size(); ++i) out[i] = a * u0[i] + b * noise[i];
  return out;
}

PosteriorCoef posterior_coef(int t, const DiffusionSchedule& s) {
  s.check_step(t);
  const auto k = static_cast<std::size_t>(t);
  const double denom = 1.0 - s.alpha_bar[k];
  return {std::sqrt(s.alpha_bar[k - 1]) * s.beta[k] / denom, std::sqrt(s.alpha[k]) * (1.0 - s.alpha_bar[k - 1]) / denom};
}

Vec posterior_mean(CVecView u0, CVecView ut, int t, const DiffusionSchedule& s) {
  check_len(u0, ut, "posterior_mean");
  const auto c = posterior_coef(t, s);
  Vec out(u0.size());
  for (std::size_t i = 0; i < u0.size(); ++i) out[i] = c.c0 * u0[i] + c.ct * ut[i];
  return out;
}

Vec reverse_mean(const Denoiser& den, CVecView ut, int t, const DiffusionSchedule& s) {
  s.check_step(t);
  return posterior_mean(den.forward(ut, t), ut, t, s);
}

double gaussian_logpdf(CVecView x, CVecView mean, double var) {
  check_len(x, mean, "gaussian_logpdf");
  if (!(var > 0)) throw NumericalError("non-positive variance");
  double q = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - mean[i];
    q += d * d;
  }
  return -0.5 * (q / var + static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi * var));
}

double transition_logp(const Denoiser& den, CVecView u_prev, CVecView ut, int t, const DiffusionSchedule& s) {
  s.check_step(t);
  const double var = s.sigma2[static_cast<std::size_t>(t)];
  if (!(var > 0)) throw NumericalError("schedule variance at step " + std::to_string(t) + " is not positive");
  return gaussian_logpdf(u_prev, reverse_mean(den, ut, t, s), var);
}

double transition_logp_grad(const Denoiser& den, CVecView u_prev, CVecView ut, int t, const DiffusionSchedule& s,
                            VecView grad, double scale) {
  s.check_step(t);
  check_len(u_prev, ut, "transition_logp");
  const double var = s.sigma2[static_cast<std::size_t>(t)];
  if (!(var > 0)) throw NumericalError("schedule variance at step " + std::to_string(t) + " is not positive");
  ForwardCache cache;
  const Vec x0 = den.forward(ut, t, cache);
  const auto c = posterior_coef(t, s);
  Vec dout(x0.size());
  double q = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double d = u_prev[i] - (c.c0 * x0[i] + c.ct * ut[i]);
    q += d * d;
    dout[i] = c.c0 * d / var;
  }
  if (scale != 0.0) den.accumulate_grad(cache, dout, grad, scale);
  return -0.5 * (q / var + static_cast<double>(x0.size()) * std::log(2.0 * std::numbers::pi * var));
}

double elbo_loss_accumulate(const Denoiser& den, CVecView u0, int t, CVecView noise, const DiffusionSchedule& s,
                            VecView grad, double scale) {
  const Vec ut = q_sample(u0, t, noise, s);
  ForwardCache cache;
  const Vec x0 = den.forward(ut, t, cache);
  const double n = static_cast<double>(u0.size());
  Vec dout(x0.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double d = x0[i] - u0[i];
    loss += d * d;
    dout[i] = 2.0 * d / n;
  }
  if (scale != 0.0) den.accumulate_grad(cache, dout, grad, scale);
  return loss / n;
}

LossGrad elbo_loss(const Denoiser& den, CVecView u0, int t, CVecView noise, const DiffusionSchedule& s) {
  LossGrad out;
  out.grad.assign(den.num_params(), 0.0);
  out.loss = elbo_loss_accumulate(den, u0, t, noise, s, out.grad);
  return out;
}

namespace {

Vec draw_normal(Rng& rng, std::size_t n, double scale) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Vec v(n);
  for (auto& x : v) x = scale * nd(rng);
  return v;
}

}  // namespace

Trajectory sample_trajectory(const Denoiser& den, CVecView u_orig, const DiffusionSchedule& s, Seed seed,
                             const SamplingOptions& opts) {
  if (u_orig.size() != den.num_items()) throw DimensionError("u_orig length does not match the denoiser");
  Rng rng(seed);
  Trajectory tr;
  tr.seed = seed;
  tr.states.reserve(static_cast<std::size_t>(s.steps) + 1);
  tr.logp.reserve(static_cast<std::size_t>(s.steps));
  tr.states.push_back(q_sample(u_orig, s.steps, draw_normal(rng, u_orig.size(), opts.corruption_scale), s));
  check_finite(tr.states.back(), s.steps);
  for (int t = s.steps; t >= 1; --t) {
    const Vec& ut = tr.states.back();
    const Vec mean = reverse_mean(den, ut, t, s);
    Vec next = mean;
    if (t > 1) {
      const double sd = opts.noise_scale * std::sqrt(s.sigma2[static_cast<std::size_t>(t)]);
      const Vec eps = draw_normal(rng, next.size(), 1.0);
      for (std::size_t i = 0; i < next.size(); ++i) next[i] += sd * eps[i];
    }
    check_finite(next, t - 1);
    tr.logp.push_back(gaussian_logpdf(next, mean, s.sigma2[static_cast<std::size_t>(t)]));
    if (!std::isfinite(tr.logp.back())) throw NumericalError("non-finite log-probability at step " + std::to_string(t));
    tr.states.push_back(std::move(next));
  }
  return tr;
}

Vec infer(const Denoiser& den, CVecView u_orig, const DiffusionSchedule& s, Seed seed, const SamplingOptions& opts) {
  if (u_orig.size() != den.num_items()) throw DimensionError("u_orig length does not match the denoiser");
  Rng rng(seed);
  Vec u = q_sample(u_orig, s.steps, draw_normal(rng, u_orig.size(), opts.corruption_scale), s);
  check_finite(u, s.steps);
  for (int t = s.steps; t >= 1; --t) {
    u = reverse_mean(den, u, t, s);
    check_finite(u, t - 1);
  }
  return u;
}

}  // namespace refit::diffusion
