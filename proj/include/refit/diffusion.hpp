#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "refit/rng.hpp"

namespace refit::diffusion {

using Vec = std::vector<double>;
using CVecView = std::span<const double>;
using VecView = std::span<double>;

// Linear beta schedule with cumulative products. Vectors are indexed by step
// t in [0, T]; entry 0 holds alpha_bar_0 = 1 and is unused for beta/sigma2.
struct DiffusionSchedule {
  int steps = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  Vec beta;
  Vec alpha;
  Vec alpha_bar;
  Vec sigma2;

  double sqrt_alpha_bar(int t) const;
  void check_step(int t) const;
};

enum class ScheduleKind { Linear };

DiffusionSchedule build_schedule(int steps, double beta_start, double beta_end,
                                 ScheduleKind kind = ScheduleKind::Linear);

struct Architecture {
  std::size_t num_items = 0;
  std::size_t hidden = 0;
  std::size_t time_embedding = 0;  // sinusoidal, parameter-free; 0 disables it

  std::size_t input_width() const { return num_items + time_embedding; }
  std::size_t num_params() const;
  bool operator==(const Architecture&) const = default;
};

// Per-call activations kept for the backward pass.
struct ForwardCache {
  Vec input;   // [u_t ; emb(t)]
  Vec hidden;  // tanh activations
};

// One-hidden-layer tanh MLP predicting the clean vector from (u_t, t).
// Parameter layout: W1[hidden][input_width], b1[hidden], W2[num_items][hidden], b2[num_items].
class Denoiser {
 public:
  Denoiser() = default;
  explicit Denoiser(Architecture arch);
  Denoiser(Architecture arch, Vec params);

  // Uniform in +-1/sqrt(fan_in) per layer.
  static Denoiser initialized(Architecture arch, Seed seed);

  const Architecture& arch() const { return arch_; }
  std::size_t num_items() const { return arch_.num_items; }
  std::size_t num_params() const { return params_.size(); }
  const Vec& params() const { return params_; }
  Vec& params() { return params_; }

  Vec forward(CVecView ut, int t) const;
  Vec forward(CVecView ut, int t, ForwardCache& cache) const;

  // grad += d(loss)/d(theta) given d(loss)/d(output) for the cached call.
  void accumulate_grad(const ForwardCache& cache, CVecView dout, VecView grad,
                       double scale = 1.0) const;

  bool operator==(const Denoiser&) const = default;

 private:
  Architecture arch_;
  Vec params_;
};

void time_embedding(int t, std::size_t width, VecView out);

// u_t = sqrt(abar_t) u0 + sqrt(1 - abar_t) noise
Vec q_sample(CVecView u0, int t, CVecView noise, const DiffusionSchedule& s);

// Coefficients (c0, ct) of the Gaussian forward posterior mean c0*u0 + ct*u_t.
struct PosteriorCoef {
  double c0;
  double ct;
};
PosteriorCoef posterior_coef(int t, const DiffusionSchedule& s);

Vec posterior_mean(CVecView u0, CVecView ut, int t, const DiffusionSchedule& s);

Vec reverse_mean(const Denoiser& den, CVecView ut, int t, const DiffusionSchedule& s);

double gaussian_logpdf(CVecView x, CVecView mean, double var);

double transition_logp(const Denoiser& den, CVecView u_prev, CVecView ut, int t,
                       const DiffusionSchedule& s);

// grad += scale * d/dtheta log p(u_prev | u_t); returns the log-probability.
double transition_logp_grad(const Denoiser& den, CVecView u_prev, CVecView ut, int t,
                            const DiffusionSchedule& s, VecView grad, double scale = 1.0);

struct LossGrad {
  double loss = 0.0;
  Vec grad;
};

// ||den(q_sample(u0,t,noise), t) - u0||^2 / |I| and its parameter gradient.
LossGrad elbo_loss(const Denoiser& den, CVecView u0, int t, CVecView noise,
                   const DiffusionSchedule& s);

// Loss only; grad += scale * dloss/dtheta.
double elbo_loss_accumulate(const Denoiser& den, CVecView u0, int t, CVecView noise,
                            const DiffusionSchedule& s, VecView grad, double scale = 1.0);

struct Trajectory {
  std::vector<Vec> states;  // u_T, u_{T-1}, ..., u_0
  Vec logp;                 // entry k: log p(states[k+1] | states[k]) at step T-k
  Seed seed = 0;

  int steps() const { return static_cast<int>(logp.size()); }
  // u_t for t in [0, T].
  const Vec& at_step(int t) const { return states[states.size() - 1 - static_cast<std::size_t>(t)]; }
  const Vec& final_state() const { return states.back(); }
};

struct SamplingOptions {
  // Multiplies every reverse-step standard deviation; 0 gives the noiseless limit.
  double noise_scale = 1.0;
  // Multiplies the initial corruption noise; 0 starts from u_orig itself.
  double corruption_scale = 1.0;
};

// Rollout from partially corrupted history; the t=1 step emits the mean but
// is still scored under its Gaussian.
Trajectory sample_trajectory(const Denoiser& den, CVecView u_orig, const DiffusionSchedule& s, Seed seed,
                             const SamplingOptions& opts = {});

// Deterministic reverse chain from q_sample(u_orig, T, eps(seed)); returns u_0 scores.
Vec infer(const Denoiser& den, CVecView u_orig, const DiffusionSchedule& s, Seed seed,
          const SamplingOptions& opts = {});

}  // namespace refit::diffusion
