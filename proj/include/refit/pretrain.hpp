#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "refit/checkpoint.hpp"
#include "refit/data.hpp"
#include "refit/diffusion.hpp"
#include "refit/exec.hpp"
#include "refit/optim.hpp"

namespace refit::diffusion {

// Forward-process draw for one training example: a step and its noise.
struct ElboSample {
  int t = 1;
  Vec noise;
};

ElboSample draw_elbo_sample(Seed seed, int steps, std::size_t num_items);

// Mean x0-MSE over `users` of `train`, each with draws from derive_seed(seed, user).
// weights (optional, one per user) scale each example's contribution.
struct BatchLoss {
  double loss = 0.0;
  Vec grad;
};
BatchLoss elbo_batch(const Denoiser& den, const DiffusionSchedule& s, const data::InteractionMatrix& train,
                     std::span<const data::UserId> users, Seed seed, std::span<const double> weights = {},
                     Exec exec = Exec::Parallel);

struct PretrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  AdamConfig adam{};
  Seed seed = 0;
  Seed eval_seed = 0;
  std::size_t eval_every = 1;  // epochs between validation passes; 0 disables selection
  Exec exec = Exec::Parallel;
};

struct PretrainReport {
  std::vector<double> loss_curve;                 // per-epoch mean ELBO loss
  std::vector<std::pair<std::size_t, double>> val_ndcg10;  // (epoch, NDCG@10)
  std::size_t best_epoch = 0;                     // 0: initial parameters
  double best_val_ndcg10 = 0.0;
  Denoiser best;
  Denoiser final_model;
  OptimizerState optimizer;
  std::vector<std::string> warnings;
};

// Minibatch Adam on the ELBO surrogate; keeps the parameters with the best
// validation NDCG@10. Throws NumericalError on a non-finite loss.
PretrainReport pretrain(const Denoiser& init, const data::DataSplit& split, const DiffusionSchedule& s,
                        const PretrainConfig& cfg);

std::string loss_curve_csv(const PretrainReport& r);

}  // namespace refit::diffusion
