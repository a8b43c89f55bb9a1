#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "refit/checkpoint.hpp"
#include "refit/data.hpp"
#include "refit/diffusion.hpp"
#include "refit/exec.hpp"
#include "refit/optim.hpp"
#include "refit/reward.hpp"

namespace refit::finetune {

using diffusion::CVecView;
using diffusion::Denoiser;
using diffusion::DiffusionSchedule;
using diffusion::Trajectory;
using diffusion::Vec;

// The denoising chain read as an MDP: state s_t = (t, u_{T-t}), action
// a_t = u_{T-t-1}, reward only on the last transition.
class MdpView {
 public:
  MdpView(const Trajectory& traj, double terminal_reward) : traj_(&traj), terminal_(terminal_reward) {}

  int horizon() const { return traj_->steps(); }
  const Vec& state(int t) const { return traj_->states.at(static_cast<std::size_t>(t)); }
  const Vec& action(int t) const { return traj_->states.at(static_cast<std::size_t>(t) + 1); }
  // Diffusion step of the transition taken from state t.
  int diffusion_step(int t) const { return horizon() - t; }
  double reward(int t) const { return t == horizon() - 1 ? terminal_ : 0.0; }
  double cumulative_reward() const;

 private:
  const Trajectory* traj_;
  double terminal_;
};

enum class Method { Reinforce, Elbo, Rwr };

Method parse_method(std::string_view name);
std::string_view method_name(Method m);

struct FinetuneConfig {
  Method method = Method::Reinforce;
  std::size_t iterations = 500;
  std::size_t batch_users = 100;
  double learning_rate = 1e-4;
  AdamConfig adam{};  // learning_rate above takes precedence
  reward::RewardConfig reward_cfg{};
  Seed seed = 0;
  Seed eval_seed = 0;
  std::size_t eval_every = 10;
  std::size_t patience = 10;  // evaluations without improvement; 0 disables early stopping
  std::vector<std::size_t> ns{10, 20};
  bool baseline = false;             // subtract the batch-mean reward
  std::size_t rollouts_per_user = 1;
  bool evaluate_validation = true;
  bool trace_rewards = false;
  Exec exec = Exec::Parallel;

  void validate() const;
};

// Paper-sanctioned sampled-user counts; others are accepted with a warning.
bool sanctioned_batch_users(std::size_t b);

double cumulative_reward(const Trajectory& traj, const reward::RewardConfig& cfg,
                         const data::InteractionMatrix& train, const data::SimilarityIndex& index,
                         data::UserId u);

// (1/B) sum_b r_b sum_t grad log p(u_{t-1} | u_t), transitions re-scored under den.
Vec reinforce_gradient(const Denoiser& den, const DiffusionSchedule& s, std::span<const Trajectory> trajs,
                       std::span<const double> rewards, Exec exec = Exec::Parallel);

// -(1/B) sum_b r_b sum_t log p(u_{t-1} | u_t); its gradient is -reinforce_gradient.
double reinforce_surrogate_loss(const Denoiser& den, const DiffusionSchedule& s, std::span<const Trajectory> trajs,
                                std::span<const double> rewards);

struct IterationRecord {
  std::size_t iteration = 0;
  double mean_reward = 0.0;
  double mean_loss = 0.0;
  bool evaluated = false;
  std::vector<double> val_recall;  // aligned with FinetuneConfig::ns
  std::vector<double> val_ndcg;
  double wall_ms = 0.0;
  double neighbor_ms = 0.0;
};

// One rollout's reward, as written to reward_trace.csv.
struct RewardTraceRow {
  std::size_t iteration = 0;
  data::UserId user = 0;
  reward::Variant variant = reward::Variant::RACS;
  double value = 0.0;
  std::size_t n_k = 0;
  double n_sim_k = 0.0;
};

struct FinetuneReport {
  Method method = Method::Reinforce;
  std::vector<std::size_t> ns;
  std::vector<IterationRecord> curve;  // entry 0 is the starting model
  std::size_t best_iteration = 0;
  double best_val_ndcg10 = 0.0;
  Denoiser best;
  Denoiser final_model;
  OptimizerState optimizer;
  bool early_stopped = false;
  bool aborted = false;
  std::string abort_reason;
  std::vector<std::string> warnings;
  std::vector<RewardTraceRow> reward_trace;  // filled when FinetuneConfig::trace_rewards

  std::vector<double> reward_curve() const;
};

struct FinetuneData {
  const data::DataSplit* split = nullptr;
  // Precomputed neighbours. When null, each sampled user's neighbours are
  // searched over all users inside the iteration (timed separately).
  const data::SimilarityIndex* index = nullptr;
};

FinetuneReport finetune_reinforce(const Denoiser& den, const FinetuneData& data, const DiffusionSchedule& s,
                                  const FinetuneConfig& cfg, const std::optional<OptimizerState>& resume = {});
FinetuneReport finetune_elbo(const Denoiser& den, const FinetuneData& data, const DiffusionSchedule& s,
                             const FinetuneConfig& cfg, const std::optional<OptimizerState>& resume = {});
FinetuneReport finetune_rwr(const Denoiser& den, const FinetuneData& data, const DiffusionSchedule& s,
                            const FinetuneConfig& cfg, const std::optional<OptimizerState>& resume = {});
// Dispatches on cfg.method.
FinetuneReport run_finetune(const Denoiser& den, const FinetuneData& data, const DiffusionSchedule& s,
                            const FinetuneConfig& cfg, const std::optional<OptimizerState>& resume = {});

// Users sampled at `iteration`: batch_users distinct entries of `eligible`.
std::vector<data::UserId> sample_batch(std::span<const data::UserId> eligible, std::size_t batch_users, Seed seed,
                                       std::size_t iteration);
// Seed of the forward-process draws used by the ELBO and RWR steps at `iteration`.
Seed elbo_draw_seed(Seed seed, std::size_t iteration);

// Deterministic columns only (no wall-clock), so it replays byte-for-byte.
std::string curves_csv(const FinetuneReport& r);
std::string timing_csv(const FinetuneReport& r);
std::string reward_trace_csv(const FinetuneReport& r);
}  // namespace refit::finetune
