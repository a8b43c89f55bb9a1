#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "refit/data.hpp"

namespace refit::reward {

using data::ItemId;

enum class Variant { RACS, RA, COS };

Variant parse_variant(std::string_view name);
std::string_view variant_name(Variant v);

struct RewardConfig {
  double alpha = 0.5;
  std::size_t K = 10;
  std::size_t d = 10;
  Variant variant = Variant::RACS;
  // Exclude the target's own train items from the top-K inside the reward.
  bool mask_train = false;

  void validate() const;
};

struct RewardResult {
  double value = 0.0;
  std::size_t n_k = 0;
  double n_sim_k = 0.0;  // hits averaged over the d neighbours
  std::vector<ItemId> topk_items;
};

// Indices of the k largest scores outside `mask` (sorted item ids), ties by
// ascending item index.
std::vector<ItemId> top_k(std::span<const double> scores, std::size_t k,
                          std::span<const ItemId> mask = {});

// |a ∩ b| for two ascending-sorted sets; `a` may be unsorted when small.
std::size_t count_hits(std::span<const ItemId> ranked, std::span<const ItemId> truth_sorted);

RewardResult racs_reward(std::span<const double> scores, std::span<const ItemId> target_truth,
                         std::span<const std::span<const ItemId>> neighbor_truths,
                         const RewardConfig& cfg, std::span<const ItemId> mask = {});

RewardResult ra_reward(std::span<const double> scores, std::span<const ItemId> target_truth,
                       const RewardConfig& cfg, std::span<const ItemId> mask = {});

RewardResult cos_reward(std::span<const double> scores, std::span<const double> truth_vector);

// Min-max scaling; a constant sequence maps to zeros.
std::vector<double> normalize_curve(std::span<const double> values);

// Dispatch on cfg.variant for user u, truths taken from `train` and
// neighbours from `index`.
RewardResult user_reward(std::span<const double> scores, const data::InteractionMatrix& train,
                         const data::SimilarityIndex& index, data::UserId u, const RewardConfig& cfg);
// Same, with u's neighbours (at least d of them) passed directly.
RewardResult user_reward(std::span<const double> scores, const data::InteractionMatrix& train,
                         std::span<const data::Neighbor> neighbors, data::UserId u, const RewardConfig& cfg);

}  // namespace refit::reward
