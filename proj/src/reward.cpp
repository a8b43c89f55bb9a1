#include "refit/reward.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "refit/error.hpp"

namespace refit::reward {

Variant parse_variant(std::string_view name) {
  if (name == "RACS" || name == "racs") return Variant::RACS;
  if (name == "RA" || name == "ra") return Variant::RA;
  if (name == "COS" || name == "cos") return Variant::COS;
  throw ConfigError("unknown reward variant '" + std::string(name) + "'");
}

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::RACS: return "RACS";
    case Variant::RA: return "RA";
    case Variant::COS: return "COS";
  }
  return "?";
}

void RewardConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0,1]");
  if (K < 1) throw ConfigError("K must be >= 1");
  if (d < 1) throw ConfigError("d must be >= 1");
}

std::vector<ItemId> top_k(std::span<const double> scores, std::size_t k, std::span<const ItemId> mask) {
  std::vector<ItemId> cand;
  cand.reserve(scores.size());
  auto m = mask.begin();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    while (m != mask.end() && *m < i) ++m;
    if (m != mask.end() && *m == i) continue;
    cand.push_back(static_cast<ItemId>(i));
  }
  if (k > cand.size())
    throw ConfigError("k=" + std::to_string(k) + " exceeds the " + std::to_string(cand.size()) + " rankable items");
  auto ahead = [&](ItemId a, ItemId b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  if (k < cand.size()) {
    std::nth_element(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end(), ahead);
    cand.resize(k);
  }
  std::sort(cand.begin(), cand.end(), ahead);
  return cand;
}

std::size_t count_hits(std::span<const ItemId> ranked, std::span<const ItemId> truth_sorted) {
  std::size_t n = 0;
  for (ItemId i : ranked) n += std::binary_search(truth_sorted.begin(), truth_sorted.end(), i) ? 1 : 0;
  return n;
}

RewardResult racs_reward(std::span<const double> scores, std::span<const ItemId> target_truth,
                         std::span<const std::span<const ItemId>> neighbor_truths, const RewardConfig& cfg,
                         std::span<const ItemId> mask) {
  cfg.validate();
  if (neighbor_truths.empty()) throw ConfigError("RACS reward needs at least one neighbour");
  if (neighbor_truths.size() != cfg.d)
    throw ConfigError("RACS reward got " + std::to_string(neighbor_truths.size()) + " neighbour sets, d=" +
                      std::to_string(cfg.d));
  RewardResult r;
  r.topk_items = top_k(scores, cfg.K, mask);
  r.n_k = count_hits(r.topk_items, target_truth);
  std::size_t sim_hits = 0;
  for (auto nt : neighbor_truths) sim_hits += count_hits(r.topk_items, nt);
  r.n_sim_k = static_cast<double>(sim_hits) / static_cast<double>(neighbor_truths.size());
  r.value = cfg.alpha * static_cast<double>(r.n_k) + (1.0 - cfg.alpha) * r.n_sim_k;
  return r;
}

RewardResult ra_reward(std::span<const double> scores, std::span<const ItemId> target_truth, const RewardConfig& cfg,
                       std::span<const ItemId> mask) {
  cfg.validate();
  RewardResult r;
  r.topk_items = top_k(scores, cfg.K, mask);
  r.n_k = count_hits(r.topk_items, target_truth);
  r.value = static_cast<double>(r.n_k);
  return r;
}

RewardResult cos_reward(std::span<const double> scores, std::span<const double> truth_vector) {
  if (scores.size() != truth_vector.size()) throw DimensionError("cos_reward: length mismatch");
  double dot = 0.0, ns = 0.0, nt = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    dot += scores[i] * truth_vector[i];
    ns += scores[i] * scores[i];
    nt += truth_vector[i] * truth_vector[i];
  }
  if (ns == 0.0 || nt == 0.0) throw NumericalError("cos_reward: zero-norm input");
  RewardResult r;
  r.value = dot / (std::sqrt(ns) * std::sqrt(nt));
  return r;
}

std::vector<double> normalize_curve(std::span<const double> values) {
  std::vector<double> out(values.size(), 0.0);
  if (values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = *hi - *lo;
  if (range == 0.0) return out;
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - *lo) / range;
  return out;
}

RewardResult user_reward(std::span<const double> scores, const data::InteractionMatrix& train,
                         std::span<const data::Neighbor> neighbors, data::UserId u, const RewardConfig& cfg) {
  const auto mask = cfg.mask_train ? train.row(u) : std::span<const ItemId>{};
  switch (cfg.variant) {
    case Variant::RA: return ra_reward(scores, train.row(u), cfg, mask);
    case Variant::COS: return cos_reward(scores, train.dense_row(u));
    case Variant::RACS: break;
  }
  if (neighbors.size() < cfg.d) throw ConfigError("fewer than d neighbours available");
  std::vector<std::span<const ItemId>> truths;
  truths.reserve(cfg.d);
  for (std::size_t j = 0; j < cfg.d; ++j) truths.push_back(train.row(neighbors[j].user));
  return racs_reward(scores, train.row(u), truths, cfg, mask);
}

RewardResult user_reward(std::span<const double> scores, const data::InteractionMatrix& train,
                         const data::SimilarityIndex& index, data::UserId u, const RewardConfig& cfg) {
  return user_reward(scores, train, index.neighbors.at(u), u, cfg);
}

}  // namespace refit::reward
