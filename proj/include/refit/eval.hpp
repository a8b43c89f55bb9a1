#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "refit/data.hpp"
#include "refit/diffusion.hpp"
#include "refit/exec.hpp"

namespace refit::eval {

using data::ItemId;

// Full-ranking metrics: every item outside train_mask is a candidate.
double recall_at_n(std::span<const double> scores, std::span<const ItemId> test_truth,
                   std::span<const ItemId> train_mask, std::size_t n);
double ndcg_at_n(std::span<const double> scores, std::span<const ItemId> test_truth,
                 std::span<const ItemId> train_mask, std::size_t n);

struct MetricReport {
  std::map<std::size_t, double> recall;
  std::map<std::size_t, double> ndcg;
  std::size_t num_evaluated_users = 0;
  std::size_t num_skipped_users = 0;  // empty held-out set
};

// Scores each user via diffusion::infer on its train row, masks train items
// and averages the metrics over users with a non-empty held-out row.
MetricReport evaluate(const diffusion::Denoiser& den, const diffusion::DiffusionSchedule& s,
                      const data::InteractionMatrix& train, const data::InteractionMatrix& heldout,
                      std::span<const std::size_t> ns, Seed seed, Exec exec = Exec::Parallel);

inline MetricReport evaluate(const diffusion::Denoiser& den, const diffusion::DiffusionSchedule& s,
                             const data::DataSplit& split, std::span<const std::size_t> ns, Seed seed,
                             Exec exec = Exec::Parallel) {
  return evaluate(den, s, split.train, split.test, ns, seed, exec);
}

// Same aggregation over externally supplied score vectors (one per user).
MetricReport evaluate_scores(std::span<const std::vector<double>> scores, const data::InteractionMatrix& train,
                             const data::InteractionMatrix& heldout, std::span<const std::size_t> ns);

std::string to_json(const MetricReport& r);
std::string to_csv(const MetricReport& r);

struct PairedTTest {
  double mean_diff = 0.0;
  double t = 0.0;
  std::size_t df = 0;
  double p_two_sided = 1.0;
};

// Paired t-test over matched samples (one pair per seed).
PairedTTest paired_t_test(std::span<const double> a, std::span<const double> b);

double spearman(std::span<const double> x, std::span<const double> y);

// Trailing moving average with the given window.
std::vector<double> smooth(std::span<const double> v, std::size_t window);

}  // namespace refit::eval
