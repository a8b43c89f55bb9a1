#include "refit/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "refit/batch.hpp"
#include "refit/error.hpp"
#include "refit/eval.hpp"

namespace refit::diffusion {

ElboSample draw_elbo_sample(Seed seed, int steps, std::size_t num_items) {
  Rng rng(seed);
  ElboSample s;
  s.t = std::uniform_int_distribution<int>(1, steps)(rng);
  std::normal_distribution<double> nd(0.0, 1.0);
  s.noise.resize(num_items);
  for (auto& x : s.noise) x = nd(rng);
  return s;
}

BatchLoss elbo_batch(const Denoiser& den, const DiffusionSchedule& s, const data::InteractionMatrix& train,
                     std::span<const data::UserId> users, Seed seed, std::span<const double> weights, Exec exec) {
  if (!weights.empty() && weights.size() != users.size()) throw DimensionError("elbo_batch: one weight per user");
  if (users.empty()) throw ConfigError("elbo_batch: empty batch");
  const double inv_b = 1.0 / static_cast<double>(users.size());
  auto sum = accumulate_batch(users.size(), den.num_params(), exec, [&](std::size_t b, std::span<double> g) {
    const auto u = users[b];
    const auto sample = draw_elbo_sample(derive_seed(seed, u), s.steps, den.num_items());
    const double w = weights.empty() ? 1.0 : weights[b];
    const auto u0 = train.dense_row(u);
    return w * elbo_loss_accumulate(den, u0, sample.t, sample.noise, s, g, w * inv_b);
  });
  return {sum.value * inv_b, std::move(sum.grad)};
}

namespace {

bool all_finite(const Vec& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

bool sanctioned_batch(std::size_t b) { return b == 32 || b == 64 || b == 128; }

}  // namespace

PretrainReport pretrain(const Denoiser& init, const data::DataSplit& split, const DiffusionSchedule& s,
                        const PretrainConfig& cfg) {
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  std::vector<data::UserId> users;
  for (std::size_t u = 0; u < split.train.num_users; ++u)
    if (!split.train.rows[u].empty()) users.push_back(static_cast<data::UserId>(u));
  if (users.empty()) throw DataError("train split is empty");

  PretrainReport rep;
  if (!sanctioned_batch(cfg.batch_size))
    rep.warnings.push_back("batch_size " + std::to_string(cfg.batch_size) + " is outside {32, 64, 128}");

  Denoiser den = init;
  Adam adam(den.num_params(), cfg.adam);
  const std::size_t ns[] = {10};
  const bool select = cfg.eval_every > 0;
  rep.best = den;
  if (select) {
    rep.best_val_ndcg10 = eval::evaluate(den, s, split.train, split.val, ns, cfg.eval_seed, cfg.exec).ndcg.at(10);
    rep.val_ndcg10.emplace_back(0, rep.best_val_ndcg10);
  }

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<data::UserId> order = users;
    Rng rng(derive_seed(cfg.seed, "pretrain-order", epoch));
    std::shuffle(order.begin(), order.end(), rng);
    const Seed draw_seed = derive_seed(cfg.seed, "pretrain-draw", epoch);
    double total = 0.0;
    for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
      const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
      std::span<const data::UserId> batch(order.data() + lo, hi - lo);
      auto bl = elbo_batch(den, s, split.train, batch, draw_seed, {}, cfg.exec);
      if (!std::isfinite(bl.loss) || !all_finite(bl.grad))
        throw NumericalError("pretraining diverged at epoch " + std::to_string(epoch) + ", batch starting at " +
                             std::to_string(lo) + " (loss " + std::to_string(bl.loss) + ")");
      total += bl.loss * static_cast<double>(batch.size());
      adam.step(den.params(), bl.grad);
    }
    rep.loss_curve.push_back(total / static_cast<double>(order.size()));
    if (select && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs)) {
      const double v = eval::evaluate(den, s, split.train, split.val, ns, cfg.eval_seed, cfg.exec).ndcg.at(10);
      rep.val_ndcg10.emplace_back(epoch, v);
      if (v > rep.best_val_ndcg10) {
        rep.best_val_ndcg10 = v;
        rep.best_epoch = epoch;
        rep.best = den;
      }
    }
  }
  if (!select) {
    rep.best = den;
    rep.best_epoch = cfg.epochs;
  }
  rep.final_model = std::move(den);
  rep.optimizer = {adam.steps(), adam.first_moment(), adam.second_moment()};
  return rep;
}

std::string loss_curve_csv(const PretrainReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,mean_loss,val_ndcg@10\n";
  std::size_t k = 0;
  for (std::size_t e = 1; e <= r.loss_curve.size(); ++e) {
    while (k < r.val_ndcg10.size() && r.val_ndcg10[k].first < e) ++k;
    os << e << ',' << r.loss_curve[e - 1] << ',';
    if (k < r.val_ndcg10.size() && r.val_ndcg10[k].first == e) os << r.val_ndcg10[k].second;
    os << '\n';
  }
  return os.str();
}

}  // namespace refit::diffusion
