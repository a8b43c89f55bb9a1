#include "refit/finetune.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "refit/batch.hpp"
#include "refit/error.hpp"
#include "refit/eval.hpp"
#include "refit/pretrain.hpp"

namespace refit::finetune {

double MdpView::cumulative_reward() const {
  double total = 0.0;
  for (int t = 0; t < horizon(); ++t) total += reward(t);
  return total;
}

Method parse_method(std::string_view name) {
  if (name == "REINFORCE" || name == "reinforce") return Method::Reinforce;
  if (name == "ELBO" || name == "elbo") return Method::Elbo;
  if (name == "RWR" || name == "rwr") return Method::Rwr;
  throw ConfigError("unknown fine-tuning method '" + std::string(name) + "'");
}

std::string_view method_name(Method m) {
  switch (m) {
    case Method::Reinforce: return "REINFORCE";
    case Method::Elbo: return "ELBO";
    case Method::Rwr: return "RWR";
  }
  return "?";
}

void FinetuneConfig::validate() const {
  if (iterations < 1) throw ConfigError("iterations must be >= 1");
  if (batch_users < 1) throw ConfigError("batch_users must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be >= 0");
  if (rollouts_per_user < 1) throw ConfigError("rollouts_per_user must be >= 1");
  if (ns.empty()) throw ConfigError("at least one evaluation cutoff is required");
  reward_cfg.validate();
}

bool sanctioned_batch_users(std::size_t b) { return b == 30 || b == 50 || b == 100 || b == 200 || b == 300; }

double cumulative_reward(const Trajectory& traj, const reward::RewardConfig& cfg, const data::InteractionMatrix& train,
                         const data::SimilarityIndex& index, data::UserId u) {
  const double r = reward::user_reward(traj.final_state(), train, index, u, cfg).value;
  return MdpView(traj, r).cumulative_reward();
}

namespace {

// value = sum_b w_b sum_t log p, grad = sum_b w_b sum_t grad log p (both scaled by `scale`).
BatchSum reinforce_accumulate(const Denoiser& den, const DiffusionSchedule& s, std::span<const Trajectory> trajs,
                              std::span<const double> weights, double scale, Exec exec) {
  if (trajs.size() != weights.size() || trajs.empty())
    throw DimensionError("reinforce: need one reward per trajectory and at least one trajectory");
  return accumulate_batch(trajs.size(), den.num_params(), exec, [&](std::size_t b, std::span<double> g) {
    const auto& tr = trajs[b];
    if (tr.steps() != s.steps) throw DimensionError("trajectory length does not match the schedule");
    double total = 0.0;
    for (int k = 0; k < tr.steps(); ++k) {
      const int t = s.steps - k;
      const double w = weights[b] * scale;
      const double lp = diffusion::transition_logp_grad(den, tr.states[static_cast<std::size_t>(k) + 1],
                                                        tr.states[static_cast<std::size_t>(k)], t, s, g, w);
      if (!std::isfinite(lp))
        throw NumericalError("non-finite log-probability in trajectory " + std::to_string(b) + " at step " +
                             std::to_string(t));
      total += lp;
    }
    return weights[b] * scale * total;
  });
}

}  // namespace

Vec reinforce_gradient(const Denoiser& den, const DiffusionSchedule& s, std::span<const Trajectory> trajs,
                       std::span<const double> rewards, Exec exec) {
  auto sum = reinforce_accumulate(den, s, trajs, rewards, 1.0 / static_cast<double>(trajs.size()), exec);
  return std::move(sum.grad);
}

double reinforce_surrogate_loss(const Denoiser& den, const DiffusionSchedule& s, std::span<const Trajectory> trajs,
                                std::span<const double> rewards) {
  if (trajs.size() != rewards.size() || trajs.empty()) throw DimensionError("reinforce: size mismatch");
  double total = 0.0;
  for (std::size_t b = 0; b < trajs.size(); ++b) {
    double lp = 0.0;
    for (int k = 0; k < trajs[b].steps(); ++k)
      lp += diffusion::transition_logp(den, trajs[b].states[static_cast<std::size_t>(k) + 1],
                                       trajs[b].states[static_cast<std::size_t>(k)], s.steps - k, s);
    total += rewards[b] * lp;
  }
  return -total / static_cast<double>(trajs.size());
}

std::vector<double> FinetuneReport::reward_curve() const {
  std::vector<double> v;
  for (const auto& r : curve)
    if (r.iteration > 0) v.push_back(r.mean_reward);
  return v;
}

std::vector<data::UserId> sample_batch(std::span<const data::UserId> eligible, std::size_t batch_users, Seed seed,
                                       std::size_t iteration) {
  if (batch_users > eligible.size())
    throw ConfigError("batch_users " + std::to_string(batch_users) + " exceeds the " +
                      std::to_string(eligible.size()) + " users with training data");
  std::vector<data::UserId> pool(eligible.begin(), eligible.end());
  Rng rng(derive_seed(seed, "batch", iteration));
  for (std::size_t k = 0; k < batch_users; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
    std::swap(pool[k], pool[pick(rng)]);
  }
  pool.resize(batch_users);
  return pool;
}

Seed elbo_draw_seed(Seed seed, std::size_t iteration) { return derive_seed(seed, "elbo-draw", iteration); }

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

bool finite_params(const Denoiser& d) {
  return std::all_of(d.params().begin(), d.params().end(), [](double x) { return std::isfinite(x); });
}

std::size_t primary_cutoff(const std::vector<std::size_t>& ns) {
  return std::find(ns.begin(), ns.end(), 10) != ns.end() ? 10 : ns.front();
}

void record_eval(IterationRecord& rec, const eval::MetricReport& m, const std::vector<std::size_t>& ns) {
  rec.evaluated = true;
  for (auto n : ns) {
    rec.val_recall.push_back(m.recall.at(n));
    rec.val_ndcg.push_back(m.ndcg.at(n));
  }
}

FinetuneReport run_loop(const Denoiser& start, const FinetuneData& fd, const DiffusionSchedule& s,
                        const FinetuneConfig& cfg, Method method, const std::optional<OptimizerState>& resume) {
  cfg.validate();
  if (fd.split == nullptr) throw ConfigError("fine-tuning needs a data split");
  const auto& train = fd.split->train;
  if (train.num_items != start.num_items()) throw DimensionError("model and data item counts differ");
  if (cfg.reward_cfg.variant == reward::Variant::RACS && fd.index == nullptr && cfg.reward_cfg.d >= train.num_users)
    throw ConfigError("d must be smaller than the number of users");

  std::vector<data::UserId> eligible;
  for (std::size_t u = 0; u < train.num_users; ++u)
    if (!train.rows[u].empty()) eligible.push_back(static_cast<data::UserId>(u));

  FinetuneReport rep;
  rep.method = method;
  rep.ns = cfg.ns;
  if (!sanctioned_batch_users(cfg.batch_users))
    rep.warnings.push_back("batch_users " + std::to_string(cfg.batch_users) + " is outside {30, 50, 100, 200, 300}");

  Denoiser den = start;
  AdamConfig acfg = cfg.adam;
  acfg.learning_rate = cfg.learning_rate;
  Adam adam(den.num_params(), acfg);
  if (resume && resume->m.size() == den.num_params()) adam.restore(resume->steps, resume->m, resume->v);

  const std::size_t primary = primary_cutoff(cfg.ns);
  const std::size_t primary_pos =
      static_cast<std::size_t>(std::find(cfg.ns.begin(), cfg.ns.end(), primary) - cfg.ns.begin());
  auto validate_now = [&](IterationRecord& rec) {
    const auto m = eval::evaluate(den, s, train, fd.split->val, cfg.ns, cfg.eval_seed, cfg.exec);
    record_eval(rec, m, cfg.ns);
    return rec.val_ndcg[primary_pos];
  };

  IterationRecord first;
  rep.best = den;
  if (cfg.evaluate_validation) rep.best_val_ndcg10 = validate_now(first);
  rep.curve.push_back(first);

  const Seed rollout_base = derive_seed(cfg.seed, "rollout");
  std::size_t since_best = 0;
  const std::size_t R = cfg.rollouts_per_user;

  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    const auto t0 = Clock::now();
    IterationRecord rec;
    rec.iteration = it;
    const auto users = sample_batch(eligible, cfg.batch_users, cfg.seed, it);
    const std::size_t B = users.size();

    try {
      // Neighbour lookup: precomputed, or searched over all users per sampled user.
      std::vector<std::vector<data::Neighbor>> online;
      if (cfg.reward_cfg.variant == reward::Variant::RACS && fd.index == nullptr) {
        const auto tn = Clock::now();
        online.resize(B);
        parallel_for(B, cfg.exec, [&](std::size_t b) {
          online[b] = data::top_similar_users(train, users[b], cfg.reward_cfg.d);
        });
        rec.neighbor_ms = ms_since(tn);
      }
      auto neighbors_of = [&](std::size_t b) -> std::span<const data::Neighbor> {
        if (cfg.reward_cfg.variant != reward::Variant::RACS) return {};
        if (fd.index) return fd.index->neighbors.at(users[b]);
        return online[b];
      };

      std::vector<Trajectory> trajs(B * R);
      std::vector<double> rewards(B * R, 0.0);
      std::vector<reward::RewardResult> results(B * R);
      parallel_for(B * R, cfg.exec, [&](std::size_t j) {
        const std::size_t b = j / R;
        const auto u = users[b];
        trajs[j] = diffusion::sample_trajectory(den, train.dense_row(u), s,
                                                derive_seed(rollout_base, it, static_cast<std::uint64_t>(u) * R + j % R));
        results[j] = reward::user_reward(trajs[j].final_state(), train, neighbors_of(b), u, cfg.reward_cfg);
        rewards[j] = MdpView(trajs[j], results[j].value).cumulative_reward();
      });
      rec.mean_reward = std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(rewards.size());
      if (cfg.trace_rewards)
        for (std::size_t j = 0; j < B * R; ++j)
          rep.reward_trace.push_back({it, users[j / R], cfg.reward_cfg.variant, results[j].value, results[j].n_k,
                                      results[j].n_sim_k});

      Vec step_grad;
      if (method == Method::Reinforce) {
        std::vector<double> w = rewards;
        if (cfg.baseline)
          for (auto& x : w) x -= rec.mean_reward;
        auto sum = reinforce_accumulate(den, s, trajs, w, 1.0 / static_cast<double>(w.size()), cfg.exec);
        rec.mean_loss = -sum.value;
        // Ascent on J: descend on the surrogate.
        step_grad = std::move(sum.grad);
        for (auto& g : step_grad) g = -g;
      } else {
        std::vector<double> w;
        if (method == Method::Rwr) {
          w.resize(B);
          for (std::size_t b = 0; b < B; ++b) {
            double acc = 0.0;
            for (std::size_t r = 0; r < R; ++r) acc += rewards[b * R + r];
            w[b] = acc / static_cast<double>(R);
          }
        }
        auto bl = diffusion::elbo_batch(den, s, train, users, elbo_draw_seed(cfg.seed, it), w, cfg.exec);
        rec.mean_loss = bl.loss;
        step_grad = std::move(bl.grad);
      }
      if (!std::all_of(step_grad.begin(), step_grad.end(), [](double x) { return std::isfinite(x); }))
        throw NumericalError("non-finite gradient at iteration " + std::to_string(it));

      Denoiser last_good = den;
      adam.step(den.params(), step_grad);
      if (!finite_params(den)) {
        den = std::move(last_good);
        throw NumericalError("parameters became non-finite at iteration " + std::to_string(it));
      }
    } catch (const NumericalError& e) {
      rep.aborted = true;
      rep.abort_reason = e.what();
      break;
    }

    const bool eval_now =
        cfg.evaluate_validation && cfg.eval_every > 0 && (it % cfg.eval_every == 0 || it == cfg.iterations);
    rec.wall_ms = ms_since(t0);
    if (eval_now) {
      const double v = validate_now(rec);
      if (v > rep.best_val_ndcg10) {
        rep.best_val_ndcg10 = v;
        rep.best_iteration = it;
        rep.best = den;
        since_best = 0;
      } else {
        ++since_best;
      }
    }
    rep.curve.push_back(std::move(rec));
    if (eval_now && cfg.patience > 0 && since_best >= cfg.patience) {
      rep.early_stopped = true;
      break;
    }
  }
  if (!cfg.evaluate_validation) {
    rep.best = den;
    rep.best_iteration = rep.curve.back().iteration;
  }
  rep.final_model = std::move(den);
  rep.optimizer = {adam.steps(), adam.first_moment(), adam.second_moment()};
  return rep;
}

}  // namespace

FinetuneReport finetune_reinforce(const Denoiser& den, const FinetuneData& data, const DiffusionSchedule& s,
                                  const FinetuneConfig& cfg, const std::optional<OptimizerState>& resume) {
  return run_loop(den, data, s, cfg, Method::Reinforce, resume);
}

FinetuneReport finetune_elbo(const Denoiser& den, const FinetuneData& data, const DiffusionSchedule& s,
                             const FinetuneConfig& cfg, const std::optional<OptimizerState>& resume) {
  return run_loop(den, data, s, cfg, Method::Elbo, resume);
}

FinetuneReport finetune_rwr(const Denoiser& den, const FinetuneData& data, const DiffusionSchedule& s,
                            const FinetuneConfig& cfg, const std::optional<OptimizerState>& resume) {
  return run_loop(den, data, s, cfg, Method::Rwr, resume);
}

FinetuneReport run_finetune(const Denoiser& den, const FinetuneData& data, const DiffusionSchedule& s,
                            const FinetuneConfig& cfg, const std::optional<OptimizerState>& resume) {
  return run_loop(den, data, s, cfg, cfg.method, resume);
}

namespace {

void put_num(std::ostream& os, double v) {
  if (std::isfinite(v)) os << v;
}

}  // namespace

std::string curves_csv(const FinetuneReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "iteration,mean_reward,mean_loss";
  for (auto n : r.ns) os << ",val_recall@" << n;
  for (auto n : r.ns) os << ",val_ndcg@" << n;
  os << '\n';
  for (const auto& rec : r.curve) {
    os << rec.iteration << ',';
    if (rec.iteration > 0) {
      put_num(os, rec.mean_reward);
      os << ',';
      put_num(os, rec.mean_loss);
    } else {
      os << ',';
    }
    for (std::size_t k = 0; k < r.ns.size(); ++k) {
      os << ',';
      if (rec.evaluated) put_num(os, rec.val_recall[k]);
    }
    for (std::size_t k = 0; k < r.ns.size(); ++k) {
      os << ',';
      if (rec.evaluated) put_num(os, rec.val_ndcg[k]);
    }
    os << '\n';
  }
  return os.str();
}

std::string timing_csv(const FinetuneReport& r) {
  std::ostringstream os;
  os.precision(6);
  os << "iteration,wall_ms_per_iter,neighbor_search_ms\n";
  for (const auto& rec : r.curve)
    if (rec.iteration > 0) os << rec.iteration << ',' << rec.wall_ms << ',' << rec.neighbor_ms << '\n';
  return os.str();
}

std::string reward_trace_csv(const FinetuneReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "iteration,user,variant,value,n_k,n_sim_k\n";
  for (const auto& t : r.reward_trace)
    os << t.iteration << ',' << t.user << ',' << reward::variant_name(t.variant) << ',' << t.value << ',' << t.n_k
       << ',' << t.n_sim_k << '\n';
  return os.str();
}

}  // namespace refit::finetune
