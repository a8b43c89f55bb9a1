#include <doctest.h>

#include <cmath>
#include <random>
#include <map>
#include <set>

#include "../oracles.hpp"
#include "refit/data.hpp"
#include "refit/error.hpp"
#include "refit/finetune.hpp"
#include "refit/pretrain.hpp"

using namespace refit;
using namespace refit::finetune;
using diffusion::Architecture;

namespace {

Denoiser random_denoiser(Architecture arch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  Vec p(arch.num_params());
  for (auto& x : p) x = u(rng);
  return Denoiser(arch, p);
}

struct Fixture {
  data::DataSplit split;
  data::SimilarityIndex index;
  DiffusionSchedule sched;
  Denoiser den;
};

Fixture small_fixture(std::uint64_t seed = 1) {
  Fixture f;
  auto m = data::generate_clustered(40, 12, 3, 0.6, 0.05, seed);
  f.split = data::split_holdout(m, 0.7, 0.15, seed);
  f.index = data::build_similarity_index(f.split.train, 3);
  f.sched = diffusion::build_schedule(3, 0.02, 0.2);
  f.den = Denoiser::initialized({12, 6, 4}, seed);
  return f;
}

FinetuneConfig small_config() {
  FinetuneConfig c;
  c.iterations = 6;
  c.batch_users = 10;
  c.learning_rate = 1e-3;
  c.reward_cfg = {0.5, 3, 3, reward::Variant::RACS};
  c.seed = 5;
  c.eval_seed = 6;
  c.eval_every = 2;
  c.patience = 0;
  c.ns = {3, 5};
  return c;
}

diffusion::Trajectory frozen_trajectory(const Vec& final_scores, std::size_t steps) {
  diffusion::Trajectory t;
  for (std::size_t k = 0; k < steps; ++k) t.states.push_back(Vec(final_scores.size(), 0.1 * k));
  t.states.push_back(final_scores);
  t.logp.assign(steps, -1.0);
  return t;
}

}  // namespace

TEST_CASE("mdp view indexes the trajectory") {
  auto s = diffusion::build_schedule(5, 0.02, 0.2);
  auto den = random_denoiser({6, 3, 2}, 1);
  auto tr = diffusion::sample_trajectory(den, Vec{1, 0, 1, 0, 0, 1}, s, 9);
  MdpView v(tr, 2.5);
  CHECK(v.horizon() == 5);
  for (int t = 0; t < 5; ++t) {
    CHECK(v.state(t) == tr.at_step(5 - t));
    CHECK(v.action(t) == tr.at_step(5 - t - 1));
    CHECK(v.diffusion_step(t) == 5 - t);
    CHECK(v.reward(t) == (t == 4 ? 2.5 : 0.0));
  }
  CHECK(&v.state(0) == &tr.states.front());
  CHECK(&v.action(4) == &tr.states.back());
  CHECK(v.cumulative_reward() == 2.5);
}

TEST_CASE("cumulative reward examples") {
  data::InteractionMatrix train{3, 6, {{0, 1, 2}, {0, 1}, {3}}};
  data::SimilarityIndex idx{1, {{{1, 0.8}}, {{0, 0.8}}, {{0, 0.0}}}};
  auto tr = frozen_trajectory(Vec{0.9, 0.8, 0.7, 0.1, 0.0, 0.05}, 3);
  reward::RewardConfig ra{1.0, 3, 1, reward::Variant::RACS};
  CHECK(cumulative_reward(tr, ra, train, idx, 0) == 3.0);
  data::InteractionMatrix none{2, 6, {{}, {}}};
  data::SimilarityIndex idx2{1, {{{1, 0.0}}, {{0, 0.0}}}};
  reward::RewardConfig half{0.5, 3, 1, reward::Variant::RACS};
  CHECK(cumulative_reward(tr, half, none, idx2, 0) == 0.0);
}

TEST_CASE("cumulative reward equals the enumeration oracle on random trajectories") {
  std::mt19937_64 rng(3);
  auto s = diffusion::build_schedule(3, 0.05, 0.3);
  auto den = random_denoiser({8, 3, 2}, 4);
  for (int rep = 0; rep < 100; ++rep) {
    data::InteractionMatrix train{3, 8, std::vector<data::ItemRow>(3)};
    for (auto& r : train.rows)
      for (std::uint32_t i = 0; i < 8; ++i)
        if (rng() % 2) r.push_back(i);
    data::SimilarityIndex idx{2, {{{1, 0}, {2, 0}}, {{0, 0}, {2, 0}}, {{0, 0}, {1, 0}}}};
    auto tr = diffusion::sample_trajectory(den, train.dense_row(0), s, rep);
    const std::size_t K = 1 + rng() % 3;
    reward::RewardConfig cfg{0.3, K, 2, reward::Variant::RACS};
    const double got = cumulative_reward(tr, cfg, train, idx, 0);
    auto top = oracle::topk_by_enumeration(tr.final_state(), K);
    const double nk = oracle::intersect_count(top, train.rows[0]);
    const double ns = (oracle::intersect_count(top, train.rows[1]) + oracle::intersect_count(top, train.rows[2])) / 2.0;
    CHECK(got == doctest::Approx(0.3 * nk + 0.7 * ns));
    MdpView v(tr, got);
    double sum = 0;
    for (int t = 0; t < v.horizon(); ++t) {
      if (t < v.horizon() - 1) CHECK(v.reward(t) == 0.0);
      sum += v.reward(t);
    }
    CHECK(sum == got);
  }
}

TEST_CASE("reinforce gradient linearity") {
  auto s = diffusion::build_schedule(3, 0.05, 0.3);
  auto den = random_denoiser({5, 3, 2}, 7);
  std::vector<diffusion::Trajectory> trs;
  for (int b = 0; b < 4; ++b) trs.push_back(diffusion::sample_trajectory(den, Vec{1, 0, 1, 0, 1}, s, 100 + b));
  std::vector<double> zero(4, 0.0), r{1.0, 2.0, 0.5, 3.0}, r3{3.0, 6.0, 1.5, 9.0};
  for (double g : reinforce_gradient(den, s, trs, zero)) CHECK(g == 0.0);
  auto g1 = reinforce_gradient(den, s, trs, r);
  auto g3 = reinforce_gradient(den, s, trs, r3);
  for (std::size_t k = 0; k < g1.size(); ++k) CHECK(g3[k] == doctest::Approx(3 * g1[k]).epsilon(1e-12));
  CHECK_THROWS_AS(reinforce_gradient(den, s, trs, std::vector<double>{1.0}), DimensionError);
}

TEST_CASE("reinforce gradient matches finite differences of the surrogate") {
  std::mt19937_64 rng(8);
  auto s = diffusion::build_schedule(3, 0.05, 0.3);
  for (int rep = 0; rep < 10; ++rep) {
    Architecture a{5, 3, 2};
    auto den = random_denoiser(a, 50 + rep);
    Vec u(5);
    for (auto& x : u) x = rng() % 2;
    std::vector<diffusion::Trajectory> trs{diffusion::sample_trajectory(den, u, s, rep)};
    std::vector<double> r{0.5 + rep};
    auto g = reinforce_gradient(den, s, trs, r, Exec::Serial);
    auto fd = oracle::finite_difference(
        [&](const Vec& th) { return -reinforce_surrogate_loss(Denoiser(a, th), s, trs, r); }, den.params());
    CHECK(oracle::rel_error(g, fd) < 1e-4);
  }
}

TEST_CASE("reweighted elbo batch: oracle value and finite differences") {
  auto f = small_fixture(2);
  Architecture a{12, 2, 2};
  auto den = random_denoiser(a, 3);
  std::vector<data::UserId> users{0, 3, 7, 11};
  std::vector<double> w{0.5, 2.0, 0.0, 1.25};
  auto bl = diffusion::elbo_batch(den, f.sched, f.split.train, users, 77, w, Exec::Serial);
  long double ref = 0;
  for (std::size_t b = 0; b < users.size(); ++b) {
    auto d = diffusion::draw_elbo_sample(derive_seed(77, users[b]), f.sched.steps, 12);
    ref += w[b] * diffusion::elbo_loss(den, f.split.train.dense_row(users[b]), d.t, d.noise, f.sched).loss;
  }
  CHECK(bl.loss == doctest::Approx((double)(ref / users.size())).epsilon(1e-13));
  auto fd = oracle::finite_difference(
      [&](const Vec& th) { return diffusion::elbo_batch(Denoiser(a, th), f.sched, f.split.train, users, 77, w).loss; },
      den.params());
  CHECK(oracle::rel_error(bl.grad, fd) < 1e-4);
  std::vector<double> zeros(4, 0.0), twos(4, 2.0);
  for (double g : diffusion::elbo_batch(den, f.sched, f.split.train, users, 77, zeros).grad) CHECK(g == 0.0);
  auto plain = diffusion::elbo_batch(den, f.sched, f.split.train, users, 77);
  auto doubled = diffusion::elbo_batch(den, f.sched, f.split.train, users, 77, twos);
  for (std::size_t k = 0; k < plain.grad.size(); ++k) CHECK(doubled.grad[k] == doctest::Approx(2 * plain.grad[k]));
}

TEST_CASE("batch sampling draws distinct eligible users") {
  std::vector<data::UserId> eligible{2, 4, 6, 8, 10, 12, 14};
  std::map<data::UserId, int> hits;
  for (std::size_t it = 1; it <= 2000; ++it) {
    auto b = sample_batch(eligible, 3, 9, it);
    CHECK(b.size() == 3);
    CHECK(std::set<data::UserId>(b.begin(), b.end()).size() == 3);
    for (auto u : b) ++hits[u];
    CHECK(b == sample_batch(eligible, 3, 9, it));
  }
  for (auto [u, n] : hits) CHECK(std::abs(n - 2000 * 3 / 7) < 150);
  CHECK_THROWS_AS(sample_batch(eligible, 20, 9, 1), ConfigError);
}

TEST_CASE("zero learning rate leaves the model unchanged") {
  auto f = small_fixture();
  auto cfg = small_config();
  cfg.learning_rate = 0.0;
  for (auto m : {Method::Reinforce, Method::Elbo, Method::Rwr}) {
    cfg.method = m;
    auto rep = run_finetune(f.den, {&f.split, &f.index}, f.sched, cfg);
    CHECK(rep.final_model == f.den);
    CHECK(rep.curve.size() == cfg.iterations + 1);
    for (const auto& r : rep.curve)
      if (r.evaluated) CHECK(r.val_ndcg[0] == rep.curve.front().val_ndcg[0]);
  }
}

TEST_CASE("elbo fine-tuning first step continues the pre-training loss") {
  auto f = small_fixture();
  auto cfg = small_config();
  cfg.iterations = 1;
  auto rep = finetune_elbo(f.den, {&f.split, &f.index}, f.sched, cfg);
  std::vector<data::UserId> eligible;
  for (data::UserId u = 0; u < f.split.train.num_users; ++u) eligible.push_back(u);
  auto users = sample_batch(eligible, cfg.batch_users, cfg.seed, 1);
  auto bl = diffusion::elbo_batch(f.den, f.sched, f.split.train, users, elbo_draw_seed(cfg.seed, 1));
  CHECK(rep.curve[1].mean_loss == bl.loss);
}

TEST_CASE("runs are deterministic and thread-count independent") {
  auto f = small_fixture();
  auto cfg = small_config();
  cfg.exec = Exec::Parallel;
  auto a = finetune_reinforce(f.den, {&f.split, &f.index}, f.sched, cfg);
  set_num_threads(3);
  auto b = finetune_reinforce(f.den, {&f.split, &f.index}, f.sched, cfg);
  set_num_threads(max_threads());
  cfg.exec = Exec::Serial;
  auto c = finetune_reinforce(f.den, {&f.split, &f.index}, f.sched, cfg);
  CHECK(curves_csv(a) == curves_csv(b));
  CHECK(curves_csv(a) == curves_csv(c));
  CHECK(a.final_model == c.final_model);
  CHECK(a.optimizer == c.optimizer);
}

TEST_CASE("online neighbour search matches the precomputed index") {
  auto f = small_fixture();
  auto cfg = small_config();
  auto pre = finetune_reinforce(f.den, {&f.split, &f.index}, f.sched, cfg);
  auto online = finetune_reinforce(f.den, {&f.split, nullptr}, f.sched, cfg);
  CHECK(curves_csv(pre) == curves_csv(online));
  for (std::size_t i = 1; i < online.curve.size(); ++i) CHECK(online.curve[i].neighbor_ms >= 0.0);
}

TEST_CASE("alpha one coincides with the RA variant") {
  auto f = small_fixture();
  auto cfg = small_config();
  cfg.reward_cfg = {1.0, 3, 3, reward::Variant::RACS};
  auto racs = finetune_reinforce(f.den, {&f.split, &f.index}, f.sched, cfg);
  cfg.reward_cfg.variant = reward::Variant::RA;
  auto ra = finetune_reinforce(f.den, {&f.split, &f.index}, f.sched, cfg);
  CHECK(curves_csv(racs) == curves_csv(ra));
  CHECK(racs.final_model == ra.final_model);
}

TEST_CASE("divergence aborts and keeps the last finite parameters") {
  auto f = small_fixture();
  auto cfg = small_config();
  cfg.method = Method::Elbo;
  cfg.learning_rate = 1e300;
  auto rep = run_finetune(f.den, {&f.split, &f.index}, f.sched, cfg);
  CHECK(rep.aborted);
  CHECK(!rep.abort_reason.empty());
  for (double x : rep.final_model.params()) CHECK(std::isfinite(x));
}

TEST_CASE("early stopping on a flat validation curve") {
  auto f = small_fixture();
  auto cfg = small_config();
  cfg.learning_rate = 0.0;
  cfg.eval_every = 1;
  cfg.patience = 2;
  auto rep = finetune_reinforce(f.den, {&f.split, &f.index}, f.sched, cfg);
  CHECK(rep.early_stopped);
  CHECK(rep.curve.back().iteration == 2);
  CHECK(rep.best_iteration == 0);
}

TEST_CASE("reports, traces and warnings") {
  auto f = small_fixture();
  auto cfg = small_config();
  cfg.trace_rewards = true;
  cfg.batch_users = 7;
  auto rep = finetune_reinforce(f.den, {&f.split, &f.index}, f.sched, cfg);
  CHECK(rep.reward_trace.size() == cfg.iterations * 7);
  CHECK(rep.warnings.size() == 1);
  CHECK(sanctioned_batch_users(30));
  CHECK(sanctioned_batch_users(300));
  CHECK(!sanctioned_batch_users(7));
  auto header = curves_csv(rep).substr(0, curves_csv(rep).find('\n'));
  CHECK(header == "iteration,mean_reward,mean_loss,val_recall@3,val_recall@5,val_ndcg@3,val_ndcg@5");
  CHECK(timing_csv(rep).rfind("iteration,wall_ms_per_iter,neighbor_search_ms\n", 0) == 0);
  CHECK(reward_trace_csv(rep).rfind("iteration,user,variant,value,n_k,n_sim_k\n", 0) == 0);
  cfg.iterations = 0;
  CHECK_THROWS_AS(finetune_reinforce(f.den, {&f.split, &f.index}, f.sched, cfg), ConfigError);
  CHECK(parse_method("RWR") == Method::Rwr);
  CHECK_THROWS_AS(parse_method("PPO"), ConfigError);
}
