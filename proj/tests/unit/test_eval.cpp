#include <doctest.h>

#include <cmath>
#include <random>

#include "../oracles.hpp"
#include "refit/data.hpp"
#include "refit/diffusion.hpp"
#include "refit/error.hpp"
#include "refit/eval.hpp"

using namespace refit;
using namespace refit::eval;

namespace {

std::vector<ItemId> pick(std::mt19937_64& rng, std::size_t n, std::size_t count, const std::vector<ItemId>& avoid) {
  std::vector<ItemId> pool;
  for (ItemId i = 0; i < n; ++i)
    if (std::find(avoid.begin(), avoid.end(), i) == avoid.end()) pool.push_back(i);
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(std::min(count, pool.size()));
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace

TEST_CASE("metric closed forms") {
  std::vector<double> s{0.1, 0.9, 0.8, 0.0, 0.2};
  std::vector<ItemId> truth{1, 2}, none;
  CHECK(recall_at_n(s, truth, none, 2) == 1.0);
  CHECK(ndcg_at_n(s, truth, none, 2) == doctest::Approx(1.0));
  std::vector<ItemId> miss{3};
  CHECK(recall_at_n(s, miss, none, 2) == 0.0);
  CHECK(ndcg_at_n(s, miss, none, 2) == 0.0);
  std::vector<ItemId> second{2};
  CHECK(ndcg_at_n(s, second, none, 2) == doctest::Approx(1 / std::log2(3.0)));
  CHECK(ndcg_at_n(s, second, none, 2) == doctest::Approx(0.6309).epsilon(1e-4));
  std::vector<ItemId> train{1};
  CHECK(ndcg_at_n(s, second, train, 1) == doctest::Approx(1.0));
  CHECK_THROWS_AS(recall_at_n(s, none, none, 2), ConfigError);
  CHECK_THROWS_AS(recall_at_n(s, truth, none, 0), ConfigError);
  CHECK_THROWS_AS(ndcg_at_n(s, truth, train, 5), ConfigError);
}

TEST_CASE("metrics match the position-enumeration oracle on 30 items") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0, 1);
  for (int rep = 0; rep < 300; ++rep) {
    std::vector<double> s(30);
    for (auto& x : s) x = rep % 3 == 0 ? std::round(u(rng) * 5) : u(rng);
    auto train = pick(rng, 30, 1 + rng() % 8, {});
    auto truth = pick(rng, 30, 1 + rng() % 6, train);
    for (std::size_t n : {1, 5, 10, 20}) {
      CHECK(recall_at_n(s, truth, train, n) == doctest::Approx((double)oracle::recall_oracle(s, truth, train, n)));
      CHECK(ndcg_at_n(s, truth, train, n) == doctest::Approx((double)oracle::dcg_oracle(s, truth, train, n)));
    }
  }
}

TEST_CASE("uniform-zero scores rank by item index") {
  std::vector<double> s(10, 0.0);
  std::vector<ItemId> train{0, 3}, truth{1, 7};
  // Candidates in order 1,2,4,5,...: item 1 first, item 7 sixth.
  CHECK(recall_at_n(s, truth, train, 5) == 0.5);
  CHECK(ndcg_at_n(s, truth, train, 6) ==
        doctest::Approx((1.0 + 1 / std::log2(7.0)) / (1.0 + 1 / std::log2(3.0))));
}

TEST_CASE("ndcg is one only for a best arrangement") {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> u(0, 1);
  for (int rep = 0; rep < 300; ++rep) {
    std::vector<double> s(8);
    for (auto& x : s) x = u(rng);
    auto truth = pick(rng, 8, 1 + rng() % 3, {});
    const std::size_t n = 1 + rng() % 4;
    auto order = oracle::full_sort(s);
    bool best = true;
    for (std::size_t p = 0; p < std::min(n, truth.size()); ++p)
      best = best && std::find(truth.begin(), truth.end(), order[p]) != truth.end();
    CHECK((ndcg_at_n(s, truth, {}, n) == doctest::Approx(1.0)) == best);
  }
}

TEST_CASE("metrics match exhaustive enumeration on small instances") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(0, 1);
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t items = 3 + rng() % 6;
    std::vector<double> s(items);
    for (auto& x : s) x = rep % 2 ? u(rng) : std::round(u(rng) * 3);
    auto train = pick(rng, items, rng() % 2, {});
    auto truth = pick(rng, items, 1 + rng() % 3, train);
    const std::size_t n = 1 + rng() % (items - train.size());
    CHECK(recall_at_n(s, truth, train, n) == doctest::Approx((double)oracle::recall_oracle(s, truth, train, n)));
    CHECK(ndcg_at_n(s, truth, train, n) == doctest::Approx((double)oracle::dcg_oracle(s, truth, train, n)));
  }
}

TEST_CASE("metrics are invariant to monotone transforms") {
  std::mt19937_64 rng(24);
  std::normal_distribution<double> nd;
  for (int rep = 0; rep < 500; ++rep) {
    std::vector<double> s(8), t(8);
    for (auto& x : s) x = nd(rng);
    const double a = 0.5 + (rng() % 100) / 10.0, b = nd(rng);
    for (int i = 0; i < 8; ++i) t[i] = rep % 2 ? a * s[i] + b : std::atan(s[i]) + a * std::exp(s[i]);
    auto truth = pick(rng, 8, 1 + rng() % 3, {});
    auto train = pick(rng, 8, rng() % 3, truth);
    const std::size_t n = 1 + rng() % 4;
    CHECK(recall_at_n(t, truth, train, n) == recall_at_n(s, truth, train, n));
    CHECK(ndcg_at_n(t, truth, train, n) == ndcg_at_n(s, truth, train, n));
  }
}

TEST_CASE("external scorers through the aggregation") {
  data::InteractionMatrix train{3, 6, {{0}, {1, 2}, {3}}};
  data::InteractionMatrix test{3, 6, {{4, 5}, {}, {0}}};
  std::vector<std::vector<double>> perfect(3, std::vector<double>(6, 0.0));
  for (std::uint32_t u = 0; u < 3; ++u)
    for (auto i : test.rows[u]) perfect[u][i] = 1.0;
  std::vector<std::size_t> ns{1, 2};
  auto r = evaluate_scores(perfect, train, test, ns);
  CHECK(r.num_evaluated_users == 2);
  CHECK(r.num_skipped_users == 1);
  CHECK(r.ndcg.at(1) == 1.0);
  CHECK(r.recall.at(2) == 1.0);
  CHECK(r.ndcg.at(2) == doctest::Approx(1.0));
}

TEST_CASE("evaluate masks train items for every user") {
  // A denoiser whose output favours train items: if they were not masked,
  // they would fill the top positions.
  auto m = data::generate_synthetic(60, 20, 0.7, 3);
  auto split = data::split_holdout(m, 0.6, 0.2, 3);
  auto s = diffusion::build_schedule(2, 0.01, 0.05);
  auto den = diffusion::Denoiser::initialized({20, 6, 2}, 1);
  std::vector<std::size_t> ns{3};
  auto rep = evaluate(den, s, split.train, split.test, ns, 5, Exec::Serial);
  std::vector<std::vector<double>> scores;
  for (data::UserId u = 0; u < 60; ++u) scores.push_back(diffusion::infer(den, split.train.dense_row(u), s, derive_seed(5, u)));
  auto ref = evaluate_scores(scores, split.train, split.test, ns);
  CHECK(rep.recall.at(3) == ref.recall.at(3));
  CHECK(rep.ndcg.at(3) == ref.ndcg.at(3));
  long double acc = 0;
  std::size_t users = 0;
  for (data::UserId u = 0; u < 60; ++u) {
    if (split.test.rows[u].empty()) continue;
    ++users;
    acc += oracle::dcg_oracle(scores[u], split.test.rows[u], split.train.rows[u], 3);
  }
  CHECK(rep.ndcg.at(3) == doctest::Approx((double)(acc / users)));
  CHECK(evaluate(den, s, split.train, split.test, ns, 5, Exec::Parallel).ndcg.at(3) == rep.ndcg.at(3));
}

TEST_CASE("rank statistics") {
  std::vector<double> x{1, 2, 3, 4, 5}, y{2, 4, 6, 8, 100}, z{5, 4, 3, 2, 1};
  CHECK(spearman(x, y) == doctest::Approx(1.0));
  CHECK(spearman(x, z) == doctest::Approx(-1.0));
  std::vector<double> tied{1, 1, 2, 3, 3};
  // Average ranks 1.5,1.5,3,4.5,4.5 against 1..5.
  const double r = 0.9486832980505138;
  CHECK(spearman(x, tied) == doctest::Approx(r));
  auto sm = smooth(std::vector<double>{1, 2, 3, 4}, 2);
  CHECK(sm == std::vector<double>{1, 1.5, 2.5, 3.5});
}

TEST_CASE("paired t-test") {
  std::vector<double> a{1.0, 2.0, 3.0, 4.0}, b{0.5, 1.8, 2.4, 3.9};
  auto t = paired_t_test(a, b);
  // Differences 0.5,0.2,0.6,0.1; reference values from scipy.stats.ttest_rel.
  CHECK(t.mean_diff == doctest::Approx(0.35));
  CHECK(t.t == doctest::Approx(2.9405882).epsilon(1e-6));
  CHECK(t.df == 3);
  CHECK(t.p_two_sided == doctest::Approx(0.0604815).epsilon(1e-5));
}

TEST_CASE("report serializations") {
  MetricReport r;
  r.recall[10] = 0.5;
  r.ndcg[10] = 0.25;
  r.num_evaluated_users = 4;
  auto j = to_json(r);
  CHECK(j.find("\"@10\": 0.5") != std::string::npos);
  auto c = to_csv(r);
  CHECK(c.rfind("metric,n,value", 0) == 0);
}
