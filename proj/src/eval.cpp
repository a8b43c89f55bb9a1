#include "refit/eval.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <numeric>
#include <json.hpp>
#include <sstream>

#include "refit/error.hpp"
#include "refit/reward.hpp"

namespace refit::eval {

namespace {

double discount(std::size_t pos) { return 1.0 / std::log2(static_cast<double>(pos) + 1.0); }

void check_truth(std::span<const ItemId> test_truth, std::size_t n) {
  if (test_truth.empty()) throw ConfigError("held-out truth set is empty");
  if (n < 1) throw ConfigError("N must be >= 1");
}

}  // namespace

double recall_at_n(std::span<const double> scores, std::span<const ItemId> test_truth,
                   std::span<const ItemId> train_mask, std::size_t n) {
  check_truth(test_truth, n);
  const auto top = reward::top_k(scores, n, train_mask);
  return static_cast<double>(reward::count_hits(top, test_truth)) / static_cast<double>(test_truth.size());
}

double ndcg_at_n(std::span<const double> scores, std::span<const ItemId> test_truth,
                 std::span<const ItemId> train_mask, std::size_t n) {
  check_truth(test_truth, n);
  const auto top = reward::top_k(scores, n, train_mask);
  double dcg = 0.0;
  for (std::size_t k = 0; k < top.size(); ++k)
    if (std::binary_search(test_truth.begin(), test_truth.end(), top[k])) dcg += discount(k + 1);
  double idcg = 0.0;
  for (std::size_t k = 0; k < std::min(n, test_truth.size()); ++k) idcg += discount(k + 1);
  return dcg / idcg;
}

namespace {

struct UserMetrics {
  std::vector<double> recall, ndcg;
};

MetricReport aggregate(const std::vector<UserMetrics>& per_user, const std::vector<char>& evaluated,
                       std::span<const std::size_t> ns) {
  MetricReport r;
  for (std::size_t k = 0; k < ns.size(); ++k) {
    double sr = 0.0, sn = 0.0;
    for (std::size_t u = 0; u < per_user.size(); ++u) {
      if (!evaluated[u]) continue;
      sr += per_user[u].recall[k];
      sn += per_user[u].ndcg[k];
    }
    const auto cnt = static_cast<double>(std::count(evaluated.begin(), evaluated.end(), 1));
    r.recall[ns[k]] = cnt > 0 ? sr / cnt : 0.0;
    r.ndcg[ns[k]] = cnt > 0 ? sn / cnt : 0.0;
  }
  r.num_evaluated_users = static_cast<std::size_t>(std::count(evaluated.begin(), evaluated.end(), 1));
  r.num_skipped_users = per_user.size() - r.num_evaluated_users;
  return r;
}

UserMetrics score_user(std::span<const double> scores, std::span<const ItemId> truth, std::span<const ItemId> mask,
                       std::span<const std::size_t> ns) {
  UserMetrics m;
  for (auto n : ns) {
    m.recall.push_back(recall_at_n(scores, truth, mask, n));
    m.ndcg.push_back(ndcg_at_n(scores, truth, mask, n));
  }
  return m;
}

}  // namespace

MetricReport evaluate(const diffusion::Denoiser& den, const diffusion::DiffusionSchedule& s,
                      const data::InteractionMatrix& train, const data::InteractionMatrix& heldout,
                      std::span<const std::size_t> ns, Seed seed, Exec exec) {
  if (train.num_users != heldout.num_users) throw DimensionError("train and held-out user counts differ");
  const auto nu = static_cast<std::ptrdiff_t>(train.num_users);
  std::vector<UserMetrics> per_user(train.num_users);
  std::vector<char> evaluated(train.num_users, 0);
  auto one = [&](std::ptrdiff_t u) {
    const auto uid = static_cast<data::UserId>(u);
    if (heldout.rows[uid].empty()) return;
    const auto scores = diffusion::infer(den, train.dense_row(uid), s, derive_seed(seed, uid));
    per_user[uid] = score_user(scores, heldout.row(uid), train.row(uid), ns);
    evaluated[uid] = 1;
  };
  if (exec == Exec::Serial) {
    for (std::ptrdiff_t u = 0; u < nu; ++u) one(u);
  } else {
    // Exceptions may not escape an OpenMP region; rethrow the first one afterwards.
    std::exception_ptr err;
#pragma omp parallel for schedule(dynamic, 8)
    for (std::ptrdiff_t u = 0; u < nu; ++u) {
      try {
        one(u);
      } catch (...) {
#pragma omp critical
        if (!err) err = std::current_exception();
      }
    }
    if (err) std::rethrow_exception(err);
  }
  return aggregate(per_user, evaluated, ns);
}

MetricReport evaluate_scores(std::span<const std::vector<double>> scores, const data::InteractionMatrix& train,
                             const data::InteractionMatrix& heldout, std::span<const std::size_t> ns) {
  if (scores.size() != train.num_users || train.num_users != heldout.num_users)
    throw DimensionError("score/user count mismatch");
  std::vector<UserMetrics> per_user(train.num_users);
  std::vector<char> evaluated(train.num_users, 0);
  for (std::size_t u = 0; u < train.num_users; ++u) {
    if (heldout.rows[u].empty()) continue;
    per_user[u] = score_user(scores[u], heldout.rows[u], train.rows[u], ns);
    evaluated[u] = 1;
  }
  return aggregate(per_user, evaluated, ns);
}

std::string to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  for (auto& [n, v] : r.recall) j["recall"]["@" + std::to_string(n)] = v;
  for (auto& [n, v] : r.ndcg) j["ndcg"]["@" + std::to_string(n)] = v;
  j["num_evaluated_users"] = r.num_evaluated_users;
  j["num_skipped_users"] = r.num_skipped_users;
  return j.dump(2) + "\n";
}

std::string to_csv(const MetricReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "metric,n,value\n";
  for (auto& [n, v] : r.recall) os << "recall," << n << ',' << v << '\n';
  for (auto& [n, v] : r.ndcg) os << "ndcg," << n << ',' << v << '\n';
  return os.str();
}

PairedTTest paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw ConfigError("paired t-test needs two equal samples of size >= 2");
  const auto n = static_cast<double>(a.size());
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : d) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / (n - 1));
  PairedTTest out;
  out.mean_diff = mean;
  out.df = a.size() - 1;
  if (sd == 0.0) {
    out.t = mean == 0.0 ? 0.0 : std::copysign(INFINITY, mean);
    out.p_two_sided = mean == 0.0 ? 1.0 : 0.0;
    return out;
  }
  out.t = mean / (sd / std::sqrt(n));
  boost::math::students_t dist(static_cast<double>(out.df));
  out.p_two_sided = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(out.t)));
  return out;
}

namespace {

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ConfigError("spearman needs two equal samples of size >= 2");
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

std::vector<double> smooth(std::span<const double> v, std::size_t window) {
  std::vector<double> out(v.size());
  window = std::max<std::size_t>(window, 1);
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    acc += v[i];
    if (i >= window) acc -= v[i - window];
    out[i] = acc / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

}  // namespace refit::eval
