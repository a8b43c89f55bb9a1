#include "refit/scaling.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <json.hpp>
#include <sstream>

#include "refit/data.hpp"
#include "refit/error.hpp"
#include "refit/finetune.hpp"

namespace refit::eval {

ScaleAxis parse_axis(std::string_view name) {
  if (name == "users") return ScaleAxis::Users;
  if (name == "items") return ScaleAxis::Items;
  throw ConfigError("vary must be 'users' or 'items'");
}

std::string_view axis_name(ScaleAxis a) { return a == ScaleAxis::Users ? "users" : "items"; }

std::vector<double> ScalingReport::doubling_ratios() const {
  std::vector<double> r;
  for (std::size_t k = 1; k < points.size(); ++k)
    r.push_back(points[k].seconds_per_iteration / points[k - 1].seconds_per_iteration);
  return r;
}

LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  LinearFit f{};
  f.slope = sxx > 0 ? sxy / sxx : 0.0;
  f.intercept = my - f.slope * mx;
  double ss_res = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - (f.slope * x[i] + f.intercept);
    ss_res += e * e;
  }
  f.r2 = syy > 0 ? 1.0 - ss_res / syy : 1.0;
  return f;
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

ScalingReport scaling_benchmark(const ScalingConfig& cfg) {
  if (cfg.sizes.size() < 3) throw ConfigError("scaling benchmark needs at least 3 sizes");
  for (std::size_t k = 1; k < cfg.sizes.size(); ++k)
    if (cfg.sizes[k] <= cfg.sizes[k - 1]) throw ConfigError("sizes must be strictly increasing");
  if (cfg.iters_per_point < 1) throw ConfigError("iters_per_point must be >= 1");

  ScalingReport rep;
  rep.vary = cfg.vary;
  rep.fixed_other = cfg.fixed_other;
  rep.workers = 1;

  for (std::size_t size : cfg.sizes) {
    const std::size_t nu = cfg.vary == ScaleAxis::Users ? size : cfg.fixed_other;
    const std::size_t ni = cfg.vary == ScaleAxis::Items ? size : cfg.fixed_other;
    data::DataSplit split;
    split.train = data::generate_synthetic(nu, ni, cfg.sparsity, derive_seed(cfg.seed, "bench-data", size));
    split.val = split.train;
    for (auto& r : split.val.rows) r.clear();
    split.test = split.val;

    const diffusion::Architecture arch{ni, cfg.hidden, cfg.time_embedding};
    const auto den = diffusion::Denoiser::initialized(arch, derive_seed(cfg.seed, "bench-init", size));
    const auto sched = diffusion::build_schedule(cfg.steps, 1e-4, 0.02);

    finetune::FinetuneConfig fc;
    fc.method = finetune::Method::Reinforce;
    fc.iterations = cfg.warmup + cfg.iters_per_point;
    fc.batch_users = std::min(cfg.batch_users, nu);
    fc.learning_rate = 1e-4;
    fc.reward_cfg = {cfg.alpha, cfg.K, cfg.d, reward::Variant::RACS};
    fc.seed = derive_seed(cfg.seed, "bench-run", size);
    fc.evaluate_validation = false;
    fc.patience = 0;
    fc.exec = Exec::Serial;

    ScalingPoint p;
    p.size = size;
    if (cfg.time_index_build) {
      const auto t0 = std::chrono::steady_clock::now();
      auto idx = data::build_similarity_index(split.train, cfg.d, Exec::Serial);
      p.index_build_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      (void)idx;
    }
    const auto ft = finetune::finetune_reinforce(den, {&split, nullptr}, sched, fc);
    if (ft.aborted) throw NumericalError("benchmark run diverged: " + ft.abort_reason);
    std::vector<double> wall, nbr;
    for (const auto& rec : ft.curve) {
      if (rec.iteration <= cfg.warmup) continue;
      wall.push_back(rec.wall_ms / 1000.0);
      nbr.push_back(rec.neighbor_ms / 1000.0);
    }
    p.seconds_per_iteration = median(wall);
    p.neighbor_seconds_per_iteration = median(nbr);
    double mean = 0, var = 0;
    for (double w : wall) mean += w;
    mean /= static_cast<double>(wall.size());
    for (double w : wall) var += (w - mean) * (w - mean);
    var /= static_cast<double>(wall.size());
    p.coefficient_of_variation = mean > 0 ? std::sqrt(var) / mean : 0.0;
    p.unstable = p.coefficient_of_variation > 0.5;
    rep.points.push_back(p);
  }
  std::vector<double> x, y;
  for (const auto& p : rep.points) {
    x.push_back(static_cast<double>(p.size));
    y.push_back(p.seconds_per_iteration);
  }
  const auto f = fit_line(x, y);
  rep.slope = f.slope;
  rep.intercept = f.intercept;
  rep.r2 = f.r2;
  return rep;
}

std::string to_json(const ScalingReport& r) {
  nlohmann::ordered_json j;
  j["vary"] = axis_name(r.vary);
  j["fixed_other"] = r.fixed_other;
  j["workers"] = r.workers;
  for (const auto& p : r.points)
    j["points"].push_back({{"size", p.size},
                           {"seconds_per_iteration", p.seconds_per_iteration},
                           {"neighbor_seconds_per_iteration", p.neighbor_seconds_per_iteration},
                           {"index_build_seconds", p.index_build_seconds},
                           {"coefficient_of_variation", p.coefficient_of_variation},
                           {"unstable", p.unstable}});
  j["fit"] = {{"slope", r.slope}, {"intercept", r.intercept}, {"r2", r.r2}};
  j["doubling_ratios"] = r.doubling_ratios();
  return j.dump(2) + "\n";
}

std::string to_csv(const ScalingReport& r) {
  std::ostringstream os;
  os.precision(9);
  os << "size,seconds_per_iteration,neighbor_seconds_per_iteration,index_build_seconds,cv,unstable\n";
  for (const auto& p : r.points)
    os << p.size << ',' << p.seconds_per_iteration << ',' << p.neighbor_seconds_per_iteration << ','
       << p.index_build_seconds << ',' << p.coefficient_of_variation << ',' << (p.unstable ? 1 : 0) << '\n';
  return os.str();
}

}  // namespace refit::eval
