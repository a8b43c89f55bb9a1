#include "config.hpp"

#include <fstream>
#include <sstream>

#include "refit/error.hpp"

namespace refit::app {

Json default_config() {
  return Json::parse(R"({
    "seed": 1,
    "threads": 0,
    "output_dir": "runs/default",
    "checkpoint": "",
    "data": {
      "source": "synthetic",
      "path": "",
      "format": "triplet-tsv",
      "num_items": null,
      "remap_items": false,
      "synthetic": {
        "kind": "uniform",
        "num_users": 200,
        "num_items": 100,
        "sparsity": 0.9,
        "clusters": 5,
        "p_in": 0.4,
        "p_out": 0.02
      },
      "split": {"train_frac": 0.8, "val_frac": 0.1}
    },
    "schedule": {"steps": 5, "beta_start": 0.0001, "beta_end": 0.02},
    "model": {"hidden": 64, "time_embedding": 16},
    "pretrain": {"epochs": 100, "batch_size": 64, "learning_rate": 0.001, "eval_every": 1},
    "finetune": {
      "method": "REINFORCE",
      "iterations": 500,
      "batch_users": 100,
      "learning_rate": 0.0001,
      "alpha": 0.5,
      "alphas": [],
      "K": 10,
      "d": 10,
      "variant": "RACS",
      "mask_train_in_reward": false,
      "patience": 10,
      "eval_every": 10,
      "baseline": false,
      "rollouts_per_user": 1,
      "trace_rewards": false,
      "resume_optimizer": false
    },
    "eval": {"ns": [10, 20], "split": "test"},
    "bench": {
      "vary": "users",
      "sizes": [1000, 2000, 4000, 8000, 16000],
      "fixed_other": 2000,
      "sparsity": 0.99,
      "iters_per_point": 5,
      "warmup": 1,
      "hidden": 8,
      "time_embedding": 4,
      "steps": 2,
      "batch_users": 100,
      "K": 10,
      "d": 10,
      "alpha": 0.5,
      "time_index_build": false
    }
  })");
}

namespace {

// Applies `patch` onto `base`, rejecting keys the defaults do not declare.
void merge_checked(Json& base, const Json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError("expected an object at '" + (path.empty() ? "<root>" : path) + "'");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    auto& slot = base[it.key()];
    if (slot.is_object() && it.value().is_object()) {
      merge_checked(slot, it.value(), key);
    } else {
      slot = it.value();
    }
  }
}

Json parse_value(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error&) {
    return Json(text);
  }
}

}  // namespace

Json resolve_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  Json cfg = default_config();
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config file " + file.string());
    Json user;
    try {
      user = Json::parse(in);
    } catch (const Json::parse_error& e) {
      throw ConfigError("config file " + file.string() + ": " + e.what());
    }
    merge_checked(cfg, user, "");
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "' is not key=value");
    std::string key = o.substr(0, eq);
    Json patch = parse_value(o.substr(eq + 1));
    for (auto dot = key.rfind('.'); dot != std::string::npos; dot = key.rfind('.')) {
      patch = Json{{key.substr(dot + 1), patch}};
      key = key.substr(0, dot);
    }
    merge_checked(cfg, Json{{key, patch}}, "");
  }
  return cfg;
}

Seeds derive_seeds(const Json& cfg) {
  const Seed m = cfg.at("seed").get<Seed>();
  return {m,
          derive_seed(m, "data"),
          derive_seed(m, "split"),
          derive_seed(m, "init"),
          derive_seed(m, "pretrain"),
          derive_seed(m, "rollout"),
          derive_seed(m, "eval"),
          derive_seed(m, "bench")};
}

Json seeds_json(const Seeds& s) {
  return Json{{"master", s.master}, {"data", s.data},       {"split", s.split}, {"init", s.init},
              {"pretrain", s.pretrain}, {"rollout", s.rollout}, {"eval", s.eval}, {"bench", s.bench}};
}

namespace {

template <class T>
T get(const Json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

diffusion::DiffusionSchedule schedule_from(const Json& cfg) {
  const auto& s = cfg.at("schedule");
  return diffusion::build_schedule(get<int>(s, "steps"), get<double>(s, "beta_start"), get<double>(s, "beta_end"));
}

diffusion::Architecture architecture_from(const Json& cfg, std::size_t num_items) {
  const auto& m = cfg.at("model");
  return {num_items, get<std::size_t>(m, "hidden"), get<std::size_t>(m, "time_embedding")};
}

diffusion::PretrainConfig pretrain_from(const Json& cfg, const Seeds& seeds) {
  const auto& p = cfg.at("pretrain");
  diffusion::PretrainConfig pc;
  pc.epochs = get<std::size_t>(p, "epochs");
  pc.batch_size = get<std::size_t>(p, "batch_size");
  pc.adam.learning_rate = get<double>(p, "learning_rate");
  pc.eval_every = get<std::size_t>(p, "eval_every");
  pc.seed = seeds.pretrain;
  pc.eval_seed = seeds.eval;
  return pc;
}

std::vector<std::size_t> eval_ns(const Json& cfg) { return get<std::vector<std::size_t>>(cfg.at("eval"), "ns"); }

finetune::FinetuneConfig finetune_from(const Json& cfg, const Seeds& seeds) {
  const auto& f = cfg.at("finetune");
  finetune::FinetuneConfig fc;
  fc.method = finetune::parse_method(get<std::string>(f, "method"));
  fc.iterations = get<std::size_t>(f, "iterations");
  fc.batch_users = get<std::size_t>(f, "batch_users");
  fc.learning_rate = get<double>(f, "learning_rate");
  fc.reward_cfg.alpha = get<double>(f, "alpha");
  fc.reward_cfg.K = get<std::size_t>(f, "K");
  fc.reward_cfg.d = get<std::size_t>(f, "d");
  fc.reward_cfg.variant = reward::parse_variant(get<std::string>(f, "variant"));
  fc.reward_cfg.mask_train = get<bool>(f, "mask_train_in_reward");
  fc.patience = get<std::size_t>(f, "patience");
  fc.eval_every = get<std::size_t>(f, "eval_every");
  fc.baseline = get<bool>(f, "baseline");
  fc.rollouts_per_user = get<std::size_t>(f, "rollouts_per_user");
  fc.trace_rewards = get<bool>(f, "trace_rewards");
  fc.ns = eval_ns(cfg);
  fc.seed = seeds.rollout;
  fc.eval_seed = seeds.eval;
  fc.validate();
  return fc;
}

eval::ScalingConfig bench_from(const Json& cfg, const Seeds& seeds) {
  const auto& b = cfg.at("bench");
  eval::ScalingConfig sc;
  sc.vary = eval::parse_axis(get<std::string>(b, "vary"));
  sc.sizes = get<std::vector<std::size_t>>(b, "sizes");
  sc.fixed_other = get<std::size_t>(b, "fixed_other");
  sc.sparsity = get<double>(b, "sparsity");
  sc.iters_per_point = get<std::size_t>(b, "iters_per_point");
  sc.warmup = get<std::size_t>(b, "warmup");
  sc.hidden = get<std::size_t>(b, "hidden");
  sc.time_embedding = get<std::size_t>(b, "time_embedding");
  sc.steps = get<int>(b, "steps");
  sc.batch_users = get<std::size_t>(b, "batch_users");
  sc.K = get<std::size_t>(b, "K");
  sc.d = get<std::size_t>(b, "d");
  sc.alpha = get<double>(b, "alpha");
  sc.time_index_build = get<bool>(b, "time_index_build");
  sc.seed = seeds.bench;
  return sc;
}

data::InteractionMatrix load_data(const Json& cfg, const Seeds& seeds, std::vector<std::string>* notes) {
  const auto& d = cfg.at("data");
  const auto source = get<std::string>(d, "source");
  if (source == "synthetic") {
    const auto& s = d.at("synthetic");
    const auto kind = get<std::string>(s, "kind");
    const auto nu = get<std::size_t>(s, "num_users");
    const auto ni = get<std::size_t>(s, "num_items");
    if (kind == "uniform") return data::generate_synthetic(nu, ni, get<double>(s, "sparsity"), seeds.data);
    if (kind == "clustered")
      return data::generate_clustered(nu, ni, get<std::size_t>(s, "clusters"), get<double>(s, "p_in"),
                                      get<double>(s, "p_out"), seeds.data);
    throw ConfigError("data.synthetic.kind must be 'uniform' or 'clustered'");
  }
  if (source != "file") throw ConfigError("data.source must be 'synthetic' or 'file'");
  const auto path = get<std::string>(d, "path");
  if (path.empty()) throw DataError("data.path is empty");
  data::LoadOptions opts;
  if (!d.at("num_items").is_null()) opts.num_items = get<std::size_t>(d, "num_items");
  opts.remap_items = get<bool>(d, "remap_items");
  auto res = data::load_interactions(path, data::parse_format(get<std::string>(d, "format")), opts);
  if (notes && !res.dropped_users.empty())
    notes->push_back("dropped " + std::to_string(res.dropped_users.size()) + " users with empty rows");
  return std::move(res.matrix);
}

data::DataSplit split_data(const data::InteractionMatrix& m, const Json& cfg, const Seeds& seeds) {
  const auto& s = cfg.at("data").at("split");
  return data::split_holdout(m, get<double>(s, "train_frac"), get<double>(s, "val_frac"), seeds.split);
}

}  // namespace refit::app
