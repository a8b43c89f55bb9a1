#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "refit/data.hpp"
#include "refit/diffusion.hpp"
#include "refit/finetune.hpp"
#include "refit/pretrain.hpp"
#include "refit/scaling.hpp"

namespace refit::app {

using Json = nlohmann::ordered_json;

// Every key the tools understand, with its default value.
Json default_config();

// defaults <- file (if any) <- overrides ("a.b.c=value", value parsed as JSON
// when possible, otherwise taken as a string). Unknown keys are a ConfigError.
Json resolve_config(const std::filesystem::path& file, const std::vector<std::string>& overrides);

// Named sub-streams of the master seed.
struct Seeds {
  Seed master, data, split, init, pretrain, rollout, eval, bench;
};
Seeds derive_seeds(const Json& cfg);
Json seeds_json(const Seeds& s);

diffusion::DiffusionSchedule schedule_from(const Json& cfg);
diffusion::Architecture architecture_from(const Json& cfg, std::size_t num_items);
diffusion::PretrainConfig pretrain_from(const Json& cfg, const Seeds& seeds);
finetune::FinetuneConfig finetune_from(const Json& cfg, const Seeds& seeds);
eval::ScalingConfig bench_from(const Json& cfg, const Seeds& seeds);
std::vector<std::size_t> eval_ns(const Json& cfg);

// Loads or generates the interaction matrix described by cfg["data"].
data::InteractionMatrix load_data(const Json& cfg, const Seeds& seeds, std::vector<std::string>* notes = nullptr);
data::DataSplit split_data(const data::InteractionMatrix& m, const Json& cfg, const Seeds& seeds);

}  // namespace refit::app
