#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "refit/diffusion.hpp"

namespace refit {

struct OptimizerState {
  std::uint64_t steps = 0;
  std::vector<double> m, v;
  bool operator==(const OptimizerState&) const = default;
};

struct Checkpoint {
  diffusion::Denoiser model;
  int steps = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  std::optional<OptimizerState> optimizer;

  diffusion::DiffusionSchedule schedule() const;
};

// Layout (little-endian):
//   char magic[8] = "REFITCK\0", u32 version = 1, u32 flags (bit0: optimizer state present),
//   u64 num_items, u64 hidden, u64 time_embedding,
//   u64 steps, f64 beta_start, f64 beta_end,
//   u64 num_params, f64 params[num_params],
//   [u64 adam_steps, f64 m[num_params], f64 v[num_params]]
void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace refit
