#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "config.hpp"

namespace refit::app {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigOrData = 2, kDiverged = 3 };

// Each command writes its artifacts plus resolved_config.json and
// manifest.json under cfg["output_dir"] and returns an exit code.
int cmd_synth(const Json& cfg);
int cmd_pretrain(const Json& cfg);
int cmd_finetune(const Json& cfg);
int cmd_eval(const Json& cfg);
int cmd_bench(const Json& cfg);

// Full command-line entry point (argv[0] is the program name).
int run_cli(const std::vector<std::string>& args);

}  // namespace refit::app
