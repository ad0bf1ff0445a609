#pragma once

// Key-value experiment configuration for the CLI.
//
//   # comment
//   datasets = stress, cyclic, shell
//   seeds = 1, 2, 3
//
// Lists are comma separated; unknown keys are errors. See config_reference()
// for every key and its default.

#include "topoattn/protocol.hpp"

#include <filesystem>
#include <string>

namespace topoattn {

using ExperimentConfig = CampaignConfig;

ExperimentConfig default_experiment_config();

// Applies the keys in `text` on top of `base`.
ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = default_experiment_config());
ExperimentConfig load_config(const std::filesystem::path& path);

// Canonical text that parse_config round-trips.
std::string to_config_text(const ExperimentConfig& config);

// Key reference with defaults, printed by `topoattn run --help-config`.
std::string config_reference();

// min(requested, TOPOATTN_THREADS) when the variable is set, at least 1.
int effective_threads(int requested);

}  // namespace topoattn
