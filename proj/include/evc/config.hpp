#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "evc/trainer.hpp"

namespace evc {

/// Flat dotted-key view of a TrainingConfig, e.g. {"train.total_epochs": 150,
/// "loss.lambda_f0": 5.0, "arch.hidden": 32}.
nlohmann::json config_to_flat(const TrainingConfig& config);

/// Applies every key in `flat` to `base`. Unknown keys and type errors are
/// collected and reported together in one evc::Error; so are validation failures.
TrainingConfig config_from_flat(const nlohmann::json& flat, TrainingConfig base = {});

/// Merges `key=value` override strings (value parsed as JSON, falling back to
/// a plain string) into a flat config object.
void apply_overrides(nlohmann::json& flat, const std::vector<std::string>& overrides);

TrainingConfig load_config_file(const std::filesystem::path& path, TrainingConfig base = {});

}  // namespace evc
