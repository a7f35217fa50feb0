// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "retnet/model.hpp"
#include "retnet/training.hpp"

// Flat `key = value` config text: `#` starts a comment, blank lines are
// skipped, unknown keys are rejected with their line number. An empty file
// yields all defaults.
namespace retnet {

struct Configs {
    ModelConfig model;
    TrainConfig train;
};

Configs parse_config_text(const std::string& text);

/// Reads and parses a config file; the file must exist.
Configs load_config(const std::string& path);

/// Canonical serialization of the model config: `key=value`, one pair per
/// line, keys sorted. Used verbatim as the checkpoint header.
std::string canonical_model_config(const ModelConfig& cfg);

/// Strict parse of canonical model-config text (every key known, no extras).
ModelConfig parse_model_config_text(const std::string& text);

} // namespace retnet
