// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "rxads/detector.hpp"
#include "rxads/features.hpp"
#include "rxads/rae.hpp"
#include "rxads/scaler.hpp"

namespace rxads {

inline constexpr int kBundleVersion = 1;
inline constexpr std::string_view kBundleFormat = "rxads-model-bundle";

/// Everything needed to score new captures: feature layout, scaler, trained
/// model and calibrated threshold.
struct ModelBundle {
  features::FeatureSchema schema;
  preprocess::ScalerParams scaler;
  rae::RaeModel model;
  detect::Threshold threshold;
};

/// Compact JSON; reals are written in shortest round-trip form so a
/// save/load/save cycle reproduces the file byte for byte.
std::string serialize_bundle(const ModelBundle& bundle);
ModelBundle deserialize_bundle(std::string_view text);

void save_bundle(const std::filesystem::path& path, const ModelBundle& bundle);
ModelBundle load_bundle(const std::filesystem::path& path);

nlohmann::json model_to_json(const rae::RaeModel& model);
rae::RaeModel model_from_json(const nlohmann::json& j);

std::string sha256_hex(std::string_view data);

}  // namespace rxads
