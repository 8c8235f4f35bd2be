#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "fmrgc/attacks.hpp"
#include "fmrgc/data.hpp"
#include "fmrgc/model.hpp"
#include "fmrgc/train.hpp"

// JSON mirrors of the config structs. Parsing starts from defaults and
// overrides whatever keys are present, so partial configs are valid.
namespace fmrgc {

nlohmann::json to_json(const AttackConfig& cfg);
AttackConfig attack_from_json(const nlohmann::json& j, AttackConfig base = {});

nlohmann::json to_json(const FmrGcConfig& cfg);
FmrGcConfig fmrgc_from_json(const nlohmann::json& j, FmrGcConfig base = {});

nlohmann::json to_json(const BackboneConfig& cfg);
BackboneConfig backbone_from_json(const nlohmann::json& j, BackboneConfig base = {});

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_from_json(const nlohmann::json& j, TrainConfig base = {});

nlohmann::json to_json(const DatasetSpec& spec);
DatasetSpec dataset_from_json(const nlohmann::json& j, DatasetSpec base = {});

// FNV-1a over the canonical (sorted-key) dump.
std::uint64_t config_hash(const nlohmann::json& j);

std::string hash_hex(std::uint64_t h);

}  // namespace fmrgc
