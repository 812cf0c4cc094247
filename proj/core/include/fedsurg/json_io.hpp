#pragma once

#include <json.hpp>

#include "fedsurg/datagen.hpp"
#include "fedsurg/fedsim.hpp"

namespace fedsurg {

nlohmann::json generator_config_to_json(const GeneratorConfig& cfg);

/// Parses a generator config object; unknown keys are rejected. Fields not
/// present keep the values of `base`.
GeneratorConfig generator_config_from_json(const nlohmann::json& j,
                                           const GeneratorConfig& base = GeneratorConfig::desk_scale());

nlohmann::json center_dataset_to_json(const CenterDataset& center);
CenterDataset center_dataset_from_json(const nlohmann::json& j);

nlohmann::json pipeline_to_json(const StrategyPipeline& pipeline);

/// Parses a pipeline object; unknown keys are rejected. Fields not present
/// keep the values of `base` (usually a preset named by the object's "base"
/// key, handled by the caller).
StrategyPipeline pipeline_from_json(const nlohmann::json& j, const StrategyPipeline& base);

}  // namespace fedsurg
