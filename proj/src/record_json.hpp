#pragma once

#include <optional>

#include "json.hpp"

#include "telematics/domain.hpp"

namespace telematics::detail {

// Record fields from an already-parsed JSON object; nullopt when unusable.
std::optional<RawPointRecord> record_from_json(const nlohmann::json& obj, SpeedUnit unit);

}  // namespace telematics::detail
