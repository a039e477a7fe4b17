#pragma once

#include <string>

#include "retmle/replication.hpp"

namespace retmle {

// JSON text for the documented file formats. Parsers reject unknown keys.

std::string to_json(const TmleReport& report, int indent = 2);

std::string to_json(const HalFit& fit, int indent = 2);
HalFit hal_fit_from_json(const std::string& text);

std::string to_json(const DgpSpec& spec, int indent = 2);
DgpSpec dgp_from_json(const std::string& text);

std::string to_json(const HalSettings& settings, int indent = 2);

std::string to_json(const ReplicationSettings& settings, int indent = 2);
ReplicationSettings replication_settings_from_json(const std::string& text);

std::string to_json(const ReplicationResult& result, int indent = 2);
/// One row per estimator x replication.
std::string replication_csv(const ReplicationResult& result);

std::string to_json(const WeightReport& report, int indent = 2);

}  // namespace retmle
