#pragma once

#include <string>

#include "meaformer/geometry/types.hpp"

namespace meaformer::pipeline {

enum class ResponseClass { CompleteResponse, PartialResponse, ProgressiveDisease, StableDisease };

std::string to_string(ResponseClass c);
/// "CR", "PR", "PD", "SD".
std::string short_name(ResponseClass c);

inline constexpr double kPartialResponseDecrease = 0.30;
inline constexpr double kProgressionIncrease = 0.20;
inline constexpr double kProgressionAbsoluteMm = 5.0;

/// RECIST 1.1 on a single lesion pair with the baseline as nadir. A
/// follow-up of 0 mm means the lesion disappeared. Throws
/// std::invalid_argument for a baseline <= 0 or negative/non-finite input.
ResponseClass classify_response(double baseline_long_mm, double followup_long_mm);
ResponseClass classify_response(const geom::RecistMeasurement& baseline, const geom::RecistMeasurement& followup);

}  // namespace meaformer::pipeline
