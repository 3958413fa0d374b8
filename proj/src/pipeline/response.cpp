#include "meaformer/pipeline/response.hpp"

#include <cmath>
#include <stdexcept>

namespace meaformer::pipeline {

std::string to_string(ResponseClass c) {
  switch (c) {
    case ResponseClass::CompleteResponse: return "CompleteResponse";
    case ResponseClass::PartialResponse: return "PartialResponse";
    case ResponseClass::ProgressiveDisease: return "ProgressiveDisease";
    case ResponseClass::StableDisease: return "StableDisease";
  }
  return "?";
}

std::string short_name(ResponseClass c) {
  switch (c) {
    case ResponseClass::CompleteResponse: return "CR";
    case ResponseClass::PartialResponse: return "PR";
    case ResponseClass::ProgressiveDisease: return "PD";
    case ResponseClass::StableDisease: return "SD";
  }
  return "?";
}

ResponseClass classify_response(double baseline, double followup) {
  if (!std::isfinite(baseline) || !std::isfinite(followup) || followup < 0.0)
    throw std::invalid_argument("lesion lengths must be finite and non-negative");
  if (!(baseline > 0.0)) throw std::invalid_argument("baseline length must be positive");
  if (followup == 0.0) return ResponseClass::CompleteResponse;
  // thresholds sit exactly on decimal values (20 -> 14 mm is -30%); allow rounding noise
  constexpr double tol = 1e-9;
  const double change = (followup - baseline) / baseline;
  if (change <= -kPartialResponseDecrease + tol) return ResponseClass::PartialResponse;
  if (change >= kProgressionIncrease - tol && followup - baseline >= kProgressionAbsoluteMm - tol)
    return ResponseClass::ProgressiveDisease;
  return ResponseClass::StableDisease;
}

ResponseClass classify_response(const geom::RecistMeasurement& baseline, const geom::RecistMeasurement& followup) {
  return classify_response(baseline.long_mm, followup.long_mm);
}

}  // namespace meaformer::pipeline
