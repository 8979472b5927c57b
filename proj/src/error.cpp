// SPDX-FileCopyrightText: 2026 matbrw contributors
// SPDX-License-Identifier: Apache-2.0
#include "matbrw/error.hpp"

namespace matbrw {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::SingularMatrix: return "SingularMatrix";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::NonPositiveEigenfunction: return "NonPositiveEigenfunction";
    case ErrorCode::NoInteriorMinimum: return "NoInteriorMinimum";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::NotCalibratable: return "NotCalibratable";
    case ErrorCode::NoDecay: return "NoDecay";
    case ErrorCode::DegenerateWeights: return "DegenerateWeights";
    case ErrorCode::MissingDensity: return "MissingDensity";
    case ErrorCode::TooFewSurvivors: return "TooFewSurvivors";
    case ErrorCode::NoPlateau: return "NoPlateau";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::VariantsNotTracked: return "VariantsNotTracked";
    case ErrorCode::InsufficientPool: return "InsufficientPool";
    case ErrorCode::PopulationCapExceeded: return "PopulationCapExceeded";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace matbrw
