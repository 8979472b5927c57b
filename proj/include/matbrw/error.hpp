// SPDX-FileCopyrightText: 2026 matbrw contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace matbrw {

enum class ErrorCode {
  SingularMatrix,
  InvalidArgument,
  NoConvergence,
  NonPositiveEigenfunction,
  NoInteriorMinimum,
  OutOfRange,
  NotCalibratable,
  NoDecay,
  DegenerateWeights,
  MissingDensity,
  TooFewSurvivors,
  NoPlateau,
  TooFewSamples,
  VariantsNotTracked,
  InsufficientPool,
  PopulationCapExceeded,
  ConfigError,
  IoError,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& what);

}  // namespace matbrw
