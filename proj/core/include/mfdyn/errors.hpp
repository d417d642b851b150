#pragma once

#include <stdexcept>
#include <string>

namespace mfdyn {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidGrid : Error { using Error::Error; };
struct InvalidIntensity : Error { using Error::Error; };
struct SingularRegression : Error { using Error::Error; };
struct EmptySample : Error { using Error::Error; };
struct LengthMismatch : Error { using Error::Error; };
struct ObstacleCross : Error { using Error::Error; };
struct ImplicitDiverge : Error { using Error::Error; };
struct NoConvergence : Error { using Error::Error; };
struct TooLarge : Error { using Error::Error; };
struct InvalidTerminal : Error { using Error::Error; };
struct InvalidParam : Error { using Error::Error; };
struct BackendUnsupported : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };

}  // namespace mfdyn
