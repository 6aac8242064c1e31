#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace specsim {

// Feasible signal-strength box shared by the trace generator, the attacker's
// constraint region and the counterfactual substitutions.
inline constexpr double kGlobalMinDbm = -110.0;
inline constexpr double kGlobalMaxDbm = -40.0;

// Binary decision labels: -1 = channel available, +1 = channel unavailable.
inline constexpr int kChannelFree = -1;
inline constexpr int kChannelBusy = +1;

inline bool is_label(int v) { return v == kChannelFree || v == kChannelBusy; }

// Single tie rule used everywhere: sign(0) = +1.
inline int sign_pm(double v) { return v >= 0.0 ? +1 : -1; }

inline double clamp_dbm(double v, double lo = kGlobalMinDbm, double hi = kGlobalMaxDbm) {
  if (v < lo) return lo;
  if (v > hi) return hi;
  return v;
}

struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

struct CalibrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace specsim
