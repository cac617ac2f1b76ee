#pragma once

#include <stdexcept>
#include <string>

namespace cfm {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeMismatch : Error {
  using Error::Error;
};
struct UnsupportedPrimitive : Error {
  using Error::Error;
};
struct NonFiniteLoss : Error {
  using Error::Error;
};
struct NonFiniteInput : Error {
  using Error::Error;
};
struct ScheduleSingularity : Error {
  using Error::Error;
};
struct DegenerateSlice : Error {
  using Error::Error;
};
struct AllWeightsDegenerate : Error {
  using Error::Error;
};
struct BudgetExceeded : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct CheckpointError : Error {
  using Error::Error;
};

}  // namespace cfm
