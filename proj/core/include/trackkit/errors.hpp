#pragma once

#include <stdexcept>
#include <string>

namespace trackkit {

// Error categories map to process exit codes: config 2, data 3, numeric 4.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown when a propagated mask no longer intersects valid depth. The tracker
// catches this and turns it into a reinitialization request; it is fatal only
// if it escapes to the CLI.
struct LostSegmentError : NumericError {
  using NumericError::NumericError;
};

}  // namespace trackkit
