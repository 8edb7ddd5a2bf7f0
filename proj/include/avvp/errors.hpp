#pragma once

#include <stdexcept>

namespace avvp {

// Error taxonomy shared across the engine. Everything derives from
// std::runtime_error so the CLI can map categories onto exit codes.
struct DimensionError : std::runtime_error { using std::runtime_error::runtime_error; };
struct UsageError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ConfigError : std::runtime_error { using std::runtime_error::runtime_error; };
struct IoError : std::runtime_error { using std::runtime_error::runtime_error; };
struct GenerationError : std::runtime_error { using std::runtime_error::runtime_error; };
struct LabelingError : std::runtime_error { using std::runtime_error::runtime_error; };
struct NumericError : std::runtime_error { using std::runtime_error::runtime_error; };

}  // namespace avvp
