#pragma once

#include <stdexcept>
#include <string>

namespace fedhbn {

// Error taxonomy. Every throw site uses one of these so callers and tests
// can distinguish bad configuration from bad data from protocol misuse.

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct StateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ProtocolError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace fedhbn
