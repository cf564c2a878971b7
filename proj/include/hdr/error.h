#pragma once

#include <stdexcept>
#include <string>

namespace hdr {

// Invalid configuration values (sizes, ratios, schedules).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed external record. `record()` is the zero-based index of the offending record,
// or -1 when the failure is not tied to a single record.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, long record = -1)
        : std::runtime_error(what), record_(record) {}
    long record() const noexcept { return record_; }

private:
    long record_;
};

class PreconditionError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace hdr
