#pragma once

#include <stdexcept>
#include <string>

namespace stuttergate {

enum class ErrorKind {
    UnsupportedFormat,
    EmptyInput,
    OutOfRange,
    TooShort,
    Shape,
    Parse,
    Range,
    UnknownTag,
    Domain,
    Config,
    DegenerateData,
    TrainingFailure,
    NumericFailure,
    UndefinedMetric,
    Io,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind),
          detail_(message) {}

    ErrorKind kind() const noexcept { return kind_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorKind kind_;
    std::string detail_;
};

} // namespace stuttergate
