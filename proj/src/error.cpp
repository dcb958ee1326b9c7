#include "stuttergate/error.h"

namespace stuttergate {

const char* to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::UnsupportedFormat: return "unsupported format";
    case ErrorKind::EmptyInput: return "empty input";
    case ErrorKind::OutOfRange: return "index out of range";
    case ErrorKind::TooShort: return "input too short";
    case ErrorKind::Shape: return "shape mismatch";
    case ErrorKind::Parse: return "parse error";
    case ErrorKind::Range: return "range error";
    case ErrorKind::UnknownTag: return "unknown tag";
    case ErrorKind::Domain: return "domain error";
    case ErrorKind::Config: return "config error";
    case ErrorKind::DegenerateData: return "degenerate data";
    case ErrorKind::TrainingFailure: return "training failure";
    case ErrorKind::NumericFailure: return "numeric failure";
    case ErrorKind::UndefinedMetric: return "undefined metric";
    case ErrorKind::Io: return "i/o error";
    }
    return "error";
}

} // namespace stuttergate
