#pragma once

#include <stdexcept>
#include <string>

namespace progvc {

// Base of every error raised by the library. The kind string is stable and
// is what the CLI prints in its machine-parseable error line.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define PROGVC_DEFINE_ERROR(Name, tag)                                       \
    class Name : public Error {                                              \
    public:                                                                  \
        explicit Name(const std::string& what) : Error(tag, what) {}         \
    };

PROGVC_DEFINE_ERROR(ShapeError, "shape")
PROGVC_DEFINE_ERROR(ContractError, "contract")
PROGVC_DEFINE_ERROR(RangeError, "range")
PROGVC_DEFINE_ERROR(ProtocolError, "protocol")
PROGVC_DEFINE_ERROR(ConfigError, "config")
PROGVC_DEFINE_ERROR(ModelError, "model")
PROGVC_DEFINE_ERROR(ParseError, "parse")
PROGVC_DEFINE_ERROR(DecodeError, "decode")
PROGVC_DEFINE_ERROR(TrainingError, "training")
PROGVC_DEFINE_ERROR(IoError, "io")

#undef PROGVC_DEFINE_ERROR

} // namespace progvc
