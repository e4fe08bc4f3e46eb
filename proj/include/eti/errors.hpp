#pragma once

#include <stdexcept>
#include <string>

namespace eti {

/// Coarse error category; the CLI maps it onto its exit code.
enum class ErrorKind {
    config,     // bad configuration or arguments
    data,       // malformed or invalid input data
    numerical,  // singular systems, non-invertible averages
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

#define ETI_DEFINE_ERROR(Name, Kind)                                   \
    class Name : public Error {                                        \
    public:                                                            \
        explicit Name(const std::string& what)                         \
            : Error(ErrorKind::Kind, std::string(#Name ": ") + what) {} \
    }

ETI_DEFINE_ERROR(ConvexityViolation, data);
ETI_DEFINE_ERROR(DomainError, data);
ETI_DEFINE_ERROR(ParseError, data);
ETI_DEFINE_ERROR(JoinError, data);
ETI_DEFINE_ERROR(ConfigError, config);
ETI_DEFINE_ERROR(GridError, config);
ETI_DEFINE_ERROR(SingularSystem, numerical);
ETI_DEFINE_ERROR(NonInvertibleWbar, numerical);

#undef ETI_DEFINE_ERROR

} // namespace eti
