#ifndef PLUMESHINE_ERROR_HPP
#define PLUMESHINE_ERROR_HPP

#include <stdexcept>
#include <string>

namespace plumeshine {

/// Base of every error the library throws. `kind()` is a stable, single-token
/// class name used by the CLI for machine-parseable failure lines.
class Error : public std::runtime_error {
  public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

  private:
    std::string kind_;
};

struct ParseError : Error {
    ParseError(const std::string& what, std::size_t line)
        : Error("ParseError", "line " + std::to_string(line) + ": " + what), line(line) {}
    explicit ParseError(const std::string& what) : Error("ParseError", what), line(0) {}
    std::size_t line;
};

struct ValidationError : Error {
    explicit ValidationError(const std::string& what) : Error("ValidationError", what) {}
};

struct DomainError : Error {
    explicit DomainError(const std::string& what) : Error("DomainError", what) {}
};

struct QuadratureError : Error {
    QuadratureError(const std::string& what, double value, double error_estimate)
        : Error("QuadratureError", what), value(value), error_estimate(error_estimate) {}
    double value;
    double error_estimate;
};

struct ModelFormatError : Error {
    explicit ModelFormatError(const std::string& what) : Error("ModelFormatError", what) {}
};

struct IoError : Error {
    explicit IoError(const std::string& what) : Error("IoError", what) {}
};

}  // namespace plumeshine

#endif
