#pragma once

#include <stdexcept>
#include <string>

namespace hardi {

/// Bad input: wrong sizes, out-of-range parameters, malformed files.
class ValidationError : public std::invalid_argument
{
  public:
    using std::invalid_argument::invalid_argument;
};

/// Tensor shape arithmetic that produces an empty or inconsistent result.
class ShapeError : public ValidationError
{
  public:
    using ValidationError::ValidationError;
};

/// API used in the wrong order (e.g. backward on a graph that was never built).
class UsageError : public std::logic_error
{
  public:
    using std::logic_error::logic_error;
};

/// NaN/Inf produced during a computation.
class NumericError : public std::runtime_error
{
  public:
    using std::runtime_error::runtime_error;
};

/// Reader failure with file/line/column context.
class ParseError : public ValidationError
{
  public:
    ParseError(std::string const& file, std::size_t line, std::size_t column,
               std::string const& what)
        : ValidationError(file + ":" + std::to_string(line) + ":"
                          + std::to_string(column) + ": " + what)
        , file_(file)
        , line_(line)
        , column_(column)
    {
    }

    std::string const& file() const { return file_; }
    std::size_t line() const { return line_; }
    std::size_t column() const { return column_; }

  private:
    std::string file_;
    std::size_t line_;
    std::size_t column_;
};

namespace detail {
inline void require(bool cond, std::string const& msg)
{
    if (!cond)
        throw ValidationError(msg);
}
}  // namespace detail

}  // namespace hardi
