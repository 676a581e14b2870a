#pragma once

#include <stdexcept>
#include <string>

namespace nasdet {

/// Base class of every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error("configuration error: " + what) {}
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& what) : Error("shape error: " + what) {}
};

class GenotypeError : public Error {
public:
    explicit GenotypeError(const std::string& what) : Error("genotype error: " + what) {}
};

class ScheduleError : public Error {
public:
    explicit ScheduleError(const std::string& what) : Error("schedule error: " + what) {}
};

class StateError : public Error {
public:
    explicit StateError(const std::string& what) : Error("state error: " + what) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error("data error: " + what) {}
};

class AccountingError : public Error {
public:
    explicit AccountingError(const std::string& what) : Error("accounting error: " + what) {}
};

class ParseError : public Error {
public:
    ParseError(int line, const std::string& what)
        : Error("parse error at line " + std::to_string(line) + ": " + what), line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

class IoError : public Error {
public:
    explicit IoError(const std::string& what) : Error("I/O error: " + what) {}
};

/// Raised when a training loss turns non-finite.
class DivergenceError : public Error {
public:
    explicit DivergenceError(const std::string& what) : Error("divergence: " + what) {}
};

}  // namespace nasdet
