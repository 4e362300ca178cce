#pragma once

#include <stdexcept>
#include <string>

namespace stormdispatch {

enum class ErrorCode {
    Parameter = 1,   // argument outside its domain
    Parse = 2,       // malformed input file
    Validation = 3,  // well-formed input that breaks a model invariant
    Numerical = 4,   // factorization or non-finite arithmetic
    Config = 5,      // inconsistent configuration
    Contract = 6,    // caller broke a precondition (infeasible action, shape mismatch)
    Io = 7,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
    if (!cond) fail(code, what);
}

}  // namespace stormdispatch
