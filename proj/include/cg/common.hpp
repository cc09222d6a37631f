#pragma once

#include <stdexcept>
#include <string>

namespace cg {

// Exit codes of the CLI map onto these three failure classes.
class ContractViolation : public std::runtime_error {
public:
    explicit ContractViolation(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

#define CG_CHECK(cond, msg)                              \
    do {                                                 \
        if (!(cond)) throw ::cg::ContractViolation(msg); \
    } while (0)

}  // namespace cg
