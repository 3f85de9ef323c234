#pragma once

#include <stdexcept>
#include <string>

namespace resfit {

// Invalid inputs: violated preconditions, malformed or inconsistent data
// files, out-of-domain arguments. Maps to CLI exit code 3.
class data_error : public std::runtime_error {
public:
    explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

// An algorithm could not produce a trustworthy result: refinement or
// optimization failed to converge, a normal matrix is rank-deficient, an
// unwrapped phase is pathological. Maps to CLI exit code 4.
class numerical_error : public std::runtime_error {
public:
    explicit numerical_error(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace resfit
