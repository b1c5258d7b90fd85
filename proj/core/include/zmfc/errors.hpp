#pragma once

#include <stdexcept>
#include <string>

namespace zmfc {

// Error with a stable machine-readable code ("NegativeRate", "Overflow", ...)
// next to the human-readable message. CLI commands print the code so scripts
// can match on it.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(code + ": " + message), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

} // namespace zmfc
