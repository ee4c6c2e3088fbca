#pragma once

#include <stdexcept>
#include <string>

namespace stids {

// Bad configuration / bad input files. The CLI maps this to a distinct exit
// code from runtime failures.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace stids
