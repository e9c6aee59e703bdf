#pragma once

#include <stdexcept>

namespace branchseg {

/// Non-finite values reached a forward pass or a training loss.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Missing, malformed, or inconsistent input artifacts (files, manifests).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace branchseg
