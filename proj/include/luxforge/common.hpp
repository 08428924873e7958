#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace luxforge {

// Base class so callers can catch anything thrown by this library.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor rank/extent mismatches. Messages name the offending axes.
struct shape_error : error {
  using error::error;
};

// Out-of-domain arguments (bad labels, bad config values, ...).
struct value_error : error {
  using error::error;
};

// File format / filesystem problems.
struct io_error : error {
  using error::error;
};

// Unrecoverable problems inside a training run (divergence, bad resume).
struct training_error : error {
  using error::error;
};

template <class... Args>
std::string cat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

}  // namespace luxforge
