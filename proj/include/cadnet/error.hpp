#pragma once

#include <stdexcept>
#include <string>

namespace cadnet {

/// Invalid configuration values (shapes, fractions, hyperparameters).
struct config_error : std::runtime_error {
  explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed or inconsistent data (datasets, grids, detections).
struct data_error : std::runtime_error {
  explicit data_error(const std::string& what) : std::runtime_error(what) {}
};

/// API misuse (calling backward before forward, empty inputs, ...).
struct usage_error : std::logic_error {
  explicit usage_error(const std::string& what) : std::logic_error(what) {}
};

/// Non-finite values produced or consumed by numeric code.
struct numeric_error : std::runtime_error {
  explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

/// File and stream failures, unreadable or mis-versioned artifacts.
struct io_error : std::runtime_error {
  explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace cadnet
