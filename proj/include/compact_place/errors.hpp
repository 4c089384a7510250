#ifndef COMPACT_PLACE_ERRORS_HPP_
#define COMPACT_PLACE_ERRORS_HPP_

#include <stdexcept>
#include <string>
#include <utility>

namespace compact_place {

// Malformed input data, failed invariant on load, bad file contents.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Geometric precondition violated (degenerate polygon, empty input, ...).
class GeometryError : public std::invalid_argument {
 public:
  explicit GeometryError(const std::string& what)
      : std::invalid_argument(what) {}
};

// Invalid configuration value; `field` names the offending entry.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& what)
      : std::invalid_argument(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

}  // namespace compact_place

#endif  // COMPACT_PLACE_ERRORS_HPP_
