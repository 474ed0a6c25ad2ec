#pragma once

#include <stdexcept>
#include <string>

namespace metaseg {

/// Malformed or inconsistent input data (bad files, dimension mismatches,
/// invalid values). The CLI maps this to exit code 2.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Filesystem failures while reading or writing artifacts.
class IoError : public DataError {
 public:
  explicit IoError(const std::string& what) : DataError(what) {}
};

}  // namespace metaseg
