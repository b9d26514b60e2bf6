#pragma once

#include <stdexcept>
#include <string>

namespace mstex {

// All recoverable failures (bad files, shape mismatches, invalid configs)
// surface as Error. The CLI maps them to exit codes.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

}  // namespace mstex
