#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace scenedec {

// Argument/contract violation; carries a human-readable message.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

}  // namespace scenedec
