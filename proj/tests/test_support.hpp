#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include "doctest.h"
#include "interopt/common.hpp"

namespace testsup {

// empty scratch directory under the system temp root, wiped on entry
inline std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "interopt-tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline interopt::ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const interopt::Error& e) {
    return e.kind();
  } catch (const std::exception& e) {
    FAIL("expected interopt::Error, got: ", e.what());
  }
  FAIL("expected an error, none thrown");
  return interopt::ErrorKind::io;  // unreachable
}

}  // namespace testsup
