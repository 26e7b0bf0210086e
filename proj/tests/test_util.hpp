// Copyright 2026 The coldpack Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef COLDPACK_TESTS_TEST_UTIL_HPP
#define COLDPACK_TESTS_TEST_UTIL_HPP

#include <filesystem>
#include <random>
#include <string>

namespace coldpack::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("coldpack_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace coldpack::testing

#endif  // COLDPACK_TESTS_TEST_UTIL_HPP
