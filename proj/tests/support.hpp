#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "chunkscope/error.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 gen(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() /
            ("chunkscope-" + tag + "-" + std::to_string(gen()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::filesystem::path fixture_dir() { return CHUNKSCOPE_FIXTURE_DIR; }

}  // namespace testing

#define CHECK_ERROR_KIND(expr, expected_kind)                                  \
  do {                                                                         \
    bool caught_ = false;                                                      \
    try {                                                                      \
      (void)(expr);                                                            \
    } catch (const chunkscope::Error& e_) {                                    \
      caught_ = true;                                                          \
      CHECK_MESSAGE(e_.kind() == (expected_kind), "message: " << e_.what());  \
    }                                                                          \
    CHECK_MESSAGE(caught_, "expected chunkscope::Error from " #expr);          \
  } while (0)
