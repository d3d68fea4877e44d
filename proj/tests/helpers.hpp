#pragma once

#include <filesystem>
#include <random>
#include <sstream>
#include <string>

#include "rim/dataset.hpp"

namespace rim::test {

inline Table parse_csv(const std::string& text, std::optional<Schema> schema = std::nullopt) {
  std::istringstream in(text);
  return read_table(in, std::move(schema));
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("rim_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace rim::test
