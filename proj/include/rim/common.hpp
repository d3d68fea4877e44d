#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <functional>
#include <iostream>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace rim {

using FeatureId = std::uint32_t;
using SampleId = std::int64_t;

// Error categories map one-to-one onto CLI exit codes.
enum class ErrorCategory : int {
  config = 2,
  data = 3,
  numeric = 4,
  oracle_mismatch = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }
  int exit_code() const noexcept { return static_cast<int>(category_); }

 private:
  ErrorCategory category_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorCategory::config, w) {}
};
struct DataError : Error {
  explicit DataError(const std::string& w) : Error(ErrorCategory::data, w) {}
};
struct ParseError : DataError {
  ParseError(std::size_t line, const std::string& w)
      : DataError("line " + std::to_string(line) + ": " + w), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};
struct SchemaError : DataError {
  using DataError::DataError;
};
struct ValueError : DataError {
  using DataError::DataError;
};
struct FormatError : DataError {
  using DataError::DataError;
};
struct CorruptionError : DataError {
  using DataError::DataError;
};
struct StaleCacheError : DataError {
  using DataError::DataError;
};
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error(ErrorCategory::numeric, w) {}
};
struct OracleMismatch : Error {
  explicit OracleMismatch(const std::string& w) : Error(ErrorCategory::oracle_mismatch, w) {}
};

// Warnings go to stderr unless a sink is installed (tests capture them).
using WarningSink = std::function<void(std::string_view)>;

inline WarningSink& warning_sink() {
  static WarningSink sink;
  return sink;
}

inline void warn(std::string_view message) {
  if (auto& sink = warning_sink()) {
    sink(message);
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

class ScopedWarningCapture {
 public:
  ScopedWarningCapture() : previous_(warning_sink()) {
    warning_sink() = [this](std::string_view m) { messages_.emplace_back(m); };
  }
  ~ScopedWarningCapture() { warning_sink() = previous_; }
  ScopedWarningCapture(const ScopedWarningCapture&) = delete;
  ScopedWarningCapture& operator=(const ScopedWarningCapture&) = delete;

  const std::vector<std::string>& messages() const { return messages_; }

 private:
  WarningSink previous_;
  std::vector<std::string> messages_;
};

// 64-bit FNV-1a.
class Fnv1a {
 public:
  void update(std::span<const std::byte> bytes) {
    for (std::byte b : bytes) {
      state_ ^= static_cast<std::uint64_t>(b);
      state_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) { update(std::as_bytes(std::span(s.data(), s.size()))); }
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t fnv1a(std::string_view s) {
  Fnv1a h;
  h.update(s);
  return h.digest();
}

// SplitMix64 finalizer, used to derive independent sub-seeds from the run seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

namespace io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

template <typename T>
  requires std::is_arithmetic_v<T>
void write(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

inline void write_bytes(std::ostream& os, std::string_view bytes) {
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <typename T>
  requires std::is_arithmetic_v<T>
T read(std::istream& is, std::string_view what) {
  T value{};
  if (!is.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw CorruptionError("truncated file while reading " + std::string(what));
  }
  return value;
}

inline std::string read_bytes(std::istream& is, std::size_t n, std::string_view what) {
  std::string out(n, '\0');
  if (n > 0 && !is.read(out.data(), static_cast<std::streamsize>(n))) {
    throw CorruptionError("truncated file while reading " + std::string(what));
  }
  return out;
}

// Every format starts with a 6-byte magic and a version byte.
inline void write_header(std::ostream& os, std::string_view magic, std::uint8_t version) {
  write_bytes(os, magic);
  write<std::uint8_t>(os, version);
}

inline void expect_header(std::istream& is, std::string_view magic, std::uint8_t version) {
  std::string got(magic.size(), '\0');
  if (!is.read(got.data(), static_cast<std::streamsize>(got.size())) || got != magic) {
    throw FormatError("bad magic: expected " + std::string(magic));
  }
  std::uint8_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 1)) {
    throw CorruptionError("truncated file while reading version");
  }
  if (v != version) {
    throw FormatError(std::string(magic) + ": unsupported version " + std::to_string(v) +
                      " (expected " + std::to_string(version) + ")");
  }
}

inline void expect_eof(std::istream& is, std::string_view what) {
  if (is.peek() != std::char_traits<char>::eof()) {
    throw CorruptionError(std::string(what) + ": trailing bytes after payload");
  }
}

}  // namespace io
}  // namespace rim
