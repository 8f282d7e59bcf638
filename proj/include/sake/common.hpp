#pragma once

#include <cctype>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>

namespace sake {

// Failure categories that cross module boundaries. The CLI maps these onto
// process exit codes.
enum class ErrorKind {
  Config,      // bad configuration or arguments
  Upstream,    // policy endpoint, search backend, summarizer
  Validation,  // malformed input data
  Internal,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string code, const std::string& what)
      : std::runtime_error(code + ": " + what), kind_(kind), code_(std::move(code)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& code() const noexcept { return code_; }

 private:
  ErrorKind kind_;
  std::string code_;
};

inline Error config_error(const std::string& code, const std::string& what) {
  return Error(ErrorKind::Config, code, what);
}
inline Error upstream_error(const std::string& code, const std::string& what) {
  return Error(ErrorKind::Upstream, code, what);
}
inline Error validation_error(const std::string& code, const std::string& what) {
  return Error(ErrorKind::Validation, code, what);
}

template <class E>
struct Unexpected {
  E error;
};

template <class E>
Unexpected(E) -> Unexpected<E>;

// Minimal value-or-error holder until the toolchain moves to C++23.
template <class T, class E>
class Expected {
 public:
  Expected(T value) : storage_(std::in_place_index<0>, std::move(value)) {}
  Expected(Unexpected<E> err) : storage_(std::in_place_index<1>, std::move(err.error)) {}

  bool has_value() const noexcept { return storage_.index() == 0; }
  explicit operator bool() const noexcept { return has_value(); }

  T& value() & {
    if (!has_value()) throw std::logic_error("Expected::value() on error");
    return std::get<0>(storage_);
  }
  const T& value() const& {
    if (!has_value()) throw std::logic_error("Expected::value() on error");
    return std::get<0>(storage_);
  }
  T&& value() && {
    if (!has_value()) throw std::logic_error("Expected::value() on error");
    return std::get<0>(std::move(storage_));
  }
  const E& error() const {
    if (has_value()) throw std::logic_error("Expected::error() on value");
    return std::get<1>(storage_);
  }

  T& operator*() & { return value(); }
  const T& operator*() const& { return value(); }
  T* operator->() { return &value(); }
  const T* operator->() const { return &value(); }

 private:
  std::variant<T, E> storage_;
};

// String helpers shared by matching and caching code.

inline bool is_space(char c) noexcept {
  return std::isspace(static_cast<unsigned char>(c)) != 0;
}

inline std::string_view trim(std::string_view s) noexcept {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return s.substr(b, e - b);
}

inline std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline bool contains_icase(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) return true;
  return to_lower_ascii(haystack).find(to_lower_ascii(needle)) != std::string::npos;
}

// splitmix64; used to derive independent per-member seeds from one run seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) noexcept {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t hash_string(std::string_view s) noexcept {
  // FNV-1a, stable across platforms (std::hash is not).
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace sake
