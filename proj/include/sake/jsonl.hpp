#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sake/common.hpp"

namespace sake::jsonl {

// Reads one JSON document per non-blank line.
inline std::vector<nlohmann::json> read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw validation_error("MissingFile", "cannot open " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw validation_error("BadJsonl", path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// Canonical single-line encoding. Invalid UTF-8 is replaced rather than
// thrown on, so arbitrary model output can always be persisted.
template <class Json>
std::string dump_line(const Json& j) {
  return j.dump(-1, ' ', false, Json::error_handler_t::replace);
}

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : path_(path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw validation_error("UnwritableFile", "cannot write " + path.string());
  }

  template <class Json>
  void write(const Json& j) {
    out_ << dump_line(j) << '\n';
  }

  void flush() { out_.flush(); }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw validation_error("MissingFile", "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw validation_error("UnwritableFile", "cannot write " + path.string());
  out << content;
}

}  // namespace sake::jsonl

namespace sake::base64 {

inline constexpr std::string_view kAlphabet =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string encode(std::string_view bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const auto n = (static_cast<unsigned char>(bytes[i]) << 16) | (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                   static_cast<unsigned char>(bytes[i + 2]);
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += kAlphabet[(n >> 6) & 63];
    out += kAlphabet[n & 63];
  }
  if (i + 1 == bytes.size()) {
    const auto n = static_cast<unsigned char>(bytes[i]) << 16;
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += "==";
  } else if (i + 2 == bytes.size()) {
    const auto n = (static_cast<unsigned char>(bytes[i]) << 16) | (static_cast<unsigned char>(bytes[i + 1]) << 8);
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += kAlphabet[(n >> 6) & 63];
    out += '=';
  }
  return out;
}

inline std::string decode(std::string_view text) {
  if (text.size() % 4 != 0) throw validation_error("BadBase64", "length is not a multiple of 4");
  auto value = [](char c) -> int {
    const auto pos = kAlphabet.find(c);
    if (pos == std::string_view::npos) throw validation_error("BadBase64", "invalid character");
    return static_cast<int>(pos);
  };
  std::string out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    const int a = value(text[i]);
    const int b = value(text[i + 1]);
    const bool pad2 = text[i + 2] == '=';
    const bool pad3 = text[i + 3] == '=';
    if ((pad2 && !pad3) || ((pad2 || pad3) && i + 4 != text.size()))
      throw validation_error("BadBase64", "misplaced padding");
    const int c = pad2 ? 0 : value(text[i + 2]);
    const int d = pad3 ? 0 : value(text[i + 3]);
    const int n = (a << 18) | (b << 12) | (c << 6) | d;
    out += static_cast<char>((n >> 16) & 0xff);
    if (!pad2) out += static_cast<char>((n >> 8) & 0xff);
    if (!pad3) out += static_cast<char>(n & 0xff);
  }
  return out;
}

}  // namespace sake::base64
