#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "uasr/common.hpp"

namespace uasr {

// Binary model files are little-endian with a 8-byte magic + u32 version.
// All development targets are little-endian; fail loudly elsewhere.

inline void write_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(reinterpret_cast<const char*>(p), std::streamsize(n));
}

inline void read_bytes(std::istream& is, void* p, size_t n) {
  is.read(reinterpret_cast<char*>(p), std::streamsize(n));
  if (!is) throw Error("unexpected end of file while reading binary data");
}

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  write_bytes(os, &v, sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v;
  read_bytes(is, &v, sizeof(T));
  return v;
}

template <typename T>
void write_vec(std::ostream& os, const std::vector<T>& v) {
  write_pod<uint64_t>(os, v.size());
  if (!v.empty()) write_bytes(os, v.data(), v.size() * sizeof(T));
}

template <typename T>
std::vector<T> read_vec(std::istream& is) {
  uint64_t n = read_pod<uint64_t>(is);
  std::vector<T> v(n);
  if (n) read_bytes(is, v.data(), n * sizeof(T));
  return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_pod<uint64_t>(os, s.size());
  write_bytes(os, s.data(), s.size());
}

inline std::string read_string(std::istream& is) {
  uint64_t n = read_pod<uint64_t>(is);
  std::string s(n, '\0');
  if (n) read_bytes(is, s.data(), n);
  return s;
}

inline void write_magic(std::ostream& os, const char magic[8], uint32_t version) {
  write_bytes(os, magic, 8);
  write_pod<uint32_t>(os, version);
}

inline uint32_t read_magic(std::istream& is, const char magic[8], const std::string& what) {
  char got[8];
  read_bytes(is, got, 8);
  if (std::memcmp(got, magic, 8) != 0)
    throw Error("bad magic in " + what + " file");
  return read_pod<uint32_t>(is);
}

inline std::ofstream open_out(const std::filesystem::path& p, bool binary = true) {
  std::ofstream os(p, binary ? std::ios::binary : std::ios::out);
  if (!os) throw Error("cannot open for writing: " + p.string());
  return os;
}

inline std::ifstream open_in(const std::filesystem::path& p, bool binary = true) {
  std::ifstream is(p, binary ? std::ios::binary : std::ios::in);
  if (!is) throw Error("cannot open for reading: " + p.string());
  return is;
}

inline std::string read_text_file(const std::filesystem::path& p) {
  auto is = open_in(p);
  std::string s((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return s;
}

inline void write_text_file(const std::filesystem::path& p, const std::string& s) {
  auto os = open_out(p);
  os << s;
}

inline std::vector<std::string> read_lines(const std::filesystem::path& p) {
  auto is = open_in(p, false);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  size_t start = 0;
  for (size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

inline std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    size_t start = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

inline std::string join(const std::vector<std::string>& v, const std::string& sep) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += v[i];
  }
  return out;
}

// FNV-1a, used for stage-cache input hashing.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t fnv1a_str(const std::string& s, uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a(s.data(), s.size(), h);
}

inline uint64_t hash_file(const std::filesystem::path& p) {
  auto is = open_in(p);
  char buf[1 << 16];
  uint64_t h = 0xcbf29ce484222325ULL;
  while (is) {
    is.read(buf, sizeof(buf));
    h = fnv1a(buf, size_t(is.gcount()), h);
  }
  return h;
}

}  // namespace uasr
