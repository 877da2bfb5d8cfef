#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "matsense/linalg.hpp"

namespace matsense {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Matrix blob: 8-byte magic "MSNS0001", rows and cols as little-endian int64,
// then row-major float64 payload.
// ---------------------------------------------------------------------------

inline constexpr char kMatrixBlobMagic[8] = {'M', 'S', 'N', 'S', '0', '0', '0', '1'};

static_assert(sizeof(double) == 8, "matrix blobs require 8-byte doubles");

inline void write_matrix_blob(const std::string& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_matrix_blob: cannot open " + path);
  out.write(kMatrixBlobMagic, 8);
  const std::int64_t rows = m.rows(), cols = m.cols();
  out.write(reinterpret_cast<const char*>(&rows), 8);
  out.write(reinterpret_cast<const char*>(&cols), 8);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) {
      const double v = m(i, j);
      out.write(reinterpret_cast<const char*>(&v), 8);
    }
  if (!out) throw std::runtime_error("write_matrix_blob: write failed on " + path);
}

inline Matrix read_matrix_blob(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_matrix_blob: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMatrixBlobMagic, 8) != 0)
    throw std::runtime_error("read_matrix_blob: bad magic in " + path);
  std::int64_t rows = 0, cols = 0;
  in.read(reinterpret_cast<char*>(&rows), 8);
  in.read(reinterpret_cast<char*>(&cols), 8);
  if (!in || rows < 0 || cols < 0 || rows > (1 << 20) || cols > (1 << 20))
    throw std::runtime_error("read_matrix_blob: bad header in " + path);
  Matrix m(rows, cols);
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < cols; ++j) {
      double v;
      in.read(reinterpret_cast<char*>(&v), 8);
      m(i, j) = v;
    }
  if (!in) throw std::runtime_error("read_matrix_blob: truncated payload in " + path);
  return m;
}

// ---------------------------------------------------------------------------
// Flat "key = value" config files. '#' starts a comment; blank lines ignored.
// ---------------------------------------------------------------------------

class KeyValueFile {
 public:
  KeyValueFile() = default;

  static KeyValueFile parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_string(ss.str());
  }

  static KeyValueFile parse_string(const std::string& text) {
    KeyValueFile kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config: line " + std::to_string(lineno) + " has no '='");
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty())
        throw ConfigError("config: empty key on line " + std::to_string(lineno));
      kv.values_[key] = value;
    }
    return kv;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    touch(key);
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string require_string(const std::string& key) const {
    touch(key);
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("config: missing required key '" + key + "'");
    return it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    return has(key) ? to_double(key, require_string(key)) : (touch(key), fallback);
  }
  double require_double(const std::string& key) const { return to_double(key, require_string(key)); }

  long long get_int(const std::string& key, long long fallback) const {
    return has(key) ? to_int(key, require_string(key)) : (touch(key), fallback);
  }
  long long require_int(const std::string& key) const { return to_int(key, require_string(key)); }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) { touch(key); return fallback; }
    const std::string v = require_string(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config: key '" + key + "' is not a boolean: " + v);
  }

  std::vector<double> get_double_list(const std::string& key, std::vector<double> fallback) const {
    if (!has(key)) { touch(key); return fallback; }
    std::vector<double> out;
    for (const auto& tok : split_commas(require_string(key))) out.push_back(to_double(key, tok));
    if (out.empty()) throw ConfigError("config: key '" + key + "' is an empty list");
    return out;
  }

  std::vector<long long> get_int_list(const std::string& key, std::vector<long long> fallback) const {
    if (!has(key)) { touch(key); return fallback; }
    std::vector<long long> out;
    for (const auto& tok : split_commas(require_string(key))) out.push_back(to_int(key, tok));
    if (out.empty()) throw ConfigError("config: key '" + key + "' is an empty list");
    return out;
  }

  std::vector<std::string> get_string_list(const std::string& key,
                                           std::vector<std::string> fallback) const {
    if (!has(key)) { touch(key); return fallback; }
    auto out = split_commas(require_string(key));
    if (out.empty()) throw ConfigError("config: key '" + key + "' is an empty list");
    return out;
  }

  /// Keys present in the file that were never queried; used to reject typos.
  std::vector<std::string> unknown_keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (!queried_.count(k)) out.push_back(k);
    return out;
  }

  void reject_unknown_keys() const {
    const auto extra = unknown_keys();
    if (!extra.empty()) {
      std::string msg = "config: unknown key(s):";
      for (const auto& k : extra) msg += " " + k;
      throw ConfigError(msg);
    }
  }

 private:
  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
  }

  static std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, ',')) {
      const std::string t = trim(cur);
      if (!t.empty()) out.push_back(t);
    }
    return out;
  }

  static double to_double(const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      const double x = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError("config: key '" + key + "' is not a number: " + v);
    }
  }

  static long long to_int(const std::string& key, const std::string& v) {
    try {
      std::size_t pos = 0;
      const long long x = std::stoll(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return x;
    } catch (const std::exception&) {
      throw ConfigError("config: key '" + key + "' is not an integer: " + v);
    }
  }

  void touch(const std::string& key) const { queried_.insert(key); }

  std::map<std::string, std::string> values_;
  mutable std::set<std::string> queried_;
};

// ---------------------------------------------------------------------------
// CSV output, RFC 4180 quoting, deterministic float formatting.
// ---------------------------------------------------------------------------

inline std::string csv_format(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string csv_quote(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("CsvWriter: cannot open " + path);
  }

  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << csv_quote(fields[i]);
    }
    out_ << "\r\n";
  }

 private:
  std::ofstream out_;
};

}  // namespace matsense
