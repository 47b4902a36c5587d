#pragma once

#include "cgt/common.hpp"

#include <map>
#include <string>
#include <vector>

namespace cgt {

/// Shortest decimal form that round-trips a double (up to 17 significant digits).
std::string format_double(double v);

double parse_double_strict(const std::string& s, const std::string& context);

/// Plain `key=value` files; '#' starts a comment, blank lines ignored.
std::map<std::string, std::string> read_key_values(const std::string& path);

double parse_kv_double(const std::map<std::string, std::string>& kv, const std::string& key,
                       const std::string& context);

class KeyValueWriter {
 public:
  explicit KeyValueWriter(const std::string& path);
  ~KeyValueWriter();
  void put(const std::string& key, const std::string& value);
  void put(const std::string& key, double value);
  void put(const std::string& key, int value);
  void put(const std::string& key, long long value);

 private:
  struct Impl;
  Impl* impl_;
};

/// Rows of numeric CSV with a fixed header, written with round-trip precision.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);

std::vector<std::vector<double>> read_numeric_csv(const std::string& path, bool has_header,
                                                  std::vector<std::string>* header_out = nullptr);

std::uint64_t fnv1a64(const void* data, std::size_t n);

}  // namespace cgt
