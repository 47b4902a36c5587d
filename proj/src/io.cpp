#include "cgt/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace cgt {

std::string format_double(double v) {
  char buf[40];
  // Shortest representation that parses back exactly.
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    double back;
    auto [ptr, ec] = std::from_chars(buf, buf + std::char_traits<char>::length(buf), back);
    (void)ptr;
    if (ec == std::errc() && back == v) return buf;
  }
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double_strict(const std::string& s, const std::string& context) {
  double v;
  const char* b = s.data();
  const char* e = b + s.size();
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e || b == e)
    throw IngestError(context + ": cannot parse number '" + s + "'");
  return v;
}

std::map<std::string, std::string> read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open file: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    // trim
    std::size_t b = line.find_first_not_of(" \t");
    if (b == std::string::npos) continue;
    std::size_t e = line.find_last_not_of(" \t");
    line = line.substr(b, e - b + 1);
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw IngestError(path + ":" + std::to_string(lineno) + ": expected key=value");
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    while (!val.empty() && (val.front() == ' ' || val.front() == '\t')) val.erase(val.begin());
    if (key.empty()) throw IngestError(path + ":" + std::to_string(lineno) + ": empty key");
    kv[key] = val;
  }
  return kv;
}

double parse_kv_double(const std::map<std::string, std::string>& kv, const std::string& key,
                       const std::string& context) {
  auto it = kv.find(key);
  if (it == kv.end()) throw IngestError(context + ": missing key '" + key + "'");
  return parse_double_strict(it->second, context + ":" + key);
}

struct KeyValueWriter::Impl {
  std::ofstream out;
};

KeyValueWriter::KeyValueWriter(const std::string& path) : impl_(new Impl) {
  impl_->out.open(path);
  if (!impl_->out) {
    delete impl_;
    throw IngestError("cannot write file: " + path);
  }
}

KeyValueWriter::~KeyValueWriter() { delete impl_; }

void KeyValueWriter::put(const std::string& key, const std::string& value) {
  impl_->out << key << "=" << value << "\n";
}
void KeyValueWriter::put(const std::string& key, double value) { put(key, format_double(value)); }
void KeyValueWriter::put(const std::string& key, int value) { put(key, std::to_string(value)); }
void KeyValueWriter::put(const std::string& key, long long value) {
  put(key, std::to_string(value));
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  std::ofstream out(path);
  if (!out) throw IngestError("cannot write file: " + path);
  for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << header[c];
  out << "\n";
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << format_double(row[c]);
    out << "\n";
  }
}

std::vector<std::vector<double>> read_numeric_csv(const std::string& path, bool has_header,
                                                  std::vector<std::string>* header_out) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open file: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  bool header_pending = has_header;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> toks;
    std::string cur;
    for (char c : line) {
      if (c == ',') {
        toks.push_back(cur);
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    toks.push_back(cur);
    if (header_pending) {
      if (header_out) *header_out = toks;
      header_pending = false;
      continue;
    }
    std::vector<double> row;
    row.reserve(toks.size());
    for (std::size_t c = 0; c < toks.size(); ++c)
      row.push_back(
          parse_double_strict(toks[c], path + ":" + std::to_string(lineno) + ": column " +
                                           std::to_string(c + 1)));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::uint64_t fnv1a64(const void* data, std::size_t n) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace cgt
