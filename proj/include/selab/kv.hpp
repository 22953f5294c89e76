#pragma once

// Flat "section.key = value" text documents. Order of first appearance is
// kept so that materialized configs print deterministically.

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace selab {

class KeyValues {
 public:
  // Lines are `key = value`; '#' starts a comment; blank lines are ignored.
  // Duplicate keys are an error. `what` prefixes error messages.
  static KeyValues parse(const std::string& text, const std::string& what = "config");

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::int64_t> get_int_list(const std::string& key, const std::vector<std::int64_t>& fallback) const;

  // Keys starting with `prefix`, with the prefix removed.
  KeyValues section(const std::string& prefix) const;
  // Throws ConfigError naming the first key not in `known`.
  void reject_unknown(const std::set<std::string>& known, const std::string& prefix = "") const;

  const std::vector<std::string>& keys() const { return order_; }
  std::string str() const;

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
  std::string what_ = "config";
  // Section prefix stripped by section(), restored in error messages.
  std::string prefix_;
};

std::string join_ints(const std::vector<std::int64_t>& v);
std::string format_double(double v);

}  // namespace selab
