#include "selab/kv.hpp"

#include <cmath>
#include <sstream>

#include "selab/error.hpp"

namespace selab {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValues KeyValues::parse(const std::string& text, const std::string& what) {
  KeyValues kv;
  kv.what_ = what;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(what + " line " + std::to_string(line_no) + ": expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(what + " line " + std::to_string(line_no) + ": empty key");
    if (kv.has(key)) throw ConfigError(what + " line " + std::to_string(line_no) + ": duplicate key " + key);
    kv.set(key, trim(line.substr(eq + 1)));
  }
  return kv;
}

void KeyValues::set(const std::string& key, const std::string& value) {
  if (!has(key)) order_.push_back(key);
  values_[key] = value;
}

const std::string& KeyValues::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(what_ + ": missing key " + prefix_ + key);
  return it->second;
}

std::string KeyValues::get_string(const std::string& key, const std::string& fallback) const {
  return has(key) ? get(key) : fallback;
}

double KeyValues::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  const auto& s = get(key);
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty() || !std::isfinite(v))
    throw ConfigError(what_ + ": " + prefix_ + key + " = '" + s + "' is not a finite number");
  return v;
}

std::int64_t KeyValues::get_int(const std::string& key, std::int64_t fallback) const {
  if (!has(key)) return fallback;
  const auto& s = get(key);
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw ConfigError(what_ + ": " + prefix_ + key + " = '" + s + "' is not an integer");
  return v;
}

bool KeyValues::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const auto& s = get(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(what_ + ": " + prefix_ + key + " = '" + s + "' is not a boolean");
}

std::vector<std::int64_t> KeyValues::get_int_list(const std::string& key,
                                                  const std::vector<std::int64_t>& fallback) const {
  if (!has(key)) return fallback;
  std::vector<std::int64_t> out;
  std::stringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (item.empty() || used != item.size())
      throw ConfigError(what_ + ": " + prefix_ + key + " = '" + get(key) + "' is not a comma-separated integer list");
    out.push_back(v);
  }
  return out;
}

KeyValues KeyValues::section(const std::string& prefix) const {
  KeyValues out;
  out.what_ = what_;
  out.prefix_ = prefix_ + prefix;
  for (const auto& k : order_)
    if (k.rfind(prefix, 0) == 0) out.set(k.substr(prefix.size()), values_.at(k));
  return out;
}

void KeyValues::reject_unknown(const std::set<std::string>& known, const std::string& prefix) const {
  for (const auto& k : order_)
    if (!known.count(k)) throw ConfigError(what_ + ": unknown key " + (prefix.empty() ? prefix_ : prefix) + k);
}

std::string KeyValues::str() const {
  std::string out;
  for (const auto& k : order_) out += k + " = " + values_.at(k) + "\n";
  return out;
}

std::string join_ints(const std::vector<std::int64_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace selab
