#include "eformer/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace eformer::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValues parse(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']' || t.size() < 3) throw ConfigError("line " + std::to_string(lineno) + ": bad section " + t);
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    kv[section.empty() ? key : section + "." + key] = trim(t.substr(eq + 1));
  }
  return kv;
}

KeyValues load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string format(const KeyValues& kv) {
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;
  for (const auto& [key, value] : kv) {
    const auto dot = key.find('.');
    if (dot == std::string::npos) {
      sections[""].emplace_back(key, value);
    } else {
      sections[key.substr(0, dot)].emplace_back(key.substr(dot + 1), value);
    }
  }
  std::ostringstream os;
  bool first = true;
  for (const auto& [name, items] : sections) {
    if (!name.empty()) {
      if (!first) os << "\n";
      os << "[" << name << "]\n";
    }
    for (const auto& [k, v] : items) os << k << " = " << v << "\n";
    first = false;
  }
  return os.str();
}

KeyValues merge(const std::vector<KeyValues>& layers) {
  KeyValues out;
  for (const auto& layer : layers) {
    for (const auto& [k, v] : layer) out[k] = v;
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("invalid number for " + key + ": '" + v + "'");
  }
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("invalid non-negative integer for " + key + ": '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("invalid boolean for " + key + ": '" + v + "'");
}

KeyValues DataConfig::to_kv() const {
  return {{"data.manifest", manifest},
          {"data.synthetic", std::to_string(synthetic)},
          {"data.eval_synthetic", std::to_string(eval_synthetic)},
          {"data.synth_seed", std::to_string(synth_seed)}};
}

void DataConfig::apply(const KeyValues& kv) {
  for (const auto& [key, v] : kv) {
    if (key.rfind("data.", 0) != 0) continue;
    if (key == "data.manifest") {
      manifest = v;
    } else if (key == "data.synthetic") {
      synthetic = parse_size(key, v);
    } else if (key == "data.eval_synthetic") {
      eval_synthetic = parse_size(key, v);
    } else if (key == "data.synth_seed") {
      synth_seed = parse_size(key, v);
    } else {
      throw ConfigError("unknown config key: " + key);
    }
  }
}

std::vector<std::string> DataConfig::keys() {
  return {"data.manifest", "data.synthetic", "data.eval_synthetic", "data.synth_seed"};
}

std::vector<std::string> known_keys() {
  std::vector<std::string> keys = ModelConfig::keys();
  for (const auto& k : train::TrainConfig::keys()) keys.push_back(k);
  for (const auto& k : DataConfig::keys()) keys.push_back(k);
  return keys;
}

RunConfig RunConfig::resolve(const std::vector<KeyValues>& layers) {
  const KeyValues merged = merge(layers);
  const std::vector<std::string> known = known_keys();
  for (const auto& [key, v] : merged) {
    if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError("unknown config key: " + key);
  }
  RunConfig rc;
  try {
    rc.model.apply(merged);
    rc.model.validate();
    rc.train.apply(merged);
    rc.train.validate();
    rc.data.apply(merged);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return rc;
}

KeyValues RunConfig::to_kv() const {
  return merge({model.to_kv(), train.to_kv(), data.to_kv()});
}

}  // namespace eformer::config
