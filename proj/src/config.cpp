#include "bisplat/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>

extern char** environ;

namespace bisplat {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

}  // namespace

RunConfig::RunConfig() {
  auto def = [&](const char* key, const char* value, const char* desc) {
    entries_[key] = Entry{value, desc, ConfigSource::fallback};
  };
  def("workers", "0", "worker threads (0 = all cores)");
  def("model.profile", "base", "model profile: base or plus");
  def("model.np", "0", "primitive count override (0 = profile default)");
  def("model.nc", "0", "cluster count override (0 = profile default)");
  def("model.dim", "0", "BST feature width override (0 = profile default)");
  def("model.smin", "0.5", "minimum initial scale, degrees");
  def("model.smax", "8.0", "maximum initial scale, degrees");
  def("model.wcoarse", "0.3", "mixing weight for coarse primitives");
  def("model.wfine", "1.0", "mixing weight for fine primitives");
  def("train.steps", "30000", "optimization steps");
  def("train.seed", "1", "training seed");
  def("train.evalevery", "0", "evaluate on the test split every N steps (0 = off)");
  def("train.logevery", "50", "log a training line every N steps");
  def("train.bypass", "", "comma list of branches to bypass: bst,dynamic,delta");
  def("train.lr.net", "0.001", "learning rate, network weights");
  def("train.lr.pos", "0.002", "learning rate, primitive positions");
  def("train.lr.shape", "0.005", "learning rate, scales and rotations");
  def("train.lr.opacity", "0.05", "learning rate, opacity logits");
  def("render.cull", "1", "cull splats outside the 3-sigma box");
  def("render.tile", "16", "rasterizer tile size in pixels");
  def("loss.l1", "0.7", "L1 weight in the composite loss");
  def("loss.ssim", "0.3", "SSIM weight in the composite loss");
  def("ssim.window", "11", "SSIM window size (odd)");
  def("ssim.sigma", "1.5", "SSIM window Gaussian sigma");
}

const RunConfig::Entry& RunConfig::entry(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) fail(strf("config: unknown key '%s'", key.c_str()));
  return it->second;
}

void RunConfig::set(const std::string& key, const std::string& value, ConfigSource src) {
  const auto it = entries_.find(key);
  if (it == entries_.end()) fail(strf("config: unknown key '%s'", key.c_str()));
  if (src >= it->second.source) {
    it->second.value = value;
    it->second.source = src;
  }
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(strf("config: cannot open '%s'", path.c_str()));
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(strf("config: '%s' line %d: expected key=value", path.c_str(), lineno));
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)), ConfigSource::file);
  }
}

std::string RunConfig::env_name(const std::string& key) {
  std::string s = "BISPLAT_";
  for (char c : key) s += c == '.' ? '_' : char(std::toupper(c));
  return s;
}

void RunConfig::load_env() {
  // known keys first, then reject unknown BISPLAT_ variables by name
  std::map<std::string, std::string> known;
  for (const auto& [k, e] : entries_) known[env_name(k)] = k;
  for (char** p = environ; *p; ++p) {
    const std::string kv(*p);
    if (kv.rfind("BISPLAT_", 0) != 0) continue;
    const auto eq = kv.find('=');
    const std::string name = kv.substr(0, eq);
    const auto it = known.find(name);
    if (it == known.end())
      fail(strf("config: unknown environment variable '%s'", name.c_str()));
    set(it->second, eq == std::string::npos ? "" : kv.substr(eq + 1), ConfigSource::env);
  }
}

void RunConfig::set_flag(const std::string& key, const std::string& value) {
  set(key, value, ConfigSource::flag);
}

bool RunConfig::is_set(const std::string& key) const {
  return entry(key).source != ConfigSource::fallback;
}

ConfigSource RunConfig::source(const std::string& key) const { return entry(key).source; }

std::string RunConfig::get_string(const std::string& key) const { return entry(key).value; }

int64_t RunConfig::get_int(const std::string& key) const {
  const auto& v = entry(key).value;
  try {
    size_t used = 0;
    const int64_t x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    fail(strf("config: key '%s' has non-integer value '%s'", key.c_str(), v.c_str()));
  }
}

double RunConfig::get_double(const std::string& key) const {
  const auto& v = entry(key).value;
  try {
    size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    fail(strf("config: key '%s' has non-numeric value '%s'", key.c_str(), v.c_str()));
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const auto& v = entry(key).value;
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  fail(strf("config: key '%s' has non-boolean value '%s'", key.c_str(), v.c_str()));
}

std::vector<std::string> RunConfig::keys() const {
  std::vector<std::string> out;
  for (const auto& [k, e] : entries_) out.push_back(k);
  return out;
}

std::string RunConfig::describe(const std::string& key) const {
  const Entry& e = entry(key);
  return strf("%s=%s  # %s", key.c_str(), e.value.c_str(), e.description.c_str());
}

}  // namespace bisplat
