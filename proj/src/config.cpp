#include "portdec/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "portdec/errors.hpp"

namespace portdec {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string fmt_list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + fmt(v[i]);
  return out;
}

struct Entry {
  std::string value;
  std::size_t line = 0;
};

class Reader {
 public:
  explicit Reader(std::map<std::string, Entry> entries) : entries_(std::move(entries)) {}

  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  std::string text(const std::string& key, const std::string& fallback) {
    used_.insert(key);
    return has(key) ? entries_.at(key).value : fallback;
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    used_.insert(key);
    return parse_number(key, entries_.at(key).value);
  }

  std::size_t count(const std::string& key, std::size_t fallback) {
    if (!has(key)) return fallback;
    used_.insert(key);
    const std::string& v = entries_.at(key).value;
    std::uint64_t out = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) fail(key, "expected a non-negative integer, got '" + v + "'");
    return static_cast<std::size_t>(out);
  }

  std::uint64_t u64(const std::string& key, std::uint64_t fallback) {
    return has(key) ? static_cast<std::uint64_t>(count(key, 0)) : fallback;
  }

  std::vector<double> list(const std::string& key, std::vector<double> fallback) {
    if (!has(key)) return fallback;
    used_.insert(key);
    std::vector<double> out;
    std::stringstream ss(entries_.at(key).value);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_number(key, trim(item)));
    if (out.empty()) fail(key, "expected a comma-separated list of numbers");
    return out;
  }

  /// Keys given in the file but not allowed by the chosen variants.
  void forbid(const std::string& key, const std::string& why) {
    if (has(key)) fail(key, why);
  }

  void reject_unknown() const {
    for (const auto& [k, e] : entries_) {
      if (!used_.count(k)) {
        throw ConfigError("line " + std::to_string(e.line) + ": unknown key '" + k + "'");
      }
    }
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    const std::string where = has(key) ? "line " + std::to_string(entries_.at(key).line) + ": " : "";
    throw ConfigError(where + key + ": " + what);
  }

 private:
  double parse_number(const std::string& key, const std::string& v) const {
    double out = 0.0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(out)) {
      fail(key, "expected a number, got '" + v + "'");
    }
    return out;
  }

  std::map<std::string, Entry> entries_;
  std::set<std::string> used_;
};

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      "name",
      "model.variant", "model.theta", "model.alpha", "model.beta", "model.v", "model.u0", "model.driver",
      "market.sigma", "market.s0",
      "utility.name", "utility.p", "utility.a",
      "investor.x",
      "grid.T", "grid.n_steps",
      "mc.n_paths", "mc.seed",
      "hedging.degree", "hedging.ridge", "hedging.stride", "hedging.truncation", "hedging.basis",
      "outputs.directory", "outputs.formats",
      "verify.eu1_paths", "verify.eu1_levels", "verify.budget_paths", "verify.phi1_paths",
      "verify.nested_nodes", "verify.nested_states", "verify.nested_inner", "verify.truncation_ladder"};
  return keys;
}

TruncationRequest parse_truncation(Reader& r) {
  const std::string v = r.text("hedging.truncation", "off");
  if (v == "off") return {};
  TruncationRequest t;
  std::string digits = v;
  if (!digits.empty() && digits.back() == 'x') {
    t.mode = TruncationRequest::Mode::multiple;
    digits.pop_back();
  } else {
    t.mode = TruncationRequest::Mode::absolute;
  }
  double k = 0.0;
  const auto res = std::from_chars(digits.data(), digits.data() + digits.size(), k);
  if (res.ec != std::errc() || res.ptr != digits.data() + digits.size() || !(k > 0.0)) {
    r.fail("hedging.truncation", "expected 'off', a positive level or a multiple like '8x', got '" + v + "'");
  }
  t.value = k;
  return t;
}

}  // namespace

std::size_t RunConfig::n() const { return s0.size(); }

MarketModel RunConfig::market() const {
  const std::size_t dim = n();
  Eigen::MatrixXd s(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = 0; j < dim; ++j) s(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = sigma[i * dim + j];
  }
  RiskModel risk = risk_kind == RiskKind::constant ? RiskModel(ConstantRisk{theta}) : RiskModel(ou);
  return MarketModel(s, s0, risk);
}

UtilityModel RunConfig::utility() const {
  switch (utility_kind) {
    case UtilityKind::log: return UtilityModel::log();
    case UtilityKind::power: return UtilityModel::power(p);
    case UtilityKind::exponential: return UtilityModel::exponential(a);
  }
  return UtilityModel::log();
}

TimeGrid RunConfig::grid() const { return make_grid(horizon, n_steps); }

HedgeSpec RunConfig::hedge_spec() const { return HedgeSpec{regression, truncation}; }

std::vector<std::pair<std::string, std::string>> RunConfig::echo() const {
  std::vector<std::pair<std::string, std::string>> e;
  e.emplace_back("name", name);
  if (risk_kind == RiskKind::constant) {
    e.emplace_back("model.variant", "constant");
    e.emplace_back("model.theta", fmt_list(theta));
  } else {
    e.emplace_back("model.variant", "ou");
    e.emplace_back("model.alpha", fmt(ou.alpha));
    e.emplace_back("model.beta", fmt(ou.beta));
    e.emplace_back("model.v", fmt(ou.v));
    e.emplace_back("model.u0", fmt(ou.u0));
    e.emplace_back("model.driver", ou.driver == OuDriver::P ? "P" : "Q");
  }
  e.emplace_back("market.sigma", fmt_list(sigma));
  e.emplace_back("market.s0", fmt_list(s0));
  switch (utility_kind) {
    case UtilityKind::log: e.emplace_back("utility.name", "log"); break;
    case UtilityKind::power:
      e.emplace_back("utility.name", "power");
      e.emplace_back("utility.p", fmt(p));
      break;
    case UtilityKind::exponential:
      e.emplace_back("utility.name", "exponential");
      e.emplace_back("utility.a", fmt(a));
      break;
  }
  e.emplace_back("investor.x", fmt(x));
  e.emplace_back("grid.T", fmt(horizon));
  e.emplace_back("grid.n_steps", std::to_string(n_steps));
  e.emplace_back("mc.n_paths", std::to_string(n_paths));
  e.emplace_back("mc.seed", std::to_string(seed));
  e.emplace_back("hedging.degree", std::to_string(regression.degree));
  e.emplace_back("hedging.ridge", fmt(regression.ridge));
  e.emplace_back("hedging.stride", std::to_string(regression.stride));
  e.emplace_back("hedging.truncation", truncation.describe());
  e.emplace_back("hedging.basis", to_string(regression.basis));
  e.emplace_back("outputs.directory", out_dir);
  std::string formats;
  if (write_csv) formats += "csv";
  if (write_json) formats += formats.empty() ? "json" : ",json";
  e.emplace_back("outputs.formats", formats);
  e.emplace_back("verify.eu1_paths", std::to_string(verify.eu1_paths));
  e.emplace_back("verify.eu1_levels", std::to_string(verify.eu1_levels));
  e.emplace_back("verify.budget_paths", std::to_string(verify.budget_paths));
  e.emplace_back("verify.phi1_paths", std::to_string(verify.phi1_paths));
  e.emplace_back("verify.nested_nodes", std::to_string(verify.nested_nodes));
  e.emplace_back("verify.nested_states", std::to_string(verify.nested_states));
  e.emplace_back("verify.nested_inner", std::to_string(verify.nested_inner));
  e.emplace_back("verify.truncation_ladder", fmt_list(verify.truncation_ladder));
  return e;
}

void validate_config(const RunConfig& c) {
  const std::size_t dim = c.s0.size();
  if (dim == 0) throw ConfigError("market.s0: at least one asset is required");
  if (c.sigma.size() != dim * dim) {
    throw ConfigError("market.sigma: expected " + std::to_string(dim * dim) + " entries (n x n, row-major), got " +
                      std::to_string(c.sigma.size()));
  }
  for (double s : c.s0) {
    if (!(s > 0.0)) throw ConfigError("market.s0: prices must be positive");
  }
  if (c.risk_kind == RiskKind::constant && c.theta.size() != dim) {
    throw ConfigError("model.theta: expected " + std::to_string(dim) + " entries, got " + std::to_string(c.theta.size()));
  }
  if (c.risk_kind == RiskKind::ou) {
    if (dim != 1) throw ConfigError("model.variant: ou is implemented for one asset only");
    if (!(c.ou.beta > 0.0)) throw ConfigError("model.beta: beta must satisfy beta>0");
  }
  if (!(c.x > 0.0)) throw ConfigError("investor.x: initial wealth must be positive");
  if (!(c.horizon > 0.0)) throw ConfigError("grid.T: horizon must be positive");
  if (c.n_steps < 2) throw ConfigError("grid.n_steps: at least 2 steps are required");
  if (c.n_paths < 2) throw ConfigError("mc.n_paths: at least 2 paths are required");
  if (c.regression.degree < 0 || c.regression.degree > 8) throw ConfigError("hedging.degree: must lie in [0, 8]");
  if (!(c.regression.ridge >= 0.0)) throw ConfigError("hedging.ridge: must be non-negative");
  if (c.regression.stride < 1) throw ConfigError("hedging.stride: must be at least 1");
  if (c.verify.eu1_levels < 2) throw ConfigError("verify.eu1_levels: at least 2 levels are required");
  if (c.n_steps % (std::size_t{1} << (c.verify.eu1_levels - 1)) != 0) {
    throw ConfigError("verify.eu1_levels: grid.n_steps must be divisible by 2^(levels-1)");
  }
  if (c.verify.eu1_paths < 2 || c.verify.budget_paths < 2 || c.verify.phi1_paths < 2 || c.verify.nested_inner < 2) {
    throw ConfigError("verify: path budgets must be at least 2");
  }
  if (c.verify.truncation_ladder.size() < 2) throw ConfigError("verify.truncation_ladder: need at least two levels");
  for (double k : c.verify.truncation_ladder) {
    if (!(k > 0.0)) throw ConfigError("verify.truncation_ladder: levels must be positive");
  }
  if (c.utility_kind == UtilityKind::power && (!(c.p < 1.0) || c.p == 0.0)) {
    throw ConfigError("utility.p: p must satisfy p<1, p≠0");
  }
  if (c.utility_kind == UtilityKind::exponential && !(c.a > 0.0)) {
    throw ConfigError("utility.a: a must satisfy a>0");
  }
  try {
    (void)c.market();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("market.sigma: ") + e.what());
  }
}

RunConfig parse_config(const std::string& text) {
  std::map<std::string, Entry> entries;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value', got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": missing key");
    if (!known_keys().count(key)) {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    if (value.empty()) throw ConfigError("line " + std::to_string(line_no) + ": " + key + ": missing value");
    if (entries.count(key)) {
      throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "' (first on line " +
                        std::to_string(entries.at(key).line) + ")");
    }
    entries[key] = Entry{value, line_no};
  }

  Reader r(std::move(entries));
  RunConfig c;
  c.name = r.text("name", c.name);

  const std::string variant = r.text("model.variant", "constant");
  if (variant == "constant") {
    c.risk_kind = RiskKind::constant;
    c.theta = r.list("model.theta", c.theta);
    for (const char* k : {"model.alpha", "model.beta", "model.v", "model.u0", "model.driver"}) {
      r.forbid(k, "only valid with model.variant = ou");
    }
  } else if (variant == "ou") {
    c.risk_kind = RiskKind::ou;
    r.forbid("model.theta", "only valid with model.variant = constant");
    for (const char* k : {"model.alpha", "model.beta", "model.v", "model.u0"}) {
      if (!r.has(k)) r.fail(k, "required with model.variant = ou");
    }
    c.ou.alpha = r.number("model.alpha", 0.0);
    c.ou.beta = r.number("model.beta", 1.0);
    c.ou.v = r.number("model.v", 0.0);
    c.ou.u0 = r.number("model.u0", 0.0);
    const std::string driver = r.text("model.driver", "P");
    if (driver == "P") c.ou.driver = OuDriver::P;
    else if (driver == "Q") c.ou.driver = OuDriver::QTilde;
    else r.fail("model.driver", "expected P or Q, got '" + driver + "'");
  } else {
    r.fail("model.variant", "unknown variant '" + variant + "' (expected constant or ou)");
  }

  c.sigma = r.list("market.sigma", c.sigma);
  c.s0 = r.list("market.s0", c.s0);

  const std::string uname = r.text("utility.name", "log");
  if (uname == "log") {
    c.utility_kind = UtilityKind::log;
    r.forbid("utility.p", "only valid with utility.name = power");
    r.forbid("utility.a", "only valid with utility.name = exponential");
  } else if (uname == "power") {
    c.utility_kind = UtilityKind::power;
    if (!r.has("utility.p")) r.fail("utility.p", "required with utility.name = power");
    c.p = r.number("utility.p", c.p);
    r.forbid("utility.a", "only valid with utility.name = exponential");
  } else if (uname == "exponential") {
    c.utility_kind = UtilityKind::exponential;
    if (!r.has("utility.a")) r.fail("utility.a", "required with utility.name = exponential");
    c.a = r.number("utility.a", c.a);
    r.forbid("utility.p", "only valid with utility.name = power");
  } else {
    r.fail("utility.name", "unknown utility '" + uname + "' (expected log, power or exponential)");
  }

  c.x = r.number("investor.x", c.x);
  c.horizon = r.number("grid.T", c.horizon);
  c.n_steps = r.count("grid.n_steps", c.n_steps);
  c.n_paths = r.count("mc.n_paths", c.n_paths);
  c.seed = r.u64("mc.seed", c.seed);

  c.regression.degree = static_cast<int>(r.count("hedging.degree", static_cast<std::size_t>(c.regression.degree)));
  c.regression.ridge = r.number("hedging.ridge", c.regression.ridge);
  c.regression.stride = r.count("hedging.stride", c.regression.stride);
  c.truncation = parse_truncation(r);
  const std::string basis = r.text("hedging.basis", "scaled");
  if (basis == "scaled") c.regression.basis = BasisKind::scaled;
  else if (basis == "raw") c.regression.basis = BasisKind::raw;
  else r.fail("hedging.basis", "expected scaled or raw, got '" + basis + "'");

  c.out_dir = r.text("outputs.directory", c.out_dir);
  if (r.has("outputs.formats")) {
    c.write_csv = c.write_json = false;
    std::stringstream ss(r.text("outputs.formats", ""));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item == "csv") c.write_csv = true;
      else if (item == "json") c.write_json = true;
      else r.fail("outputs.formats", "unknown format '" + item + "' (expected csv and/or json)");
    }
  }

  c.verify.eu1_paths = r.count("verify.eu1_paths", c.verify.eu1_paths);
  c.verify.eu1_levels = r.count("verify.eu1_levels", c.verify.eu1_levels);
  c.verify.budget_paths = r.count("verify.budget_paths", c.verify.budget_paths);
  c.verify.phi1_paths = r.count("verify.phi1_paths", c.verify.phi1_paths);
  c.verify.nested_nodes = r.count("verify.nested_nodes", c.verify.nested_nodes);
  c.verify.nested_states = r.count("verify.nested_states", c.verify.nested_states);
  c.verify.nested_inner = r.count("verify.nested_inner", c.verify.nested_inner);
  c.verify.truncation_ladder = r.list("verify.truncation_ladder", c.verify.truncation_ladder);

  r.reject_unknown();
  validate_config(c);
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace portdec
