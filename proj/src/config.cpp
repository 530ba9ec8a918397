#include "dfpl/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>

#include <fmt/format.h>

namespace dfpl {

// ---- TOML subset --------------------------------------------------------------

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool is_bare_key(std::string_view k) {
  return !k.empty() && std::all_of(k.begin(), k.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
  });
}

/// Removes a trailing comment that is not inside a string.
std::string_view strip_comment(std::string_view line) {
  char quote = 0;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quote != 0) {
      if (c == '\\' && quote == '"') ++i;
      else if (c == quote) quote = 0;
    } else if (c == '"' || c == '\'') {
      quote = c;
    } else if (c == '#') {
      return line.substr(0, i);
    }
  }
  return line;
}

std::optional<double> parse_number(std::string_view s, bool* is_integer) {
  std::string clean;
  for (char c : s)
    if (c != '_') clean.push_back(c);
  if (clean.empty()) return std::nullopt;
  if (clean == "inf" || clean == "+inf") return std::numeric_limits<double>::infinity();
  if (clean == "-inf") return -std::numeric_limits<double>::infinity();
  if (clean == "nan" || clean == "+nan" || clean == "-nan") return std::numeric_limits<double>::quiet_NaN();
  const bool integral = clean.find_first_of(".eE") == std::string::npos;
  const char* begin = clean.data() + (clean.front() == '+' ? 1 : 0);
  const char* end = clean.data() + clean.size();
  if (integral) {
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc{} || p != end) return std::nullopt;
    *is_integer = true;
    return static_cast<double>(v);
  }
  double v = 0;
  auto [p, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc{} || p != end) return std::nullopt;
  *is_integer = false;
  return v;
}

TomlValue parse_value(std::string_view raw, int line) {
  const auto s = trim(raw);
  auto fail = [&](const std::string& why) -> TomlValue {
    throw ConfigError("", fmt::format("line {}: {}", line, why));
  };
  if (s.empty()) return fail("missing value");
  if (s.front() == '"') {
    if (s.size() < 2 || s.back() != '"') return fail("unterminated string");
    std::string out;
    for (std::size_t i = 1; i + 1 < s.size(); ++i) {
      char c = s[i];
      if (c == '\\' && i + 2 < s.size()) {
        const char e = s[++i];
        switch (e) {
          case 'n': c = '\n'; break;
          case 't': c = '\t'; break;
          case '\\': c = '\\'; break;
          case '"': c = '"'; break;
          default: return fail(fmt::format("unsupported escape \\{}", e));
        }
      }
      out.push_back(c);
    }
    return out;
  }
  if (s.front() == '\'') {
    if (s.size() < 2 || s.back() != '\'') return fail("unterminated string");
    return std::string(s.substr(1, s.size() - 2));
  }
  if (s == "true") return true;
  if (s == "false") return false;
  if (s.front() == '[') {
    if (s.back() != ']') return fail("unterminated array");
    std::vector<double> items;
    auto body = trim(s.substr(1, s.size() - 2));
    while (!body.empty()) {
      const auto comma = body.find(',');
      const auto item = trim(body.substr(0, comma));
      if (!item.empty()) {
        bool integer = false;
        const auto v = parse_number(item, &integer);
        if (!v) return fail(fmt::format("array item '{}' is not a number", item));
        items.push_back(*v);
      }
      if (comma == std::string_view::npos) break;
      body = trim(body.substr(comma + 1));
    }
    return items;
  }
  bool integer = false;
  if (const auto v = parse_number(s, &integer)) {
    if (integer) return static_cast<std::int64_t>(*v);
    return *v;
  }
  return fail(fmt::format("cannot parse value '{}'", s));
}

}  // namespace

std::vector<TomlEntry> parse_toml(std::string_view text) {
  std::vector<TomlEntry> out;
  std::string table;
  int lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const auto raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++lineno;
    const auto line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("", fmt::format("line {}: malformed table header", lineno));
      table = std::string(trim(line.substr(1, line.size() - 2)));
      if (!is_bare_key(table)) throw ConfigError("", fmt::format("line {}: bad table name", lineno));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError("", fmt::format("line {}: expected key = value", lineno));
    const auto key = trim(line.substr(0, eq));
    if (!is_bare_key(key)) throw ConfigError("", fmt::format("line {}: bad key '{}'", lineno, key));
    std::string full = table.empty() ? std::string(key) : table + "." + std::string(key);
    for (const auto& e : out)
      if (e.key == full) throw ConfigError(full, fmt::format("line {}: duplicate key '{}'", lineno, full));
    out.push_back({std::move(full), parse_value(line.substr(eq + 1), lineno), lineno});
  }
  return out;
}

TomlValue parse_override_value(std::string_view text) {
  try {
    return parse_value(text, 0);
  } catch (const ConfigError&) {
    return std::string(text);
  }
}

// ---- field table ------------------------------------------------------------

namespace {

double as_double(const std::string& key, const TomlValue& v) {
  if (const auto* d = std::get_if<double>(&v)) return *d;
  if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
  throw ConfigError(key, fmt::format("field '{}': expected a number", key));
}

std::int64_t as_int(const std::string& key, const TomlValue& v) {
  if (const auto* i = std::get_if<std::int64_t>(&v)) return *i;
  if (const auto* d = std::get_if<double>(&v); d != nullptr && std::floor(*d) == *d && std::isfinite(*d))
    return static_cast<std::int64_t>(*d);
  throw ConfigError(key, fmt::format("field '{}': expected an integer", key));
}

std::size_t as_count(const std::string& key, const TomlValue& v) {
  const auto i = as_int(key, v);
  if (i < 0) throw ConfigError(key, fmt::format("field '{}': must be non-negative", key));
  return static_cast<std::size_t>(i);
}

std::string as_string(const std::string& key, const TomlValue& v) {
  if (const auto* s = std::get_if<std::string>(&v)) return *s;
  throw ConfigError(key, fmt::format("field '{}': expected a string", key));
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const TomlValue&)>;

ConvergenceConstants& constants(ExperimentConfig& c) {
  if (!c.constants) c.constants = ConvergenceConstants{};
  return *c.constants;
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"dataset",
       [](ExperimentConfig& c, const std::string& k, const TomlValue& v) {
         const auto s = as_string(k, v);
         if (s == "synth") c.dataset = DatasetKind::kSynth;
         else if (s == "mnist") c.dataset = DatasetKind::kMnist;
         else if (s == "fmnist") c.dataset = DatasetKind::kFmnist;
         else throw ConfigError(k, fmt::format("field 'dataset': unknown dataset '{}' (mnist|fmnist|synth)", s));
       }},
      {"images", [](auto& c, const auto& k, const auto& v) { c.images = as_string(k, v); }},
      {"labels", [](auto& c, const auto& k, const auto& v) { c.labels = as_string(k, v); }},
      {"max_samples", [](auto& c, const auto& k, const auto& v) { c.max_samples = as_count(k, v); }},
      {"synth_classes", [](auto& c, const auto& k, const auto& v) { c.synth_classes = as_count(k, v); }},
      {"synth_per_class", [](auto& c, const auto& k, const auto& v) { c.synth_per_class = as_count(k, v); }},
      {"synth_dim", [](auto& c, const auto& k, const auto& v) { c.synth_dim = as_count(k, v); }},
      {"synth_spread", [](auto& c, const auto& k, const auto& v) { c.synth_spread = as_double(k, v); }},
      {"clients", [](auto& c, const auto& k, const auto& v) { c.clients = as_count(k, v); }},
      {"avg", [](auto& c, const auto& k, const auto& v) { c.avg = as_double(k, v); }},
      {"std", [](auto& c, const auto& k, const auto& v) { c.std = as_double(k, v); }},
      {"seed",
       [](auto& c, const auto& k, const auto& v) { c.seed = static_cast<std::uint64_t>(as_int(k, v)); }},
      {"train_fraction", [](auto& c, const auto& k, const auto& v) { c.train_fraction = as_double(k, v); }},
      {"rounds", [](auto& c, const auto& k, const auto& v) { c.rounds = as_int(k, v); }},
      {"local_iterations", [](auto& c, const auto& k, const auto& v) { c.local_iterations = as_int(k, v); }},
      {"t_sum", [](auto& c, const auto& k, const auto& v) { c.t_sum = as_double(k, v); }},
      {"alpha", [](auto& c, const auto& k, const auto& v) { c.alpha = as_double(k, v); }},
      {"beta", [](auto& c, const auto& k, const auto& v) { c.beta = as_double(k, v); }},
      {"eta", [](auto& c, const auto& k, const auto& v) { c.eta = as_double(k, v); }},
      {"lambda", [](auto& c, const auto& k, const auto& v) { c.lambda = as_double(k, v); }},
      {"batch_size", [](auto& c, const auto& k, const auto& v) { c.batch_size = as_count(k, v); }},
      {"feature_dim", [](auto& c, const auto& k, const auto& v) { c.feature_dim = as_int(k, v); }},
      {"hidden",
       [](ExperimentConfig& c, const std::string& k, const TomlValue& v) {
         c.hidden.clear();
         if (const auto* arr = std::get_if<std::vector<double>>(&v)) {
           for (double w : *arr) c.hidden.push_back(as_int(k, w));
         } else {
           c.hidden.push_back(as_int(k, v));
         }
       }},
      {"difficulty_bits",
       [](auto& c, const auto& k, const auto& v) {
         const auto bits = as_int(k, v);
         if (bits < 0 || bits > 255) throw ConfigError(k, "field 'difficulty_bits': must lie in [0, 255]");
         c.difficulty_bits = static_cast<std::uint32_t>(bits);
       }},
      {"mode",
       [](ExperimentConfig& c, const std::string& k, const TomlValue& v) {
         const auto s = as_string(k, v);
         if (s == "sim" || s == "SIM") c.mode = MiningMode::kSim;
         else if (s == "real" || s == "REAL") c.mode = MiningMode::kReal;
         else throw ConfigError(k, fmt::format("field 'mode': unknown mode '{}' (sim|real)", s));
       }},
      {"max_trials",
       [](auto& c, const auto& k, const auto& v) { c.max_trials = static_cast<std::uint64_t>(as_count(k, v)); }},
      {"aggregation",
       [](ExperimentConfig& c, const std::string& k, const TomlValue& v) {
         const auto s = as_string(k, v);
         if (s == "contributors") c.aggregation = AggregationRule::kContributorMean;
         else if (s == "literal") c.aggregation = AggregationRule::kLiteralK;
         else throw ConfigError(k, fmt::format("field 'aggregation': unknown rule '{}' (contributors|literal)", s));
       }},
      {"threads", [](auto& c, const auto& k, const auto& v) { c.threads = static_cast<unsigned>(as_count(k, v)); }},
      {"output_dir", [](auto& c, const auto& k, const auto& v) { c.output_dir = as_string(k, v); }},
      {"L1", [](auto& c, const auto& k, const auto& v) { constants(c).L1 = as_double(k, v); }},
      {"L2", [](auto& c, const auto& k, const auto& v) { constants(c).L2 = as_double(k, v); }},
      {"sigma2", [](auto& c, const auto& k, const auto& v) { constants(c).sigma2 = as_double(k, v); }},
      {"G", [](auto& c, const auto& k, const auto& v) { constants(c).G = as_double(k, v); }},
      {"Q", [](auto& c, const auto& k, const auto& v) { constants(c).Q = as_double(k, v); }},
      {"chi", [](auto& c, const auto& k, const auto& v) { constants(c).chi = as_double(k, v); }},
      {"delta", [](auto& c, const auto& k, const auto& v) { constants(c).delta = as_double(k, v); }},
      {"bounds_max_rounds", [](auto& c, const auto& k, const auto& v) { c.bounds_max_rounds = as_int(k, v); }},
  };
  return table;
}

const std::map<std::string, std::string>& aliases() {
  static const std::map<std::string, std::string> table = {
      {"K", "clients"}, {"R", "rounds"}, {"E", "local_iterations"}, {"d_p", "feature_dim"},
  };
  return table;
}

}  // namespace

void set_field(ExperimentConfig& cfg, const std::string& key, const TomlValue& value) {
  // Tables are accepted for grouping only; the last path component names the field.
  std::string name = key.substr(key.rfind('.') == std::string::npos ? 0 : key.rfind('.') + 1);
  std::replace(name.begin(), name.end(), '-', '_');
  if (auto a = aliases().find(name); a != aliases().end()) name = a->second;
  const auto it = setters().find(name);
  if (it == setters().end()) throw ConfigError(key, fmt::format("unknown field '{}'", key));
  it->second(cfg, name, value);
}

ExperimentConfig parse_config_text(std::string_view text) {
  ExperimentConfig cfg;
  for (const auto& e : parse_toml(text)) {
    try {
      set_field(cfg, e.key, e.value);
    } catch (const ConfigError& err) {
      throw ConfigError(err.field(), fmt::format("line {}: {}", e.line, err.what()));
    }
  }
  return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", fmt::format("cannot read config file {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  auto cfg = parse_config_text(ss.str());
  cfg.validate();
  return cfg;
}

// ---- validation ---------------------------------------------------------------

std::int64_t ExperimentConfig::resolved_local_iterations() const {
  if (local_iterations) return *local_iterations;
  if (t_sum && alpha && beta) {
    try {
      return dfpl::local_iterations(*t_sum, rounds, *alpha, *beta);
    } catch (const BudgetError& e) {
      throw ConfigError("t_sum", fmt::format("field 't_sum': {}", e.what()));
    }
  }
  return 20;
}

void ExperimentConfig::validate() const {
  auto bad = [](const char* field, const std::string& why) { throw ConfigError(field, fmt::format("field '{}': {}", field, why)); };

  const int triple = static_cast<int>(t_sum.has_value()) + static_cast<int>(alpha.has_value()) +
                     static_cast<int>(beta.has_value());
  if (triple != 0 && triple != 3) bad("t_sum", "t_sum, alpha and beta must be given together");
  if (triple == 3 && local_iterations) bad("local_iterations", "give either E or the (t_sum, alpha, beta) triple, not both");
  if (local_iterations && *local_iterations < 1) bad("local_iterations", "must be at least 1");

  if (clients < 1) bad("clients", "must be at least 1");
  if (rounds < 0) bad("rounds", "must be non-negative");
  if (!(eta > 0)) bad("eta", "must be positive");
  if (!(lambda >= 0)) bad("lambda", "must be non-negative");
  if (batch_size < 1) bad("batch_size", "must be at least 1");
  if (feature_dim < 1) bad("feature_dim", "must be at least 1");
  for (auto w : hidden)
    if (w < 1) bad("hidden", "widths must be positive");
  if (!(std >= 0)) bad("std", "must be non-negative");
  if (!(avg >= 1)) bad("avg", "must be at least 1");
  if (!(train_fraction > 0 && train_fraction < 1)) bad("train_fraction", "must lie in (0, 1)");
  if (max_trials < 1) bad("max_trials", "must be at least 1");
  if (dataset == DatasetKind::kSynth) {
    if (synth_classes < 1) bad("synth_classes", "must be at least 1");
    if (synth_per_class < 1) bad("synth_per_class", "must be at least 1");
    if (synth_dim < 1) bad("synth_dim", "must be at least 1");
    if (!(synth_spread >= 0)) bad("synth_spread", "must be non-negative");
    if (avg > static_cast<double>(synth_classes)) bad("avg", "exceeds the number of classes");
  }
  if (constants) {
    const auto& k = *constants;
    if (!(k.L1 > 0)) bad("L1", "must be positive");
    if (!(k.L2 > 0)) bad("L2", "must be positive");
    if (!(k.G > 0)) bad("G", "must be positive");
    if (!(k.sigma2 >= 0)) bad("sigma2", "must be non-negative");
    if (!(k.Q >= 0)) bad("Q", "must be non-negative");
    if (!(k.chi > 0)) bad("chi", "must be positive");
    if (!(k.delta >= 0)) bad("delta", "must be non-negative");
    if (bounds_max_rounds < 1) bad("bounds_max_rounds", "must be at least 1");
  }
  (void)resolved_local_iterations();
  round_config().validate();
}

RoundConfig ExperimentConfig::round_config() const {
  RoundConfig rc;
  rc.local_iterations = resolved_local_iterations();
  rc.eta = eta;
  rc.lambda = lambda;
  rc.batch_size = batch_size;
  rc.difficulty_bits = difficulty_bits;
  rc.mode = mode;
  rc.max_trials = max_trials;
  rc.aggregation = aggregation;
  return rc;
}

std::string_view to_string(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::kSynth: return "synth";
    case DatasetKind::kMnist: return "mnist";
    case DatasetKind::kFmnist: return "fmnist";
  }
  return "?";
}

}  // namespace dfpl
