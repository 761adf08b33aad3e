#pragma once

// Scenario configs (JSON), the preset catalogue, and dispatch to the solvers
// with CSV / JSON emission. Requires nlohmann/json on the include path.

#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "robust_lfd/band_general.hpp"
#include "robust_lfd/contamination.hpp"
#include "robust_lfd/convex_solver.hpp"
#include "robust_lfd/tv_solver.hpp"
#include "robust_lfd/verify.hpp"

namespace robust_lfd {

using json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

// Malformed or invalid config; `path` is a JSON pointer to the field.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, std::string path)
      : Error(what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

enum class ClassKind {
  tv,
  lower_contamination,
  upper_contamination,
  band,
  moment,
  ppoint,
  hybrid
};

inline std::string_view to_string(ClassKind k) {
  switch (k) {
    case ClassKind::tv: return "tv";
    case ClassKind::lower_contamination: return "lower_contamination";
    case ClassKind::upper_contamination: return "upper_contamination";
    case ClassKind::band: return "band";
    case ClassKind::moment: return "moment";
    case ClassKind::ppoint: return "ppoint";
    case ClassKind::hybrid: return "hybrid";
  }
  return "?";
}

struct VerifySettings {
  bool enabled = false;
  double threshold = 0.0;
  double prior0 = 0.5;
  std::size_t sample_size = 10;
  std::size_t trials = 20000;
  std::size_t members = 50;
  std::size_t fdiv_members = 200;
};

struct NominalPair {
  double mean0 = -1.0, mean1 = 1.0, variance0 = 1.0, variance1 = 1.0;
};

struct BandParams {
  double eps_lower = 0.2, eps_upper = 0.2;
  double mean0 = -1.0, mean1 = 1.0, variance = 4.0;
  double upper_variance0 = 4.0, upper_variance1 = 4.0;
  // Optional CSV bound files (x,value), resolved relative to the config.
  std::array<std::string, 4> files{};  // g0_lower, g0_upper, g1_lower, g1_upper
};

struct ConstraintSpec {
  int hypothesis = 0;
  std::string kind;  // "moment" | "ppoint"
  int power = 1;
  double a = 0.0, b = 0.0;
  double lower = -kInf, upper = kInf;
};

struct Scenario {
  std::string name;
  ClassKind kind = ClassKind::tv;
  double x_min = -12.0, x_max = 12.0;
  std::size_t n = 2001;
  NominalPair nominal;
  double eps0 = 0.0, eps1 = 0.0;
  BandParams band;
  std::vector<ConstraintSpec> constraints;
  std::optional<double> fixed_u;
  std::vector<double> u_list;  // for the u-dependence metric
  std::uint64_t seed = 0;
  VerifySettings verify;
  std::filesystem::path base_dir;  // for relative bound files

  Grid grid() const { return Grid(x_min, x_max, n); }
};

namespace detail {

inline std::string join_path(const std::string& p, const std::string& key) {
  return p + "/" + key;
}

inline const json& require_field(const json& j, const std::string& key,
                                 const std::string& path) {
  if (!j.is_object()) throw ConfigError("expected an object", path);
  auto it = j.find(key);
  if (it == j.end())
    throw ConfigError("missing field '" + key + "'", join_path(path, key));
  return *it;
}

inline double number_at(const json& v, const std::string& path) {
  if (!v.is_number()) throw ConfigError("expected a number", path);
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ConfigError("expected a finite number", path);
  return d;
}

inline double get_number(const json& j, const std::string& key,
                         const std::string& path) {
  return number_at(require_field(j, key, path), join_path(path, key));
}

inline double get_number_or(const json& j, const std::string& key,
                            const std::string& path, double fallback) {
  if (!j.contains(key)) return fallback;
  return number_at(j.at(key), join_path(path, key));
}

// Bound values may be numbers or the strings "-inf" / "inf".
inline double get_bound_or(const json& j, const std::string& key,
                           const std::string& path, double fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (v.is_string()) {
    if (v == "inf") return kInf;
    if (v == "-inf") return -kInf;
  }
  if (!v.is_number()) throw ConfigError("expected a number", join_path(path, key));
  return v.get<double>();
}

inline std::uint64_t get_count_or(const json& j, const std::string& key,
                                  const std::string& path, std::uint64_t fallback,
                                  std::uint64_t min_value = 1) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0 ||
      v.get<std::uint64_t>() < min_value)
    throw ConfigError("expected an integer >= " + std::to_string(min_value),
                      join_path(path, key));
  return v.get<std::uint64_t>();
}

inline ClassKind parse_kind(const json& v, const std::string& path) {
  if (!v.is_string()) throw ConfigError("expected a string", path);
  const auto s = v.get<std::string>();
  for (auto k : {ClassKind::tv, ClassKind::lower_contamination,
                 ClassKind::upper_contamination, ClassKind::band,
                 ClassKind::moment, ClassKind::ppoint, ClassKind::hybrid})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown class_kind '" + s + "'", path);
}

inline void check(bool ok, const std::string& what, const std::string& path) {
  if (!ok) throw ConfigError(what, path);
}

}  // namespace detail

// Parses one run. `path` is the JSON pointer of `j` inside the document.
inline Scenario parse_scenario(const json& j, const std::string& path = "",
                               const std::filesystem::path& base_dir = {}) {
  using namespace detail;
  Scenario s;
  s.base_dir = base_dir;
  s.kind = parse_kind(require_field(j, "class_kind", path),
                      join_path(path, "class_kind"));
  s.name = j.contains("name") && j.at("name").is_string()
               ? j.at("name").get<std::string>()
               : std::string(to_string(s.kind));
  for (char c : s.name)
    check(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' ||
              c == '.',
          "name may only contain [A-Za-z0-9_.-]", join_path(path, "name"));
  s.seed = get_count_or(j, "seed", path, 0, 0);

  const bool convex = s.kind == ClassKind::moment || s.kind == ClassKind::ppoint ||
                      s.kind == ClassKind::hybrid;
  const bool band = s.kind == ClassKind::band;
  if (convex || band) {
    s.x_min = -6.0;
    s.x_max = 6.0;
    s.n = convex ? 201 : 1201;
  }
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    const auto gp = join_path(path, "grid");
    s.x_min = get_number_or(g, "x_min", gp, s.x_min);
    s.x_max = get_number_or(g, "x_max", gp, s.x_max);
    s.n = get_count_or(g, "n", gp, s.n, 3);
    check(s.x_max > s.x_min, "x_max must exceed x_min", join_path(gp, "x_max"));
  }

  switch (s.kind) {
    case ClassKind::tv:
    case ClassKind::lower_contamination:
    case ClassKind::upper_contamination: {
      if (j.contains("nominal")) {
        const auto& nm = j.at("nominal");
        const auto np = join_path(path, "nominal");
        s.nominal.mean0 = get_number_or(nm, "mean0", np, s.nominal.mean0);
        s.nominal.mean1 = get_number_or(nm, "mean1", np, s.nominal.mean1);
        s.nominal.variance0 = get_number_or(nm, "variance0", np, s.nominal.variance0);
        s.nominal.variance1 = get_number_or(nm, "variance1", np, s.nominal.variance1);
        check(s.nominal.variance0 > 0.0, "variance must be positive",
              join_path(np, "variance0"));
        check(s.nominal.variance1 > 0.0, "variance must be positive",
              join_path(np, "variance1"));
      }
      s.eps0 = get_number(j, "eps0", path);
      s.eps1 = get_number(j, "eps1", path);
      const bool upper = s.kind == ClassKind::upper_contamination;
      for (auto [key, v] : {std::pair{"eps0", s.eps0}, std::pair{"eps1", s.eps1}})
        check(upper ? v > 0.0 : (v >= 0.0 && v < 1.0),
              upper ? "eps must be positive" : "eps must lie in [0, 1)",
              join_path(path, key));
      break;
    }
    case ClassKind::band: {
      const auto& b = require_field(j, "band", path);
      const auto bp = join_path(path, "band");
      if (b.contains("bound_files")) {
        const auto& f = b.at("bound_files");
        const auto fp = join_path(bp, "bound_files");
        const char* keys[4] = {"g0_lower", "g0_upper", "g1_lower", "g1_upper"};
        for (int k = 0; k < 4; ++k) {
          const auto& v = require_field(f, keys[k], fp);
          check(v.is_string(), "expected a file path", join_path(fp, keys[k]));
          std::filesystem::path p = v.get<std::string>();
          if (p.is_relative()) p = base_dir / p;
          check(std::filesystem::exists(p), "file not found: " + p.string(),
                join_path(fp, keys[k]));
          s.band.files[static_cast<std::size_t>(k)] = p.string();
        }
      } else {
        s.band.eps_lower = get_number(b, "eps_lower", bp);
        s.band.eps_upper = get_number(b, "eps_upper", bp);
        check(s.band.eps_lower >= 0.0 && s.band.eps_lower < 1.0,
              "eps_lower must lie in [0, 1)", join_path(bp, "eps_lower"));
        check(s.band.eps_upper >= 0.0, "eps_upper must be >= 0",
              join_path(bp, "eps_upper"));
        s.band.mean0 = get_number_or(b, "mean0", bp, s.band.mean0);
        s.band.mean1 = get_number_or(b, "mean1", bp, s.band.mean1);
        s.band.variance = get_number_or(b, "variance", bp, s.band.variance);
        s.band.upper_variance0 =
            get_number_or(b, "upper_variance0", bp, s.band.upper_variance0);
        s.band.upper_variance1 =
            get_number_or(b, "upper_variance1", bp, s.band.upper_variance1);
        for (auto [key, v] : {std::pair{"variance", s.band.variance},
                              std::pair{"upper_variance0", s.band.upper_variance0},
                              std::pair{"upper_variance1", s.band.upper_variance1}})
          check(v > 0.0, "variance must be positive", join_path(bp, key));
      }
      break;
    }
    case ClassKind::moment:
    case ClassKind::ppoint:
    case ClassKind::hybrid: {
      const auto& cs = require_field(j, "constraints", path);
      const auto cp = join_path(path, "constraints");
      check(cs.is_array(), "expected an array", cp);
      for (std::size_t k = 0; k < cs.size(); ++k) {
        const auto& c = cs[k];
        const auto p = join_path(cp, std::to_string(k));
        ConstraintSpec spec;
        const double h = get_number(c, "hypothesis", p);
        check(h == 0.0 || h == 1.0, "hypothesis must be 0 or 1",
              join_path(p, "hypothesis"));
        spec.hypothesis = static_cast<int>(h);
        const auto& kind = require_field(c, "kind", p);
        check(kind == "moment" || kind == "ppoint",
              "kind must be 'moment' or 'ppoint'", join_path(p, "kind"));
        spec.kind = kind.get<std::string>();
        if (spec.kind == "moment") {
          const double pw = get_number(c, "power", p);
          check(pw >= 1.0 && pw <= 8.0 && pw == std::floor(pw),
                "power must be an integer in [1, 8]", join_path(p, "power"));
          spec.power = static_cast<int>(pw);
        } else {
          spec.a = get_number(c, "a", p);
          spec.b = get_number(c, "b", p);
          check(spec.b > spec.a, "interval needs b > a", join_path(p, "b"));
        }
        spec.lower = get_bound_or(c, "lower", p, -kInf);
        spec.upper = get_bound_or(c, "upper", p, kInf);
        check(spec.lower <= spec.upper, "lower exceeds upper", join_path(p, "upper"));
        check(std::isfinite(spec.lower) || std::isfinite(spec.upper),
              "at least one bound must be finite", p);
        s.constraints.push_back(spec);
      }
      if (j.contains("u")) {
        const double u = get_number(j, "u", path);
        check(u > 0.0 && u < 1.0, "u must lie in (0, 1)", join_path(path, "u"));
        s.fixed_u = u;
      }
      if (j.contains("u_list")) {
        const auto& ul = j.at("u_list");
        const auto up = join_path(path, "u_list");
        check(ul.is_array() && ul.size() >= 2, "expected >= 2 values", up);
        for (std::size_t k = 0; k < ul.size(); ++k) {
          const double u = number_at(ul[k], join_path(up, std::to_string(k)));
          check(u > 0.0 && u < 1.0, "u must lie in (0, 1)",
                join_path(up, std::to_string(k)));
          s.u_list.push_back(u);
        }
      }
      break;
    }
  }

  if (j.contains("verify")) {
    const auto& v = j.at("verify");
    const auto vp = join_path(path, "verify");
    if (v.contains("enabled")) {
      check(v.at("enabled").is_boolean(), "expected a boolean",
            join_path(vp, "enabled"));
      s.verify.enabled = v.at("enabled").get<bool>();
    }
    s.verify.threshold = get_number_or(v, "threshold", vp, s.verify.threshold);
    s.verify.prior0 = get_number_or(v, "prior0", vp, s.verify.prior0);
    check(s.verify.prior0 > 0.0 && s.verify.prior0 < 1.0,
          "prior0 must lie in (0, 1)", join_path(vp, "prior0"));
    s.verify.sample_size = get_count_or(v, "sample_size", vp, s.verify.sample_size);
    s.verify.trials = get_count_or(v, "trials", vp, s.verify.trials);
    s.verify.members = get_count_or(v, "members", vp, s.verify.members);
    s.verify.fdiv_members = get_count_or(v, "fdiv_members", vp, s.verify.fdiv_members);
  }
  return s;
}

// A document is one run or {"runs": [...]}; both carry schema_version.
inline std::vector<Scenario> parse_document(const json& doc,
                                            const std::filesystem::path& base_dir = {}) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object", "");
  const auto& ver = detail::require_field(doc, "schema_version", "");
  if (!ver.is_number_integer() || ver.get<int>() != kSchemaVersion)
    throw ConfigError("unsupported schema_version (expected " +
                          std::to_string(kSchemaVersion) + ")",
                      "/schema_version");
  std::vector<Scenario> out;
  if (doc.contains("runs")) {
    const auto& runs = doc.at("runs");
    if (!runs.is_array() || runs.empty())
      throw ConfigError("runs must be a non-empty array", "/runs");
    for (std::size_t k = 0; k < runs.size(); ++k)
      out.push_back(parse_scenario(runs[k], "/runs/" + std::to_string(k), base_dir));
    for (std::size_t a = 0; a < out.size(); ++a)
      for (std::size_t b = a + 1; b < out.size(); ++b)
        if (out[a].name == out[b].name)
          throw ConfigError("duplicate run name '" + out[b].name + "'",
                            "/runs/" + std::to_string(b) + "/name");
  } else {
    out.push_back(parse_scenario(doc, "", base_dir));
  }
  return out;
}

inline json load_json_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open config file " + p.string(), "");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("JSON parse error: ") + e.what(), "");
  }
}

// ROBUST_LFD_SEED, if set, replaces every run's seed.
inline void apply_seed_override(std::vector<Scenario>& runs) {
  const char* env = std::getenv("ROBUST_LFD_SEED");
  if (!env) return;
  std::uint64_t seed = 0;
  const char* end = env + std::char_traits<char>::length(env);
  auto [p, ec] = std::from_chars(env, end, seed);
  if (ec != std::errc() || p != end || p == env)
    throw ConfigError("ROBUST_LFD_SEED must be a non-negative integer",
                      "$ROBUST_LFD_SEED");
  for (auto& r : runs) r.seed = seed;
}

// ---- presets ----

inline std::vector<std::string> preset_names() {
  return {"tv_fig1",     "contamination_fig1", "band_fig9",  "band_fig10",
          "band_fig88",  "moment_fig19",       "ppoint_fig21"};
}

inline std::string preset_description(const std::string& name) {
  if (name == "tv_fig1") return "TV neighborhoods of N(-1,1), N(1,1); eps0 = eps1 in {0.1, 0.08875}";
  if (name == "contamination_fig1") return "lower eps-contamination of N(-1,1), N(1,1); eps = 0.1";
  if (name == "band_fig9") return "band (1-0.2)N(-+1,4) .. (1+e)N(-+1,4), e in {0.2, 0.5, 1.5}";
  if (name == "band_fig10") return "band robust LRFs, e in {0.2, 0.5, 1.5, 19}";
  if (name == "band_fig88") return "band e = 0.5 with g1 upper-bound variance 9 (degenerate Type-B)";
  if (name == "moment_fig19") return "first/second moment classes on [-6, 6], n = 201";
  if (name == "ppoint_fig21") return "p-point classes P0[-5,3) <= 0.3, P1[0,3) >= 0.8";
  throw ConfigError("unknown preset '" + name + "'", "");
}

inline json preset_config(const std::string& name) {
  json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["preset"] = name;
  auto band_run = [](double e, double uv1 = 4.0) {
    json r;
    std::ostringstream nm;
    nm << "eps_upper_" << e;
    r["name"] = nm.str();
    r["class_kind"] = "band";
    r["grid"] = {{"x_min", -6.0}, {"x_max", 6.0}, {"n", 1201}};
    r["band"] = {{"eps_lower", 0.2}, {"eps_upper", e},       {"mean0", -1.0},
                 {"mean1", 1.0},     {"variance", 4.0},      {"upper_variance0", 4.0},
                 {"upper_variance1", uv1}};
    return r;
  };
  auto nominal = [] {
    return json{{"mean0", -1.0}, {"mean1", 1.0}, {"variance0", 1.0}, {"variance1", 1.0}};
  };
  json runs = json::array();
  if (name == "tv_fig1") {
    for (double e : {0.1, 0.08875}) {
      std::ostringstream nm;
      nm << "eps_" << e;
      runs.push_back({{"name", nm.str()},
                      {"class_kind", "tv"},
                      {"grid", {{"x_min", -12.0}, {"x_max", 12.0}, {"n", 2001}}},
                      {"nominal", nominal()},
                      {"eps0", e},
                      {"eps1", e}});
    }
  } else if (name == "contamination_fig1") {
    runs.push_back({{"name", "eps_0.1"},
                    {"class_kind", "lower_contamination"},
                    {"grid", {{"x_min", -12.0}, {"x_max", 12.0}, {"n", 2001}}},
                    {"nominal", nominal()},
                    {"eps0", 0.1},
                    {"eps1", 0.1}});
  } else if (name == "band_fig9") {
    for (double e : {0.2, 0.5, 1.5}) runs.push_back(band_run(e));
  } else if (name == "band_fig10") {
    for (double e : {0.2, 0.5, 1.5, 19.0}) runs.push_back(band_run(e));
  } else if (name == "band_fig88") {
    auto r = band_run(0.5, 9.0);
    r["name"] = "upper_variance1_9";
    runs.push_back(r);
  } else if (name == "moment_fig19") {
    auto m = [](int h, int p, double lo, double hi) {
      return json{{"hypothesis", h}, {"kind", "moment"}, {"power", p},
                  {"lower", lo},     {"upper", hi}};
    };
    runs.push_back({{"name", "moments"},
                    {"class_kind", "moment"},
                    {"grid", {{"x_min", -6.0}, {"x_max", 6.0}, {"n", 201}}},
                    {"constraints",
                     {m(0, 1, -2.0, -0.5), m(0, 2, 0.0, 2.0), m(1, 1, 0.5, 2.0),
                      m(1, 2, 2.0, 4.0)}},
                    {"u_list", {0.1, 0.3, 0.5, 0.7, 0.9}}});
  } else if (name == "ppoint_fig21") {
    auto pp = [](int h, double a, double b, double lo, double hi) {
      return json{{"hypothesis", h}, {"kind", "ppoint"}, {"a", a},
                  {"b", b},          {"lower", lo},      {"upper", hi}};
    };
    runs.push_back({{"name", "ppoints"},
                    {"class_kind", "ppoint"},
                    {"grid", {{"x_min", -6.0}, {"x_max", 6.0}, {"n", 201}}},
                    {"constraints", {pp(0, -5.0, 3.0, 0.0, 0.3), pp(1, 0.0, 3.0, 0.8, 1.0)}},
                    {"u_list", {0.1, 0.3, 0.5, 0.7, 0.9}}});
  } else {
    throw ConfigError("unknown preset '" + name + "'", "");
  }
  doc["runs"] = runs;
  return doc;
}

// ---- output ----

// Shortest round-trip decimal form.
inline std::string format_number(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw Error("format_number failed");
  return std::string(buf, p);
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
}

inline void write_density_csv(const std::filesystem::path& p,
                              const GridFunction& g) {
  std::string s = "x,density\n";
  for (std::size_t i = 0; i < g.size(); ++i)
    s += format_number(g.grid().point(i)) + "," + format_number(g[i]) + "\n";
  write_text(p, s);
}

// nominal may be empty (classes without a nominal pair): blank column.
inline void write_lrf_csv(const std::filesystem::path& p, const Grid& grid,
                          const std::vector<double>& robust,
                          const std::vector<double>& nominal) {
  std::string s = "x,robust_lr,nominal_lr\n";
  for (std::size_t i = 0; i < grid.size(); ++i) {
    s += format_number(grid.point(i)) + "," + format_number(robust[i]) + ",";
    if (!nominal.empty()) s += format_number(nominal[i]);
    s += "\n";
  }
  write_text(p, s);
}

inline json grid_json(const Grid& g) {
  return {{"x_min", g.x_min()}, {"x_max", g.x_max()}, {"n", g.size()}};
}

inline json report_json(const VerifyReport& r) {
  json j;
  j["ordering"] = {{"checked", r.ordering_checked},
                   {"pass", r.ordering_pass},
                   {"worst_margin", r.ordering_checked ? json(r.ordering_margin)
                                                       : json(nullptr)}};
  j["separation"] = {{"mean0", r.separation.mean0},
                     {"threshold", r.separation.threshold},
                     {"mean1", r.separation.mean1},
                     {"holds", r.separation.holds}};
  j["exponents"] = {{"rate_h0", r.rate0},
                    {"rate_h1", r.rate1},
                    {"members_checked", r.exponents_checked},
                    {"worst_margin", r.exponents_checked ? json(r.exponent_margin)
                                                         : json(nullptr)}};
  j["monte_carlo"] = {{"p_false_alarm", r.mc.p_false_alarm},
                      {"p_miss", r.mc.p_miss},
                      {"p_error", r.mc.p_error},
                      {"se_false_alarm", r.mc.se_false_alarm},
                      {"se_miss", r.mc.se_miss},
                      {"se_error", r.mc.se_error}};
  json table = json::object();
  for (const auto& row : r.fdiv_table)
    table[std::string(to_string(row.kind))] = {{"at_lfd", row.at_lfd},
                                               {"sampled_min", row.sampled_min},
                                               {"margin", row.margin}};
  j["fdiv_table"] = table;
  return j;
}

namespace detail {

inline std::vector<double> read_bound_csv(const std::string& path, const Grid& g) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open bound file " + path, "");
  std::string line;
  std::getline(in, line);  // header
  std::vector<double> v;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw ConfigError("bound file " + path + ": expected 'x,value' rows", "");
    double x = 0.0, y = 0.0;
    auto r1 = std::from_chars(line.data(), line.data() + comma, x);
    auto r2 = std::from_chars(line.data() + comma + 1, line.data() + line.size(), y);
    if (r1.ec != std::errc() || r2.ec != std::errc())
      throw ConfigError("bound file " + path + ": bad number", "");
    if (v.size() >= g.size() ||
        std::abs(x - g.point(v.size())) > 1e-9 * std::max(1.0, std::abs(x)))
      throw ConfigError("bound file " + path + ": x column does not match grid", "");
    v.push_back(y);
  }
  if (v.size() != g.size())
    throw ConfigError("bound file " + path + ": row count does not match grid", "");
  return v;
}

inline BandSpec make_band_spec(const Scenario& s, const Grid& g) {
  if (!s.band.files[0].empty()) {
    auto f = [&](int k) {
      return GridFunction(g, read_bound_csv(s.band.files[static_cast<std::size_t>(k)], g));
    };
    return BandSpec(f(0), f(1), f(2), f(3));
  }
  return BandSpec::gaussian(g, s.band.eps_lower, s.band.eps_upper, s.band.mean0,
                            s.band.mean1, s.band.variance, s.band.upper_variance0,
                            s.band.upper_variance1);
}

inline ConvexProblem make_convex_problem(const Scenario& s, const Grid& g) {
  ConvexProblem p(g);
  for (const auto& c : s.constraints) {
    const auto h = c.hypothesis == 0 ? Hypothesis::h0 : Hypothesis::h1;
    p.constraints.push_back(c.kind == "moment"
                                ? moment_constraint(g, c.power, c.lower, c.upper, h)
                                : ppoint_constraint(g, c.a, c.b, c.lower, c.upper, h));
  }
  return p;
}

inline VerifyOptions verify_options(const Scenario& s) {
  VerifyOptions o;
  o.threshold = s.verify.threshold;
  o.members = s.verify.members;
  o.fdiv_members = s.verify.fdiv_members;
  o.seed = s.seed;
  o.mc.prior0 = s.verify.prior0;
  o.mc.sample_size = s.verify.sample_size;
  o.mc.trials = s.verify.trials;
  return o;
}

}  // namespace detail

struct RunOutput {
  json solution;
  std::optional<json> verify;
};

// Solves one scenario and writes lfd0.csv, lfd1.csv, lrf.csv, solution.json
// (and verify.json) into `dir`.
inline RunOutput run_scenario(const Scenario& s, const std::filesystem::path& dir,
                              bool force_verify = false) {
  const Grid g = s.grid();
  const bool do_verify = force_verify || s.verify.enabled;
  json sol;
  sol["name"] = s.name;
  sol["class_kind"] = std::string(to_string(s.kind));
  sol["grid"] = grid_json(g);
  std::optional<GridDensity> lfd0, lfd1;
  std::vector<double> robust, nominal;
  std::optional<VerifyReport> report;
  const auto vopt = detail::verify_options(s);

  switch (s.kind) {
    case ClassKind::tv: {
      TvSpec spec(gaussian_density(g, s.nominal.mean0, s.nominal.variance0),
                  gaussian_density(g, s.nominal.mean1, s.nominal.variance1), s.eps0,
                  s.eps1);
      const auto r = solve_tv(spec);
      sol["eps0"] = s.eps0;
      sol["eps1"] = s.eps1;
      sol["t_l"] = r.t_l;
      sol["t_u"] = r.t_u;
      sol["t_l_times_t_u"] = r.t_l * r.t_u;
      sol["beta"] = r.beta;
      sol["sigma"] = r.sigma;
      sol["degenerate"] = r.degenerate;
      sol["residuals"] = {r.residuals[0], r.residuals[1]};
      sol["iterations"] = r.iterations;
      robust = clipped_ratio(spec.nominal_ratio(), r.t_l, r.t_u);
      nominal = spec.nominal_ratio();
      lfd0 = r.lfd0;
      lfd1 = r.lfd1;
      if (do_verify) report = verify_tv(spec, r, vopt);
      break;
    }
    case ClassKind::lower_contamination:
    case ClassKind::upper_contamination: {
      const auto dir_kind = s.kind == ClassKind::lower_contamination
                                ? ContaminationDirection::lower
                                : ContaminationDirection::upper;
      ContaminationSpec spec(dir_kind,
                             gaussian_density(g, s.nominal.mean0, s.nominal.variance0),
                             gaussian_density(g, s.nominal.mean1, s.nominal.variance1),
                             s.eps0, s.eps1);
      const auto r = solve_contamination(spec);
      sol["eps0"] = s.eps0;
      sol["eps1"] = s.eps1;
      sol["t_l"] = r.t_l;
      sol["t_u"] = r.t_u;
      sol["degenerate"] = r.degenerate;
      sol["residuals"] = {r.residuals[0], r.residuals[1]};
      robust = robust_lrf(r, spec);
      nominal = likelihood_ratio(spec.f1(), spec.f0());
      lfd0 = r.lfd0;
      lfd1 = r.lfd1;
      if (do_verify) report = verify_contamination(spec, r, vopt);
      break;
    }
    case ClassKind::band: {
      const auto spec = detail::make_band_spec(s, g);
      const auto r = solve_band(spec);
      sol["band_type"] = std::string(to_string(r.band_type));
      sol["k1"] = r.k1;
      sol["k2"] = r.k2;
      json regions = json::array();
      for (const auto& reg : r.lrf_regions)
        regions.push_back({{"x_lo", reg.x_lo},
                           {"x_hi", reg.x_hi},
                           {"points", reg.end - reg.begin},
                           {"rule", std::string(to_string(reg.rule))}});
      sol["regions"] = regions;
      sol["overlap_measure"] = band_overlap_diagnostic(r);
      robust = likelihood_ratio(r.lfd1, r.lfd0);
      // Band centre ratio as the reference curve.
      nominal.resize(g.size());
      for (std::size_t i = 0; i < g.size(); ++i)
        nominal[i] = (spec.lower(1)[i] + spec.upper(1)[i]) /
                     floored(spec.lower(0)[i] + spec.upper(0)[i]);
      lfd0 = r.lfd0;
      lfd1 = r.lfd1;
      if (do_verify) report = verify_band(spec, r, vopt);
      break;
    }
    case ClassKind::moment:
    case ClassKind::ppoint:
    case ClassKind::hybrid: {
      const auto p = detail::make_convex_problem(s, g);
      json active = json::array();
      if (s.fixed_u) {
        const auto r = maximize_affinity_at_u(p, *s.fixed_u);
        sol["u_star"] = *s.fixed_u;
        sol["objective"] = r.objective;
        sol["kkt_residual"] = r.kkt_residual;
        sol["max_violation"] = r.max_violation;
        for (auto k : r.active_constraints) active.push_back(p.constraints[k].label);
        lfd0 = r.lfd0;
        lfd1 = r.lfd1;
      } else {
        const auto r = minimize_over_u(p);
        sol["u_star"] = r.u_star;
        sol["objective"] = r.objective;
        sol["kkt_residual"] = r.kkt_residual;
        sol["max_violation"] = r.max_violation;
        for (auto k : r.active_constraints) active.push_back(p.constraints[k].label);
        json prof = json::array();
        for (const auto& pt : r.profile)
          prof.push_back({{"u", pt.u}, {"objective", pt.objective}});
        sol["profile"] = prof;
        lfd0 = r.lfd0;
        lfd1 = r.lfd1;
      }
      sol["active_constraints"] = active;
      if (!s.u_list.empty())
        sol["u_dependence_metric"] = u_dependence_metric(p, s.u_list);
      robust = likelihood_ratio(*lfd1, *lfd0);
      if (do_verify) report = verify_pair(*lfd0, *lfd1, vopt);
      break;
    }
  }
  sol["mass0"] = lfd0->mass();
  sol["mass1"] = lfd1->mass();

  std::filesystem::create_directories(dir);
  write_density_csv(dir / "lfd0.csv", *lfd0);
  write_density_csv(dir / "lfd1.csv", *lfd1);
  write_lrf_csv(dir / "lrf.csv", g, robust, nominal);
  write_text(dir / "solution.json", sol.dump(2) + "\n");
  RunOutput out{sol, std::nullopt};
  if (report) {
    json v = report_json(*report);
    v["seed"] = s.seed;
    write_text(dir / "verify.json", v.dump(2) + "\n");
    out.verify = v;
  }
  return out;
}

// Multi-run documents write each run into dir/<name>.
inline std::vector<RunOutput> run_document(const std::vector<Scenario>& runs,
                                           const std::filesystem::path& dir,
                                           bool multi, bool force_verify = false) {
  std::vector<RunOutput> out;
  for (const auto& s : runs)
    out.push_back(run_scenario(s, multi ? dir / s.name : dir, force_verify));
  return out;
}

}  // namespace robust_lfd
