// robust-lfd: run scenario configs and presets from the command line.

#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "robust_lfd/scenario.hpp"

namespace fs = std::filesystem;
using namespace robust_lfd;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitInfeasible = 3;
constexpr int kExitConvergence = 4;

int fail(int code, const std::string& kind, const std::string& message,
         const std::string& path = "") {
  json e{{"error", kind}, {"message", message}, {"exit_code", code}};
  if (!path.empty()) e["path"] = path;
  std::cerr << e.dump() << "\n";
  return code;
}

void print_summary(const std::vector<Scenario>& runs,
                   const std::vector<RunOutput>& outs, const fs::path& dir,
                   bool multi) {
  for (std::size_t k = 0; k < runs.size(); ++k) {
    json line{{"run", runs[k].name},
              {"out", (multi ? dir / runs[k].name : dir).string()}};
    const auto& s = outs[k].solution;
    for (const char* key : {"t_l", "t_u", "band_type", "k1", "k2", "u_star", "objective"})
      if (s.contains(key)) line[key] = s[key];
    std::cout << line.dump() << "\n";
  }
}

int execute(const json& doc, const fs::path& base_dir, const fs::path& out,
            bool force_verify) {
  auto runs = parse_document(doc, base_dir);
  apply_seed_override(runs);
  const bool multi = doc.contains("runs");
  const auto outs = run_document(runs, out, multi, force_verify);
  print_summary(runs, outs, out, multi);
  return 0;
}

int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    return fail(kExitConfig, "config", e.what(), e.path().empty() ? "/" : e.path());
  } catch (const ParameterError& e) {
    return fail(kExitConfig, "parameter", e.what());
  } catch (const DimensionError& e) {
    return fail(kExitConfig, "dimension", e.what());
  } catch (const DomainError& e) {
    return fail(kExitConfig, "domain", e.what());
  } catch (const InfeasibleClassError& e) {
    json j{{"error", "infeasible_class"}, {"message", e.what()},
           {"hint", e.hint()}, {"exit_code", kExitInfeasible}};
    std::cerr << j.dump() << "\n";
    return kExitInfeasible;
  } catch (const ClassOverlapError& e) {
    return fail(kExitInfeasible, "class_overlap", e.what());
  } catch (const DegenerateDensityError& e) {
    return fail(kExitInfeasible, "degenerate_density", e.what());
  } catch (const ConvergenceError& e) {
    return fail(kExitConvergence, "convergence", e.what());
  } catch (const std::exception& e) {
    return fail(1, "internal", e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Least favorable distributions and minimax robust tests"};
  app.require_subcommand(1);

  std::string config, run_out, verify_out, preset_out, preset;
  auto* run = app.add_subcommand("run", "Solve the scenario(s) in a JSON config");
  run->add_option("config", config, "Config file")->required();
  run->add_option("--out", run_out, "Output directory")->default_val("robust_lfd_out");

  auto* verify = app.add_subcommand("verify", "Solve and write verify.json");
  verify->add_option("config", config, "Config file")->required();
  verify->add_option("--out", verify_out, "Output directory")->default_val("robust_lfd_out");

  auto* pre = app.add_subcommand("preset", "Emit a preset config and run it");
  pre->add_option("name", preset, "Preset name")->required();
  pre->add_option("--out", preset_out, "Output directory");

  auto* list = app.add_subcommand("list-presets", "List the preset catalogue");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  if (list->parsed()) {
    for (const auto& n : preset_names())
      std::cout << n << "\t" << preset_description(n) << "\n";
    return 0;
  }
  if (run->parsed() || verify->parsed()) {
    const bool force = verify->parsed();
    return guarded([&] {
      const fs::path p = config;
      return execute(load_json_file(p), p.parent_path(), force ? verify_out : run_out,
                   force);
    });
  }
  return guarded([&] {
    const json doc = preset_config(preset);
    const fs::path dir = preset_out.empty() ? fs::path("preset_" + preset) : fs::path(preset_out);
    fs::create_directories(dir);
    write_text(dir / "config.json", doc.dump(2) + "\n");
    return execute(doc, dir, dir, false);
  });
}
