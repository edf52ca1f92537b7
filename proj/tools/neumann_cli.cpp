// neumann: scenario runner.
//
//   neumann run <scenario.json> [--out DIR] [--seed U64] [--threads K]
//   neumann validate <scenario.json>
//   neumann list-builtins
//
// Exit codes: 0 success, 1 parse or validation error, 2 numerical failure (partial report written).

#include "neumann/experiments.hpp"
#include "neumann/scenario.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw neumann::ScenarioError("cannot read '" + path + "'", 0);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
  out << s;
}

int run(const std::string& path, const std::string& out_dir, const std::string& seed, int threads) {
  const std::string text = read_file(path);
  neumann::Scenario sc = neumann::parse_scenario(text);
  if (!seed.empty()) {
    std::uint64_t s = 0;
    try {
      std::size_t used = 0;
      s = std::stoull(seed, &used);
      if (used != seed.size()) throw std::invalid_argument(seed);
    } catch (const std::exception&) {
      throw neumann::ScenarioError("--seed: expected an unsigned 64-bit integer", 0);
    }
    sc.rng_seed = s;
    sc.solver.rng_seed = s;
  }
  if (threads > 0) sc.solver.threads = threads;

  fs::path dir = !out_dir.empty() ? fs::path(out_dir) : !sc.output.empty() ? fs::path(sc.output) : fs::path("out") / sc.name;
  const neumann::RunOutcome res = neumann::run_scenario(sc);
  fs::create_directories(dir);
  write_text(dir / "report.json", res.report.dump(2) + "\n");
  for (const auto& [name, body] : res.files) write_text(dir / name, body);
  const neumann::Json prov = {{"tool", "neumann"},
                              {"version", kVersion},
                              {"scenario_path", path},
                              {"scenario_fnv1a64", fnv1a_hex(text)},
                              {"rng_seed", sc.rng_seed},
                              {"threads", sc.solver.threads},
                              {"finished_utc", utc_now()}};
  write_text(dir / "provenance.json", prov.dump(2) + "\n");

  if (res.numerical_failure) {
    std::cerr << "numerical failure: " << res.error << "\n";
    return 2;
  }
  std::cout << "wrote " << (dir / "report.json").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retarded action functionals: scenario runner"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string path, out_dir, seed;
  int threads = 0;
  auto* run_cmd = app.add_subcommand("run", "run a scenario and write report.json, CSV series and provenance.json");
  run_cmd->add_option("scenario", path, "scenario JSON file")->required();
  run_cmd->add_option("--out", out_dir, "output directory (default: the scenario's output, else out/<name>)");
  run_cmd->add_option("--seed", seed, "override rng_seed");
  run_cmd->add_option("--threads", threads, "worker threads for multistart")->check(CLI::Range(1, 1024));

  std::string vpath;
  auto* val_cmd = app.add_subcommand("validate", "parse and validate a scenario without running it");
  val_cmd->add_option("scenario", vpath, "scenario JSON file")->required();

  auto* list_cmd = app.add_subcommand("list-builtins", "print built-in systems and kernels");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*list_cmd) {
      std::cout << neumann::list_builtins();
      return 0;
    }
    if (*val_cmd) {
      const neumann::Scenario sc = neumann::parse_scenario(read_file(vpath));
      std::cout << vpath << ": ok (" << neumann::experiment_name(sc.experiment) << ")\n";
      return 0;
    }
    return run(path, out_dir, seed, threads);
  } catch (const neumann::ScenarioError& e) {
    std::cerr << (run_cmd->parsed() ? path : vpath) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
