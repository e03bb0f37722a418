// crtperm: permutation inference for cluster randomised trials.
//
//   crtperm analyze --data trial.csv --config config.json --out result.json [--trace trace.csv]
//   crtperm simulate --study study.json --out report.json [--replicates N] [--seed S] [--replicates-csv F]
//
// Exit codes: 0 ok, 1 usage, 2 config/schema error, 3 data error,
// 4 numerical failure, 5 too many failed replicates.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "crtperm/crtperm.hpp"

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kConfig = 2, kData = 3, kNumerical = 4, kReplicates = 5 };

void write_json(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw crtperm::ConfigError("cannot open output file: " + path);
  out << j.dump(2) << '\n';
}

int analyze(const std::string& data, const std::string& config, const std::string& out_path,
            const std::string& trace_path, unsigned threads) {
  const auto cfg = crtperm::load_analysis_config(config);
  const auto ds = crtperm::load_dataset(data, cfg.columns);
  std::optional<crtperm::Method> trace_method;
  if (!trace_path.empty()) {
    const auto methods = crtperm::canonical_methods(cfg.methods);
    const bool rw = std::find(methods.begin(), methods.end(), crtperm::Method::romano_wolf) != methods.end();
    trace_method = rw ? crtperm::Method::romano_wolf : methods.front();
  }
  const auto result = crtperm::run_analysis(ds, cfg, crtperm::resolve_threads(threads), trace_method);
  write_json(out_path, crtperm::analysis_result_json(result, cfg));
  if (!trace_path.empty()) {
    std::ofstream trace(trace_path);
    if (!trace) throw crtperm::ConfigError("cannot open trace file: " + trace_path);
    crtperm::write_trace(trace, result.trace);
  }
  return kOk;
}

int simulate(const std::string& study, const std::string& out_path, std::optional<std::size_t> replicates,
             std::optional<std::uint64_t> seed, const std::string& replicates_csv, unsigned threads) {
  auto cfg = crtperm::load_study_config(study);
  if (replicates) {
    if (*replicates < 1) throw crtperm::ConfigError("--replicates must be at least 1");
    cfg.settings.replicates = *replicates;
  }
  if (seed) cfg.settings.seed = *seed;
  cfg.settings.threads = crtperm::resolve_threads(threads);
  const auto report = crtperm::run_study(cfg.dgp, cfg.settings);
  write_json(out_path, crtperm::simulation_report_json(report));
  if (!replicates_csv.empty()) {
    std::ofstream csv(replicates_csv);
    if (!csv) throw crtperm::ConfigError("cannot open replicate file: " + replicates_csv);
    crtperm::write_replicates_csv(csv, report);
  }
  if (report.too_many_failures()) {
    std::cerr << "error: " << report.failures << " of " << report.replicates << " replicates failed\n";
    for (const auto& m : report.failure_messages) std::cerr << "  " << m << '\n';
    return kReplicates;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Permutation tests and confidence sets for cluster randomised trials with multiple outcomes"};
  app.require_subcommand(1);
  unsigned threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: CRTPERM_THREADS or all cores)");

  std::string data, config, out, trace;
  auto* an = app.add_subcommand("analyze", "Analyse one trial dataset");
  an->add_option("--data", data, "CSV data file")->required();
  an->add_option("--config", config, "JSON analysis config")->required();
  an->add_option("--out", out, "JSON result file")->required();
  an->add_option("--trace", trace, "CSV search trace file");
  an->add_option("--threads", threads, "Worker threads");

  std::string study, sim_out, replicates_csv;
  std::optional<std::size_t> replicates;
  std::optional<std::uint64_t> seed;
  auto* sim = app.add_subcommand("simulate", "Run a simulation study");
  sim->add_option("--study", study, "JSON study file")->required();
  sim->add_option("--out", sim_out, "JSON report file")->required();
  sim->add_option("--replicates", replicates, "Override the number of replicates R");
  sim->add_option("--seed", seed, "Override the study seed");
  sim->add_option("--replicates-csv", replicates_csv, "Per-replicate CSV dump");
  sim->add_option("--threads", threads, "Worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (an->parsed()) return analyze(data, config, out, trace, threads);
    return simulate(study, sim_out, replicates, seed, replicates_csv, threads);
  } catch (const crtperm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const crtperm::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const crtperm::NumericalError& e) {
    std::cerr << "numerical error in " << e.module() << ": " << e.what() << '\n';
    return kNumerical;
  }
}
