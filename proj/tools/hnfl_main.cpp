#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hnfl/config.hpp"
#include "hnfl/engine.hpp"
#include "hnfl/errors.hpp"

namespace {

using namespace hnfl;

std::string phases_for(Algorithm a) {
  switch (a) {
    case Algorithm::pfedhn: return "personal";
    case Algorithm::pfedhn_g:
    case Algorithm::pfedhn_gd: return "global, personal";
    case Algorithm::fedavg: return "global";
    case Algorithm::local_only: return "local";
  }
  return "";
}

void print_dry_run(const RunConfig& cfg, const std::string& config_path) {
  std::cout << "dry run\n";
  std::cout << "config " << config_path << "\n";
  std::cout << "algorithm " << algorithm_name(cfg.algorithm) << "\n";
  std::cout << "rounds " << cfg.round.rounds << "\n";
  std::cout << "clients " << cfg.clients.count << "\n";
  std::cout << "phases per round: " << phases_for(cfg.algorithm) << "\n";
  std::cout << "seed " << cfg.seed << "\n";
  if (cfg.workers > 0) {
    std::cout << "workers " << cfg.workers << "\n";
  } else {
    std::cout << "workers auto\n";
  }
  std::cout << "no training performed\n";
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot open file for writing: " + path);
  out << content;
  if (!out) throw io_error("failed to write file: " + path);
}

/// Runs rounds [sim.next_round(), cfg.round.rounds] appending rows to csv.
/// Returns the final round's mean accuracy over its last phase.
double drive_rounds(Simulation& sim, const RunConfig& cfg, std::ostream& csv) {
  double final_mean = 0.0;
  while (sim.next_round() <= cfg.round.rounds) {
    RoundMetrics m = sim.run_round();
    for (const auto& row : m.rows) csv << metrics_csv_line(row) << "\n";
    csv.flush();
    final_mean = m.mean_accuracy;
    std::cout << "round " << m.round << "/" << cfg.round.rounds << " mean accuracy "
              << m.mean_accuracy << "\n";
    if (cfg.checkpoint_every > 0 && m.round % cfg.checkpoint_every == 0 &&
        m.round < cfg.round.rounds) {
      sim.save_checkpoint_file(cfg.outputs.checkpoint);
    }
  }
  sim.save_checkpoint_file(cfg.outputs.checkpoint);
  return final_mean;
}

int cmd_run(const std::string& config_path, bool have_seed, std::uint64_t seed_override,
            std::int64_t workers_override, bool dry_run) {
  RunConfig cfg = parse_config(config_path);
  if (have_seed) cfg.seed = seed_override;
  if (workers_override > 0) cfg.workers = workers_override;
  if (dry_run) {
    print_dry_run(cfg, config_path);
    return 0;
  }
  write_text_file(cfg.outputs.resolved_config, emit_resolved_config(cfg));
  Simulation sim(build_simulation_config(cfg));
  std::ofstream csv(cfg.outputs.metrics_csv, std::ios::binary | std::ios::trunc);
  if (!csv) throw io_error("cannot open metrics file for writing: " + cfg.outputs.metrics_csv);
  csv << metrics_csv_header() << "\n";
  double final_mean = drive_rounds(sim, cfg, csv);
  std::printf("final mean personalized accuracy: %.4f\n", final_mean);
  return 0;
}

int cmd_resume(const std::string& checkpoint_path, const std::string& config_path,
               std::int64_t workers_override) {
  RunConfig cfg = parse_config(config_path);
  if (workers_override > 0) cfg.workers = workers_override;
  Simulation sim(build_simulation_config(cfg));
  sim.load_checkpoint_file(checkpoint_path);

  bool write_header = true;
  {
    std::ifstream existing(cfg.outputs.metrics_csv, std::ios::binary);
    if (existing && existing.peek() != std::ifstream::traits_type::eof()) write_header = false;
  }
  std::ofstream csv(cfg.outputs.metrics_csv, std::ios::binary | std::ios::app);
  if (!csv) throw io_error("cannot open metrics file for appending: " + cfg.outputs.metrics_csv);
  if (write_header) csv << metrics_csv_header() << "\n";
  std::cout << "resuming at round " << sim.next_round() << "\n";
  double final_mean = drive_rounds(sim, cfg, csv);
  std::printf("final mean personalized accuracy: %.4f\n", final_mean);
  return 0;
}

int cmd_plot(const std::string& csv_path, std::string out_path) {
  if (out_path.empty()) out_path = csv_path + ".chart";
  std::ifstream in(csv_path, std::ios::binary);
  if (!in) throw io_error("cannot open metrics file: " + csv_path);
  std::string line;
  if (!std::getline(in, line) || line != metrics_csv_header()) {
    throw io_error(csv_path + ": first line is not the expected metrics header");
  }
  // (phase, round) -> accuracy sum and row count
  std::map<std::string, std::map<std::int64_t, std::pair<double, std::int64_t>>> series;
  std::int64_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 7) {
      throw io_error(csv_path + ":" + std::to_string(line_no) + ": expected 7 fields");
    }
    try {
      std::int64_t round = std::stoll(fields[0]);
      double accuracy = std::stod(fields[3]);
      auto& cell = series[fields[1]][round];
      cell.first += accuracy;
      cell.second += 1;
    } catch (const std::exception&) {
      throw io_error(csv_path + ":" + std::to_string(line_no) + ": malformed row");
    }
  }
  std::string base = csv_path;
  std::size_t slash = base.find_last_of('/');
  if (slash != std::string::npos) base = base.substr(slash + 1);
  std::ostringstream chart;
  chart << "line-chart v1\n";
  chart << "title " << base << "\n";
  chart << "x round\n";
  chart << "y mean accuracy\n";
  for (const auto& [phase, points] : series) {
    chart << "series " << phase << "\n";
    for (const auto& [round, cell] : points) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.17g", cell.first / static_cast<double>(cell.second));
      chart << round << " " << buf << "\n";
    }
  }
  chart << "end\n";
  write_text_file(out_path, chart.str());
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"federated hypernetwork simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed_override = 0;
  std::int64_t workers_override = 0;
  bool dry_run = false;
  CLI::App* run = app.add_subcommand("run", "execute an experiment described by a config file");
  run->add_option("config", config_path, "config file path")->required();
  CLI::Option* seed_opt = run->add_option("--seed", seed_override, "override the master seed");
  run->add_option("--workers", workers_override, "worker thread count (default: available cores)");
  run->add_flag("--dry-run", dry_run, "print the planned phases and exit without training");

  std::string checkpoint_path;
  std::string resume_config;
  std::int64_t resume_workers = 0;
  CLI::App* resume = app.add_subcommand("resume", "continue a run from a checkpoint");
  resume->add_option("checkpoint", checkpoint_path, "checkpoint file path")->required();
  resume->add_option("--config", resume_config, "config file of the original run")->required();
  resume->add_option("--workers", resume_workers, "worker thread count");

  std::string csv_path;
  std::string chart_out;
  CLI::App* plot = app.add_subcommand("plot", "render a metrics CSV as a line-chart description");
  plot->add_option("csv", csv_path, "metrics CSV path")->required();
  plot->add_option("--out", chart_out, "output path (default: <csv>.chart)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      return cmd_run(config_path, seed_opt->count() > 0, seed_override, workers_override, dry_run);
    }
    if (resume->parsed()) {
      return cmd_resume(checkpoint_path, resume_config, resume_workers);
    }
    if (plot->parsed()) {
      return cmd_plot(csv_path, chart_out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
