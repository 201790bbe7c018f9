// macagg: run scenarios, sweeps and dynamic schedules; build and fit
// parameter-selection datasets.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "macagg/experiment.hpp"

using namespace macagg;
namespace fs = std::filesystem;

namespace {

// Writes to `path`, or stdout for "" and "-".
template <class F>
void emit(const std::string& path, F&& write) {
  if (path.empty() || path == "-") {
    write(std::cout);
    return;
  }
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path);
  write(out);
}

struct Common {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> messages;
  std::string out;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "Override the scenario seed");
  app->add_option("--messages", c.messages, "Override the measured message count");
  app->add_option("--out", c.out, "CSV output path (default stdout)");
}

Scenario load(const std::string& path, const Common& c) {
  Scenario s = load_scenario(path);
  if (c.seed) s.seed = *c.seed;
  if (c.messages) {
    if (*c.messages == 0) throw ConfigError("--messages must be at least 1");
    s.messages = *c.messages;
  }
  return s;
}

std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(text)) out.push_back(static_cast<std::size_t>(std::stoul(item)));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MAC aggregation experiments"};
  app.require_subcommand(1);

  // run
  Common run_c;
  std::string run_file, run_timeline, run_delays, run_switches;
  auto* run = app.add_subcommand("run", "Run one scenario; prints a summary row");
  run->add_option("scenario", run_file, "Scenario file")->required()->check(CLI::ExistingFile);
  add_common(run, run_c);
  run->add_option("--timeline", run_timeline, "Per-window timeline CSV");
  run->add_option("--delays", run_delays, "Authentication delay CDF CSV");
  run->add_option("--switches", run_switches, "Switch log CSV");

  // sweep
  Common sweep_c;
  std::string sweep_file;
  auto* sweep = app.add_subcommand("sweep", "Payload x scheme grid over one channel");
  sweep->add_option("config", sweep_file, "Sweep file")->required()->check(CLI::ExistingFile);
  add_common(sweep, sweep_c);

  // dynamic
  Common dyn_c;
  std::string dyn_file, dyn_family, dyn_curves, dyn_summary, dyn_switches, dyn_delays;
  auto* dyn = app.add_subcommand("dynamic", "Adaptive run over a channel schedule; prints the timeline");
  dyn->add_option("schedule", dyn_file, "Schedule file")->required()->check(CLI::ExistingFile);
  add_common(dyn, dyn_c);
  dyn->add_option("--family", dyn_family, "agg, r2d2 or trad (overrides the file)");
  dyn->add_option("--curves", dyn_curves, "Boundary curve CSV (overrides the file)");
  dyn->add_option("--summary", dyn_summary, "Summary CSV");
  dyn->add_option("--switches", dyn_switches, "Switch log CSV");
  dyn->add_option("--delays", dyn_delays, "Authentication delay CDF CSV");

  // traces
  std::size_t tr_count = 100, tr_packets = 4000;
  std::uint64_t tr_seed = 1;
  std::string tr_lengths = "8,16,24,32,48,64,80,96,110", tr_dir;
  auto* traces = app.add_subcommand("traces", "Generate sampled channel traces");
  traces->add_option("--count", tr_count, "Number of traces");
  traces->add_option("--packets", tr_packets, "Packets per trace");
  traces->add_option("--lengths", tr_lengths, "Packet lengths recorded per slot");
  traces->add_option("--seed", tr_seed, "Sampler seed");
  traces->add_option("--out", tr_dir, "Output directory")->required();

  // label
  std::vector<std::string> lb_files;
  std::string lb_family = "agg", lb_payloads = "1,3,5,8,10,15,20,25,30,40,50,60,75,91", lb_out;
  std::size_t lb_count = 100, lb_packets = 4000;
  std::uint64_t lb_seed = 1;
  auto* label = app.add_subcommand("label", "Label the best scheme per (payload, trace) for one family");
  label->add_option("traces", lb_files, "Trace files (default: sample --count traces)")->check(CLI::ExistingFile);
  label->add_option("--family", lb_family, "agg or r2d2");
  label->add_option("--payloads", lb_payloads, "Payload sizes");
  label->add_option("--count", lb_count, "Sampled traces when no files are given");
  label->add_option("--packets", lb_packets, "Packets per sampled trace");
  label->add_option("--seed", lb_seed, "Sampler and run seed");
  label->add_option("--out", lb_out, "Dataset CSV (default stdout)");

  // fit
  std::vector<std::string> fit_files;
  std::string fit_out;
  auto* fit = app.add_subcommand("fit", "Fit boundary curves to labelled datasets");
  fit->add_option("datasets", fit_files, "Dataset CSV files")->required()->check(CLI::ExistingFile);
  fit->add_option("--out", fit_out, "Curve CSV (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const Scenario s = load(run_file, run_c);
      const MetricsReport r = run_scenario(s);
      const std::string scheme = s.scheme ? s.scheme->name() : family_name(*s.family);
      emit(run_c.out, [&](std::ostream& os) {
        write_summary_header(os);
        write_summary_row(os, s.name, scheme, s.payload, r);
      });
      if (!run_timeline.empty()) emit(run_timeline, [&](std::ostream& os) { write_timeline(os, r); });
      if (!run_delays.empty()) emit(run_delays, [&](std::ostream& os) { write_delays(os, r); });
      if (!run_switches.empty()) emit(run_switches, [&](std::ostream& os) { write_switches(os, r); });
    } else if (*sweep) {
      const Scenario s = load(sweep_file, sweep_c);
      const auto rows = run_sweep(s);
      emit(sweep_c.out, [&](std::ostream& os) { write_sweep(os, s.name, rows); });
    } else if (*dyn) {
      Scenario s = load(dyn_file, dyn_c);
      if (!dyn_family.empty()) s.family = parse_family(dyn_family);
      if (!dyn_curves.empty()) s.curves = dyn_curves;
      if (!s.family) throw ConfigError("schedule needs a family");
      s.scheme.reset();
      const MetricsReport r = run_scenario(s);
      emit(dyn_c.out, [&](std::ostream& os) { write_timeline(os, r); });
      if (!dyn_summary.empty()) {
        emit(dyn_summary, [&](std::ostream& os) {
          write_summary_header(os);
          write_summary_row(os, s.name, family_name(*s.family), s.payload, r);
        });
      }
      if (!dyn_switches.empty()) emit(dyn_switches, [&](std::ostream& os) { write_switches(os, r); });
      if (!dyn_delays.empty()) emit(dyn_delays, [&](std::ostream& os) { write_delays(os, r); });
    } else if (*traces) {
      std::vector<double> lengths;
      for (auto l : parse_sizes(tr_lengths)) lengths.push_back(static_cast<double>(l));
      const auto all = generate_traces(tr_count, ChannelSampler{}, lengths, tr_packets, tr_seed);
      fs::create_directories(tr_dir);
      for (std::size_t i = 0; i < all.size(); ++i) {
        std::ostringstream name;
        name << "trace-" << std::setw(4) << std::setfill('0') << i << ".txt";
        emit((fs::path(tr_dir) / name.str()).string(), [&](std::ostream& os) { write_trace(os, all[i]); });
      }
    } else if (*label) {
      const Family fam = parse_family(lb_family);
      if (fam == Family::trad) throw ConfigError("label needs an aggregating family");
      std::vector<LossTrace> ts;
      if (lb_files.empty()) {
        ts = generate_traces(lb_count, ChannelSampler{}, {8, 16, 24, 32, 48, 64, 80, 96, 110}, lb_packets, lb_seed);
      } else {
        for (const auto& f : lb_files) {
          std::ifstream in(f);
          ts.push_back(read_trace(in));
        }
      }
      const auto data = label_optimal(ts, parse_sizes(lb_payloads), family_schemes(fam), lb_seed);
      emit(lb_out, [&](std::ostream& os) { write_dataset(os, data); });
    } else if (*fit) {
      std::vector<BoundaryCurve> curves;
      for (const auto& f : fit_files) {
        std::ifstream in(f);
        const Dataset data = read_dataset(in);
        std::set<Family> fams;
        for (const auto& p : data) {
          if (!p.label.is_trad()) fams.insert(family_of(p.label));
        }
        for (Family fam : fams) {
          const auto fitted = fit_family(data, fam);
          if (fitted.empty()) throw FitError(f + ": no boundary could be fitted for " + family_name(fam));
          curves.insert(curves.end(), fitted.begin(), fitted.end());
        }
      }
      emit(fit_out, [&](std::ostream& os) { write_curves(os, curves); });
    }
  } catch (const Error& e) {
    std::cerr << "macagg: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "macagg: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
