#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <future>
#include <map>
#include <optional>
#include <sstream>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "coinlab/bell.hpp"
#include "coinlab/calibrate.hpp"
#include "coinlab/config.hpp"
#include "coinlab/core.hpp"
#include "coinlab/error.hpp"
#include "coinlab/io.hpp"
#include "coinlab/matcher.hpp"
#include "coinlab/plot.hpp"
#include "coinlab/synth.hpp"

namespace coinlab::cli {

// Exit statuses.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitData = 4;

inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigInvalid:
      return kExitConfig;
    case ErrorCode::IoFailure:
    case ErrorCode::MalformedRecord:
    case ErrorCode::NonMonotonic:
    case ErrorCode::BadMagic:
    case ErrorCode::TruncatedFile:
      return kExitIo;
    case ErrorCode::NoPeak:
    case ErrorCode::InsufficientData:
    case ErrorCode::DegenerateFit:
    case ErrorCode::EmptyClass:
      return kExitData;
  }
  return kExitInternal;
}

struct InputPaths {
  std::filesystem::path a;
  std::filesystem::path b;
  bool allow_unsorted = false;
};

inline std::pair<EventStream, EventStream> load_pair(const InputPaths& in) {
  ReadOptions opts;
  opts.allow_unsorted = in.allow_unsorted;
  opts.side = Side::Alice;
  EventStream a = read_events(in.a, opts);
  opts.side = Side::Bob;
  EventStream b = read_events(in.b, opts);
  a.side = Side::Alice;
  b.side = Side::Bob;
  return {std::move(a), std::move(b)};
}

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    err << "coinlab: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "coinlab: internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}

inline int cmd_synth(const PipelineConfig& cfg, const std::filesystem::path& out_a,
                     const std::filesystem::path& out_b, const std::filesystem::path& out_truth,
                     std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const GeneratedRun run = generate_run(cfg.synth, cfg.artifacts);
    write_events(run.alice, out_a, cfg.format);
    write_events(run.bob, out_b, cfg.format);
    if (!out_truth.empty()) detail::write_file_bytes(out_truth, ground_truth_text(run.truth));
    out << fmt::format("synth: {} Alice events, {} Bob events, {} pairs emitted\n", run.alice.size(),
                       run.bob.size(), run.truth.pairs_emitted);
    return kExitOk;
  });
}

inline int cmd_calibrate(const PipelineConfig& cfg, const InputPaths& in,
                         const std::filesystem::path& out_report, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto [a, b] = load_pair(in);
    CalibrationOptions opts;
    opts.window_ps = cfg.window_ps;
    opts.core_ps = cfg.core_ps;
    const std::string report = calibration_report(calibrate(a, b, opts));
    if (!out_report.empty()) detail::write_file_bytes(out_report, report);
    out << report;
    return kExitOk;
  });
}

struct AnalyzeOutputs {
  std::filesystem::path coincidences_csv;
  std::filesystem::path bell_csv;
};

inline int cmd_analyze(const PipelineConfig& cfg, const InputPaths& in, const AnalyzeOutputs& outputs,
                       std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto [a, b] = load_pair(in);
    const MatchResult m = match(a, b, cfg.adjustments, cfg.window_ps);
    const CoincidenceSet& view = cfg.perspective == Side::Alice ? m.alice : m.bob;
    if (!outputs.coincidences_csv.empty()) write_coincidences_csv(view, outputs.coincidences_csv);
    out << fmt::format("events: Alice {} Bob {}\n", a.size(), b.size());
    out << fmt::format("multiple coincidences ({} perspective): {}\n", to_string(view.perspective),
                       view.multiple_count());
    out << fmt::format("mutual pairs within {} ps: {}\n", cfg.window_ps, m.pairs.size());
    const BellReport report = bell_report(tally(m.pairs));
    out << format_bell_table(report);
    if (!outputs.bell_csv.empty()) detail::write_file_bytes(outputs.bell_csv, bell_csv(report));
    return kExitOk;
  });
}

struct PlotOutputs {
  std::filesystem::path scatter_svg;
  std::filesystem::path grid_svg;
  std::filesystem::path grid_csv;
};

inline void render_plots(const PipelineConfig& cfg, const MatchResult& m, const PlotOutputs& outputs) {
  const CoincidenceSet& view = cfg.perspective == Side::Alice ? m.alice : m.bob;
  if (!outputs.scatter_svg.empty()) {
    ScatterSpec spec = cfg.scatter;
    spec.glyph_side = cfg.perspective;
    scatter_svg(view, spec, outputs.scatter_svg);
  }
  if (!outputs.grid_svg.empty() || !outputs.grid_csv.empty()) {
    grid_export(histogram_grid(view, m.pairs, cfg.hist_window_ps, cfg.hist_bin_ps), outputs.grid_svg,
                outputs.grid_csv);
  }
}

inline int cmd_plot(const PipelineConfig& cfg, const InputPaths& in, const PlotOutputs& outputs,
                    std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    cfg.scatter.validate();
    const auto [a, b] = load_pair(in);
    const MatchResult m = match(a, b, cfg.adjustments, cfg.window_ps);
    render_plots(cfg, m, outputs);
    out << fmt::format("plot: {} coincidences, {} mutual pairs\n",
                       (cfg.perspective == Side::Alice ? m.alice : m.bob).records.size(), m.pairs.size());
    return kExitOk;
  });
}

struct RunSummary {
  int exit_code = kExitOk;
  std::string text;
  std::string error;
};

inline std::string format_s(const std::optional<BellReport>& r) {
  return r ? fmt::format("{:.4f} +- {:.4f}", r->S, r->S_error) : std::string("n/a");
}

/// synth -> calibrate -> analyze raw (global offset only) and adjusted -> plot,
/// all files under `dir`.
inline RunSummary pipeline_run(PipelineConfig cfg, const std::filesystem::path& dir) {
  RunSummary summary;
  std::ostringstream err;
  summary.exit_code = guarded(err, [&] {
    std::filesystem::create_directories(dir);
    const GeneratedRun run = generate_run(cfg.synth, cfg.artifacts);
    const char* ext = cfg.format == EventFormat::Binary ? ".bin" : ".txt";
    write_events(run.alice, dir / (std::string("alice") + ext), cfg.format);
    write_events(run.bob, dir / (std::string("bob") + ext), cfg.format);
    detail::write_file_bytes(dir / "truth.txt", ground_truth_text(run.truth));

    CalibrationOptions copts;
    copts.window_ps = cfg.window_ps;
    copts.core_ps = cfg.core_ps;
    const CalibrationResult cal = calibrate(run.alice, run.bob, copts);
    detail::write_file_bytes(dir / "calibration.txt", calibration_report(cal));

    AdjustmentSet raw;
    raw.offset_ps = cal.coarse_offset_ps;
    const MatchResult m_raw = match(run.alice, run.bob, raw, cfg.window_ps);
    const MatchResult m_adj = match(run.alice, run.bob, cal.adjustments, cfg.window_ps);

    auto report_of = [](const MatchResult& m) -> std::optional<BellReport> {
      try {
        return bell_report(tally(m.pairs));
      } catch (const Error& e) {
        if (e.code() != ErrorCode::EmptyClass) throw;
        return std::nullopt;
      }
    };
    const auto s_raw = report_of(m_raw);
    const auto s_adj = report_of(m_adj);

    const CoincidenceSet& view = cfg.perspective == Side::Alice ? m_adj.alice : m_adj.bob;
    write_coincidences_csv(view, dir / "coincidences.csv");
    if (s_adj) detail::write_file_bytes(dir / "bell.csv", bell_csv(*s_adj));
    render_plots(cfg, m_adj, {dir / "scatter.svg", dir / "grid.svg", dir / "grid.csv"});

    const AdjustmentSet& adj = cal.adjustments;
    summary.text = fmt::format(
        "run_id = {}\nseed = {}\nevents_a = {}\nevents_b = {}\nmutual_pairs_raw = {}\nmutual_pairs_adjusted = {}\n"
        "offset_ps = {:.1f}\ndrift_ps_per_s = {:.2f}\ndelay_a = {:.1f},{:.1f}\ndelay_b = {:.1f},{:.1f}\n"
        "S_raw = {}\nS_adjusted = {}\n",
        cfg.synth.run_id, cfg.synth.seed, run.alice.size(), run.bob.size(), m_raw.pairs.size(),
        m_adj.pairs.size(), adj.offset_ps, adj.drift_ps_per_s, adj.delay_a[0], adj.delay_a[1], adj.delay_b[0],
        adj.delay_b[1], format_s(s_raw), format_s(s_adj));
    if (s_raw && s_adj) summary.text += fmt::format("S_difference = {:.4f}\n", s_adj->S - s_raw->S);
    detail::write_file_bytes(dir / "summary.txt", summary.text);
    return s_adj ? kExitOk : kExitData;
  });
  summary.error = err.str();
  return summary;
}

inline int cmd_pipeline(const PipelineConfig& cfg, const std::filesystem::path& out_dir, int runs,
                        std::ostream& out, std::ostream& err) {
  if (runs < 1) {
    err << "coinlab: --runs must be >= 1\n";
    return kExitConfig;
  }
  std::vector<std::future<RunSummary>> jobs;
  for (int k = 0; k < runs; ++k) {
    PipelineConfig run_cfg = cfg;
    run_cfg.synth.seed = cfg.synth.seed + static_cast<std::uint64_t>(k);
    const std::filesystem::path dir = runs == 1 ? out_dir : out_dir / fmt::format("run_{:03d}", k);
    jobs.push_back(std::async(std::launch::async, pipeline_run, run_cfg, dir));
  }
  int worst = kExitOk;
  for (int k = 0; k < runs; ++k) {
    const RunSummary s = jobs[static_cast<std::size_t>(k)].get();
    if (runs > 1) out << fmt::format("[run {}]\n", k);
    out << s.text;
    err << s.error;
    worst = std::max(worst, s.exit_code);
  }
  return worst;
}

inline std::string flag_name(std::string_view key) {
  std::string flag = "--";
  for (char c : key) flag += c == '_' ? '-' : c;
  return flag;
}

/// Parses argv and dispatches to a sub-command. Configuration precedence:
/// built-in defaults, then the file named by --config (or $COINLAB_CONFIG),
/// then individual flags.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"coinlab: coincidence timing analysis for two-station event streams"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every sub-command");

  std::string config_path;
  app.add_option("--config", config_path, "key = value configuration file");
  std::map<std::string, std::string> flag_values;
  std::map<std::string, CLI::Option*> flag_options;
  for (const ConfigKey& key : config_keys()) {
    const std::string name(key.name);
    flag_options[name] = app.add_option(flag_name(key.name), flag_values[name], std::string(key.help));
  }

  InputPaths in;
  auto add_inputs = [&](CLI::App* sub) {
    sub->add_option("--in-a", in.a, "Alice event file")->required();
    sub->add_option("--in-b", in.b, "Bob event file")->required();
    sub->add_flag("--allow-unsorted", in.allow_unsorted, "sort out-of-order input instead of failing");
  };
  std::string adjustments_path;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic run");
  std::filesystem::path out_a = "alice.txt", out_b = "bob.txt", out_truth = "truth.txt";
  synth->add_option("--out-a", out_a, "Alice event file");
  synth->add_option("--out-b", out_b, "Bob event file");
  synth->add_option("--truth", out_truth, "ground truth report");

  CLI::App* calibrate_cmd = app.add_subcommand("calibrate", "estimate offset, drift and detector delays");
  add_inputs(calibrate_cmd);
  std::filesystem::path report_path;
  calibrate_cmd->add_option("--out", report_path, "write the adjustment report here as well");

  CLI::App* analyze = app.add_subcommand("analyze", "coincidences and CHSH statistics");
  add_inputs(analyze);
  analyze->add_option("--adjustments", adjustments_path, "adjustment report from calibrate");
  AnalyzeOutputs analyze_out{"coincidences.csv", {}};
  analyze->add_option("--csv", analyze_out.coincidences_csv, "coincidence table");
  analyze->add_option("--bell-csv", analyze_out.bell_csv, "correlation table");

  CLI::App* plot = app.add_subcommand("plot", "scatter and histogram-grid figures");
  add_inputs(plot);
  plot->add_option("--adjustments", adjustments_path, "adjustment report from calibrate");
  PlotOutputs plot_out;
  plot->add_option("--scatter", plot_out.scatter_svg, "scatter SVG");
  plot->add_option("--grid-svg", plot_out.grid_svg, "histogram grid SVG");
  plot->add_option("--grid-csv", plot_out.grid_csv, "histogram grid CSV");

  CLI::App* pipeline = app.add_subcommand("pipeline", "synth, calibrate, analyze and plot in one go");
  std::filesystem::path out_dir = "coinlab_out";
  int runs = 1;
  pipeline->add_option("--out-dir", out_dir, "output directory");
  pipeline->add_option("--runs", runs, "independent runs with consecutive seeds");

  for (CLI::App* sub : {synth, calibrate_cmd, analyze, plot, pipeline}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "coinlab: " << e.what() << '\n';
    return kExitConfig;
  }

  PipelineConfig cfg;
  const int config_status = guarded(err, [&] {
    std::string path = config_path;
    if (path.empty()) {
      if (const char* env = std::getenv("COINLAB_CONFIG"); env != nullptr) path = env;
    }
    if (!path.empty()) apply_config_file(cfg, path);
    if (!adjustments_path.empty()) {
      try {
        cfg.adjustments = parse_adjustments(read_text_file(adjustments_path), adjustments_path);
      } catch (const Error& e) {
        throw Error(ErrorCode::ConfigInvalid, e.what());
      }
    }
    for (const ConfigKey& key : config_keys()) {
      const std::string name(key.name);
      if (flag_options[name]->count() > 0) key.set(cfg, flag_values[name]);
    }
    return kExitOk;
  });
  if (config_status != kExitOk) return config_status;

  if (synth->parsed()) return cmd_synth(cfg, out_a, out_b, out_truth, out, err);
  if (calibrate_cmd->parsed()) return cmd_calibrate(cfg, in, report_path, out, err);
  if (analyze->parsed()) return cmd_analyze(cfg, in, analyze_out, out, err);
  if (plot->parsed()) return cmd_plot(cfg, in, plot_out, out, err);
  if (pipeline->parsed()) return cmd_pipeline(cfg, out_dir, runs, out, err);
  return kExitConfig;
}

inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("coinlab");
  for (const std::string& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace coinlab::cli
