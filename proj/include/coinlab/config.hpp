#pragma once

#include <array>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "coinlab/calibrate.hpp"
#include "coinlab/core.hpp"
#include "coinlab/error.hpp"
#include "coinlab/io.hpp"
#include "coinlab/matcher.hpp"
#include "coinlab/plot.hpp"
#include "coinlab/synth.hpp"

namespace coinlab {

// Flat `key = value` text. Blank lines and lines starting with '#' are ignored.

using KeyValues = std::vector<std::pair<std::string, std::string>>;

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::string bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  return "key '" + std::string(key) + "': cannot read '" + std::string(value) + "' as " +
         std::string(expected);
}

inline double parse_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (v.empty() || ec != std::errc() || ptr != end) throw Error(ErrorCode::ConfigInvalid, bad_value(key, v, "a number"));
  return out;
}

template <typename Int>
Int parse_integer(std::string_view key, std::string_view v) {
  Int out{};
  if (!parse_int(v, out)) throw Error(ErrorCode::ConfigInvalid, bad_value(key, v, "an integer"));
  return out;
}

inline bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw Error(ErrorCode::ConfigInvalid, bad_value(key, v, "a boolean"));
}

inline std::array<double, 2> parse_pair(std::string_view key, std::string_view v) {
  const std::size_t comma = v.find(',');
  if (comma == std::string_view::npos) throw Error(ErrorCode::ConfigInvalid, bad_value(key, v, "'x,y'"));
  return {parse_double(key, trim(v.substr(0, comma))), parse_double(key, trim(v.substr(comma + 1)))};
}

/// "x" means [-x, x] (or [0, x] when `from_zero`), "a,b" means [a, b].
inline std::array<double, 2> parse_range(std::string_view key, std::string_view v, bool from_zero) {
  if (v.find(',') != std::string_view::npos) return parse_pair(key, v);
  const double x = parse_double(key, v);
  return {from_zero ? 0.0 : -x, x};
}

inline std::string format_pair(const std::array<double, 2>& p) { return fmt::format("{},{}", p[0], p[1]); }

}  // namespace detail

inline KeyValues parse_key_values(std::string_view text, const std::string& origin = "<config>") {
  KeyValues out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t eol = std::min(text.find('\n', pos), text.size());
    const std::string_view line = detail::trim(text.substr(pos, eol - pos));
    pos = eol + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorCode::ConfigInvalid,
                  origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    out.emplace_back(std::string(detail::trim(line.substr(0, eq))),
                     std::string(detail::trim(line.substr(eq + 1))));
  }
  return out;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  return detail::read_file_bytes(path);
}

// ---------------------------------------------------------------------------
// Pipeline configuration

struct PipelineConfig {
  SynthConfig synth;
  ArtifactConfig artifacts;
  AdjustmentSet adjustments;
  Picoseconds window_ps = kDefaultWindowPs;
  Picoseconds core_ps = kDefaultCorePs;
  Side perspective = Side::Alice;
  EventFormat format = EventFormat::Text;
  ScatterSpec scatter;
  Picoseconds hist_window_ps = kGridWindowPs;
  Picoseconds hist_bin_ps = kGridBinPs;
};

struct ConfigKey {
  std::string_view name;
  std::string_view help;
  std::function<void(PipelineConfig&, std::string_view)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

namespace detail {

template <typename Member>
ConfigKey double_key(std::string_view name, std::string_view help, Member member) {
  return {name, help,
          [=](PipelineConfig& c, std::string_view v) { std::invoke(member, c) = parse_double(name, v); },
          [=](const PipelineConfig& c) { return fmt::format("{}", std::invoke(member, c)); }};
}

template <typename Int, typename Member>
ConfigKey int_key(std::string_view name, std::string_view help, Member member) {
  return {name, help,
          [=](PipelineConfig& c, std::string_view v) { std::invoke(member, c) = parse_integer<Int>(name, v); },
          [=](const PipelineConfig& c) { return fmt::format("{}", std::invoke(member, c)); }};
}

template <typename Member>
ConfigKey bool_key(std::string_view name, std::string_view help, Member member) {
  return {name, help,
          [=](PipelineConfig& c, std::string_view v) { std::invoke(member, c) = parse_bool(name, v); },
          [=](const PipelineConfig& c) { return std::string(std::invoke(member, c) ? "true" : "false"); }};
}

template <typename Member>
ConfigKey pair_key(std::string_view name, std::string_view help, Member member) {
  return {name, help,
          [=](PipelineConfig& c, std::string_view v) { std::invoke(member, c) = parse_pair(name, v); },
          [=](const PipelineConfig& c) { return format_pair(std::invoke(member, c)); }};
}

}  // namespace detail

/// Every accepted key. Command line flags are the same names with '-' for '_'.
inline const std::vector<ConfigKey>& config_keys() {
  using detail::bool_key;
  using detail::double_key;
  using detail::int_key;
  using detail::pair_key;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    // generator
    k.push_back(double_key("duration_s", "run length in seconds",
                           [](auto& c) -> auto& { return c.synth.duration_s; }));
    k.push_back(double_key("pair_rate_hz", "photon pair emission rate",
                           [](auto& c) -> auto& { return c.synth.pair_rate_hz; }));
    k.push_back(double_key("efficiency_a", "Alice detection efficiency",
                           [](auto& c) -> auto& { return c.synth.efficiency_a; }));
    k.push_back(double_key("efficiency_b", "Bob detection efficiency",
                           [](auto& c) -> auto& { return c.synth.efficiency_b; }));
    k.push_back(double_key("visibility", "correlation visibility V",
                           [](auto& c) -> auto& { return c.synth.visibility; }));
    k.push_back(double_key("jitter_sigma_ps", "pair time-difference jitter sigma",
                           [](auto& c) -> auto& { return c.synth.jitter_sigma_ps; }));
    k.push_back(double_key("background_rate_hz", "background singles rate per detector",
                           [](auto& c) -> auto& { return c.synth.background_rate_hz; }));
    k.push_back(int_key<Picoseconds>("switch_period_ps", "analyzer setting resample period",
                                     [](auto& c) -> auto& { return c.synth.switch_period_ps; }));
    k.push_back(int_key<Picoseconds>("switch_dead_ps", "events ignored this long after a switch",
                                     [](auto& c) -> auto& { return c.synth.switch_dead_ps; }));
    k.push_back(bool_key("switching_enabled_a", "Alice setting switches randomly",
                         [](auto& c) -> auto& { return c.synth.switching_enabled_a; }));
    k.push_back(bool_key("switching_enabled_b", "Bob setting switches randomly",
                         [](auto& c) -> auto& { return c.synth.switching_enabled_b; }));
    k.push_back(int_key<std::uint64_t>("seed", "random seed", [](auto& c) -> auto& { return c.synth.seed; }));
    k.push_back(int_key<Picoseconds>("tick_ps", "timestamp resolution",
                                     [](auto& c) -> auto& { return c.synth.tick_ps; }));
    k.push_back({"run_id", "run identifier written to event files",
                 [](PipelineConfig& c, std::string_view v) { c.synth.run_id = std::string(v); },
                 [](const PipelineConfig& c) { return c.synth.run_id; }});
    // injected artifacts
    k.push_back(double_key("clock_offset_ps", "injected Bob clock offset",
                           [](auto& c) -> auto& { return c.artifacts.clock_offset_ps; }));
    k.push_back(double_key("drift_ps_per_s", "injected Bob clock drift",
                           [](auto& c) -> auto& { return c.artifacts.drift_ps_per_s; }));
    k.push_back(pair_key("delay_a", "injected Alice detector delays 'd0,d1'",
                         [](auto& c) -> auto& { return c.artifacts.delay_a; }));
    k.push_back(pair_key("delay_b", "injected Bob detector delays 'd0,d1'",
                         [](auto& c) -> auto& { return c.artifacts.delay_b; }));
    k.push_back(double_key("broad_fraction", "fraction of Bob pair events broadened",
                           [](auto& c) -> auto& { return c.artifacts.broad_fraction; }));
    k.push_back(double_key("broad_width_ps", "half width of the broadening shift",
                           [](auto& c) -> auto& { return c.artifacts.broad_width_ps; }));
    // analysis adjustments
    k.push_back(double_key("offset_ps", "adjustment: Bob clock offset",
                           [](auto& c) -> auto& { return c.adjustments.offset_ps; }));
    k.push_back(double_key("adjust_drift_ps_per_s", "adjustment: Bob clock drift",
                           [](auto& c) -> auto& { return c.adjustments.drift_ps_per_s; }));
    k.push_back(pair_key("adjust_delay_a", "adjustment: Alice detector delays",
                         [](auto& c) -> auto& { return c.adjustments.delay_a; }));
    k.push_back(pair_key("adjust_delay_b", "adjustment: Bob detector delays",
                         [](auto& c) -> auto& { return c.adjustments.delay_b; }));
    k.push_back(double_key("t0_ps", "adjustment: drift reference epoch",
                           [](auto& c) -> auto& { return c.adjustments.t0_ps; }));
    // matching
    k.push_back(int_key<Picoseconds>("window_ps", "coincidence window",
                                     [](auto& c) -> auto& { return c.window_ps; }));
    k.push_back(int_key<Picoseconds>("core_ps", "half width of the timing core used in fits",
                                     [](auto& c) -> auto& { return c.core_ps; }));
    k.push_back({"perspective", "alice or bob",
                 [](PipelineConfig& c, std::string_view v) {
                   if (v == "alice" || v == "Alice") c.perspective = Side::Alice;
                   else if (v == "bob" || v == "Bob") c.perspective = Side::Bob;
                   else throw Error(ErrorCode::ConfigInvalid, detail::bad_value("perspective", v, "alice|bob"));
                 },
                 [](const PipelineConfig& c) {
                   return std::string(c.perspective == Side::Alice ? "alice" : "bob");
                 }});
    k.push_back({"format", "event file format written: text or binary",
                 [](PipelineConfig& c, std::string_view v) {
                   if (v == "text") c.format = EventFormat::Text;
                   else if (v == "binary") c.format = EventFormat::Binary;
                   else throw Error(ErrorCode::ConfigInvalid, detail::bad_value("format", v, "text|binary"));
                 },
                 [](const PipelineConfig& c) {
                   return std::string(c.format == EventFormat::Binary ? "binary" : "text");
                 }});
    // plots
    k.push_back({"t_range", "scatter time axis in s: 'max' or 'min,max'",
                 [](PipelineConfig& c, std::string_view v) {
                   const auto r = detail::parse_range("t_range", v, true);
                   c.scatter.t_min_s = r[0];
                   c.scatter.t_max_s = r[1];
                 },
                 [](const PipelineConfig& c) {
                   return detail::format_pair({c.scatter.t_min_s, c.scatter.t_max_s});
                 }});
    k.push_back({"delta_range", "scatter delta axis in ns: 'half' or 'min,max'",
                 [](PipelineConfig& c, std::string_view v) {
                   const auto r = detail::parse_range("delta_range", v, false);
                   c.scatter.delta_min_ns = r[0];
                   c.scatter.delta_max_ns = r[1];
                 },
                 [](const PipelineConfig& c) {
                   return detail::format_pair({c.scatter.delta_min_ns, c.scatter.delta_max_ns});
                 }});
    k.push_back(int_key<Picoseconds>("hist_window_ps", "histogram grid total width",
                                     [](auto& c) -> auto& { return c.hist_window_ps; }));
    k.push_back(int_key<Picoseconds>("hist_bin_ps", "histogram grid bin width",
                                     [](auto& c) -> auto& { return c.hist_bin_ps; }));
    return k;
  }();
  return keys;
}

inline const ConfigKey* find_config_key(std::string_view name) {
  for (const ConfigKey& k : config_keys()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

inline void set_config_value(PipelineConfig& cfg, std::string_view key, std::string_view value) {
  const ConfigKey* k = find_config_key(key);
  if (k == nullptr) throw Error(ErrorCode::ConfigInvalid, "unknown key '" + std::string(key) + "'");
  k->set(cfg, value);
}

inline void apply_config_text(PipelineConfig& cfg, std::string_view text,
                              const std::string& origin = "<config>") {
  for (const auto& [key, value] : parse_key_values(text, origin)) set_config_value(cfg, key, value);
}

inline void apply_config_file(PipelineConfig& cfg, const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigInvalid, std::string("config file: ") + e.what());
  }
  apply_config_text(cfg, text, path.string());
}

inline std::string config_text(const PipelineConfig& cfg) {
  std::string out;
  for (const ConfigKey& k : config_keys()) out += fmt::format("{} = {}\n", k.name, k.get(cfg));
  return out;
}

// ---------------------------------------------------------------------------
// Reports

inline std::string adjustments_text(const AdjustmentSet& adj) {
  return fmt::format(
      "offset_ps = {}\ndrift_ps_per_s = {}\ndelay_a = {}\ndelay_b = {}\nt0_ps = {}\n", adj.offset_ps,
      adj.drift_ps_per_s, detail::format_pair(adj.delay_a), detail::format_pair(adj.delay_b), adj.t0_ps);
}

inline AdjustmentSet parse_adjustments(std::string_view text, const std::string& origin = "<adjustments>") {
  AdjustmentSet adj;
  for (const auto& [key, value] : parse_key_values(text, origin)) {
    if (key == "offset_ps") adj.offset_ps = detail::parse_double(key, value);
    else if (key == "drift_ps_per_s") adj.drift_ps_per_s = detail::parse_double(key, value);
    else if (key == "delay_a") adj.delay_a = detail::parse_pair(key, value);
    else if (key == "delay_b") adj.delay_b = detail::parse_pair(key, value);
    else if (key == "t0_ps") adj.t0_ps = detail::parse_double(key, value);
    else throw Error(ErrorCode::ConfigInvalid, origin + ": unknown key '" + key + "'");
  }
  return adj;
}

inline std::string calibration_report(const CalibrationResult& r) {
  std::string out = "# coinlab calibration (Alice convention, gauge delay_a[0] = delay_b[0] = 0)\n";
  out += fmt::format("# coarse_offset_ps: {}\n", r.coarse_offset_ps);
  out += fmt::format("# last_drift_residual_ps_per_s: {}\n", r.last_drift_residual);
  out += fmt::format("# last_fit_rms_residual_ps: {}\n", r.last_fit.rms_residual_ps);
  out += adjustments_text(r.adjustments);
  return out;
}

inline std::string ground_truth_text(const GroundTruth& t) {
  const ArtifactConfig& a = t.injected;
  return fmt::format(
      "clock_offset_ps = {}\ndrift_ps_per_s = {}\ndelay_a = {}\ndelay_b = {}\nbroad_fraction = {}\n"
      "broad_width_ps = {}\npairs_emitted = {}\npair_events_a = {}\npair_events_b = {}\n"
      "both_detected = {}\nbackground_a = {}\nbackground_b = {}\ndropped_switching_a = {}\n"
      "dropped_switching_b = {}\n",
      a.clock_offset_ps, a.drift_ps_per_s, detail::format_pair(a.delay_a), detail::format_pair(a.delay_b),
      a.broad_fraction, a.broad_width_ps, t.pairs_emitted, t.pair_events_a, t.pair_events_b, t.both_detected,
      t.background_a, t.background_b, t.dropped_switching_a, t.dropped_switching_b);
}

}  // namespace coinlab
