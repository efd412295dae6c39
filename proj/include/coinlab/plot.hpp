#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "coinlab/bell.hpp"
#include "coinlab/core.hpp"
#include "coinlab/error.hpp"
#include "coinlab/io.hpp"
#include "coinlab/matcher.hpp"

namespace coinlab {

// Palette, indexed by symbol code; multiples are black.
inline constexpr std::array<const char*, 4> kSymbolColors{"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
inline constexpr const char* kMultipleColor = "#000000";

/// Symbol 0 square, 1 diamond, 2 cross, 3 "x"; multiples are drawn as "M".
struct ScatterSpec {
  double t_min_s = 0.0;
  double t_max_s = 2.0;
  double delta_min_ns = -3.0;
  double delta_max_ns = 3.0;
  Side glyph_side = Side::Alice;  ///< whose symbol picks the glyph

  void validate() const {
    if (!(t_max_s > t_min_s) || !(delta_max_ns > delta_min_ns)) {
      throw Error(ErrorCode::ConfigInvalid, "scatter ranges must be non-degenerate");
    }
  }
};

struct PlotFrame {
  static constexpr double width = 900.0;
  static constexpr double height = 520.0;
  static constexpr double left = 70.0;
  static constexpr double right = 20.0;
  static constexpr double top = 30.0;
  static constexpr double bottom = 50.0;
  static constexpr double plot_w = width - left - right;
  static constexpr double plot_h = height - top - bottom;
};

struct SvgPoint {
  double x;
  double y;
};

inline SvgPoint scatter_position(const ScatterSpec& spec, double t_s, double delta_ns) {
  return {PlotFrame::left + (t_s - spec.t_min_s) / (spec.t_max_s - spec.t_min_s) * PlotFrame::plot_w,
          PlotFrame::top +
              (spec.delta_max_ns - delta_ns) / (spec.delta_max_ns - spec.delta_min_ns) * PlotFrame::plot_h};
}

inline bool in_scatter_range(const ScatterSpec& spec, const CoincidenceRecord& r) {
  const double t_s = static_cast<double>(r.t_ps) / static_cast<double>(kPicosecondsPerSecond);
  const double d_ns = static_cast<double>(r.delta_ps) / 1000.0;
  return t_s >= spec.t_min_s && t_s <= spec.t_max_s && d_ns >= spec.delta_min_ns &&
         d_ns <= spec.delta_max_ns;
}

inline std::string render_scatter_svg(const CoincidenceSet& set, const ScatterSpec& spec) {
  spec.validate();
  using F = PlotFrame;
  std::string out;
  out.reserve(4096 + 48 * set.records.size());
  out += fmt::format(
      "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      "<svg xmlns=\"http://www.w3.org/2000/svg\" xmlns:xlink=\"http://www.w3.org/1999/xlink\" "
      "version=\"1.1\" width=\"{:.0f}\" height=\"{:.0f}\" viewBox=\"0 0 {:.0f} {:.0f}\">\n",
      F::width, F::height, F::width, F::height);
  out += "<style>\n";
  for (int s = 0; s < 4; ++s) {
    out += fmt::format(".s{} {{ stroke: {}; fill: none; stroke-width: 0.8; }}\n", s, kSymbolColors[s]);
  }
  out += fmt::format(".m {{ fill: {}; font: 7px sans-serif; text-anchor: middle; }}\n", kMultipleColor);
  out += ".axis { stroke: #000; fill: none; stroke-width: 1; }\n"
         ".label { font: 12px sans-serif; fill: #000; }\n"
         ".tick { font: 10px sans-serif; fill: #000; }\n</style>\n";
  out += "<defs>\n"
         "<rect id=\"g0\" x=\"-2.5\" y=\"-2.5\" width=\"5\" height=\"5\"/>\n"
         "<polygon id=\"g1\" points=\"0,-3 3,0 0,3 -3,0\"/>\n"
         "<path id=\"g2\" d=\"M-3 0H3M0 -3V3\"/>\n"
         "<path id=\"g3\" d=\"M-2.5 -2.5L2.5 2.5M-2.5 2.5L2.5 -2.5\"/>\n"
         "</defs>\n";

  out += fmt::format("<rect class=\"axis\" x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\"/>\n",
                     F::left, F::top, F::plot_w, F::plot_h);
  constexpr int kTicks = 5;
  for (int k = 0; k <= kTicks; ++k) {
    const double t = spec.t_min_s + (spec.t_max_s - spec.t_min_s) * k / kTicks;
    const double x = scatter_position(spec, t, spec.delta_min_ns).x;
    out += fmt::format("<path class=\"axis\" d=\"M{:.2f} {:.2f}v5\"/><text class=\"tick\" x=\"{:.2f}\" "
                       "y=\"{:.2f}\" text-anchor=\"middle\">{:g}</text>\n",
                       x, F::top + F::plot_h, x, F::top + F::plot_h + 17, t);
    const double d = spec.delta_min_ns + (spec.delta_max_ns - spec.delta_min_ns) * k / kTicks;
    const double y = scatter_position(spec, spec.t_min_s, d).y;
    out += fmt::format("<path class=\"axis\" d=\"M{:.2f} {:.2f}h-5\"/><text class=\"tick\" x=\"{:.2f}\" "
                       "y=\"{:.2f}\" text-anchor=\"end\">{:g}</text>\n",
                       F::left, y, F::left - 8, y + 3, d);
  }
  out += fmt::format("<text class=\"label\" x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">t (s)</text>\n",
                     F::left + F::plot_w / 2, F::height - 10);
  out += fmt::format(
      "<text class=\"label\" transform=\"translate(16 {:.2f}) rotate(-90)\" text-anchor=\"middle\">"
      "t_self - t_other (ns), {} perspective</text>\n",
      F::top + F::plot_h / 2, to_string(set.perspective));

  for (const CoincidenceRecord& r : set.records) {
    if (!in_scatter_range(spec, r)) continue;
    const SvgPoint p = scatter_position(
        spec, static_cast<double>(r.t_ps) / static_cast<double>(kPicosecondsPerSecond),
        static_cast<double>(r.delta_ps) / 1000.0);
    if (r.multiple) {
      out += fmt::format("<text class=\"m\" x=\"{:.2f}\" y=\"{:.2f}\">M</text>\n", p.x, p.y + 2.5);
    } else {
      const int s = (spec.glyph_side == Side::Alice ? r.symbol_a : r.symbol_b).value();
      out += fmt::format("<use xlink:href=\"#g{}\" class=\"s{}\" x=\"{:.2f}\" y=\"{:.2f}\"/>\n", s, s, p.x,
                         p.y);
    }
  }
  out += "</svg>\n";
  return out;
}

inline void scatter_svg(const CoincidenceSet& set, const ScatterSpec& spec,
                        const std::filesystem::path& path) {
  detail::write_file_bytes(path, render_scatter_svg(set, spec));
}

/// Records per nanosecond of |delta| inside (lo_ps, hi_ps], counting both signs.
inline double delta_density_per_ns(const CoincidenceSet& set, Picoseconds lo_ps, Picoseconds hi_ps) {
  if (hi_ps <= lo_ps) throw Error(ErrorCode::ConfigInvalid, "density band must have positive width");
  std::uint64_t n = 0;
  for (const CoincidenceRecord& r : set.records) {
    const Picoseconds d = r.delta_ps < 0 ? -r.delta_ps : r.delta_ps;
    if (d > lo_ps && d <= hi_ps) ++n;
  }
  return static_cast<double>(n) / (2.0 * static_cast<double>(hi_ps - lo_ps) / 1000.0);
}

// ---------------------------------------------------------------------------
// 4x4 histogram grid

inline constexpr Picoseconds kGridWindowPs = 3'000;
inline constexpr Picoseconds kGridBinPs = 60;

/// One delta histogram per (symbol_a, symbol_b) over [-window/2, window/2).
struct HistogramGrid {
  Side perspective = Side::Alice;
  Picoseconds window_ps = kGridWindowPs;
  Picoseconds bin_ps = kGridBinPs;
  std::array<std::array<std::vector<std::uint64_t>, 4>, 4> counts;
  std::optional<BellReport> bell;

  std::size_t bins() const { return static_cast<std::size_t>(window_ps / bin_ps); }
  Picoseconds lower_edge() const { return -window_ps / 2; }
  double bin_center(std::size_t k) const {
    return static_cast<double>(lower_edge()) + (static_cast<double>(k) + 0.5) * static_cast<double>(bin_ps);
  }
  std::uint64_t cell_total(int a, int b) const {
    std::uint64_t n = 0;
    for (std::uint64_t c : counts[a][b]) n += c;
    return n;
  }
  std::uint64_t total() const {
    std::uint64_t n = 0;
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) n += cell_total(a, b);
    return n;
  }
};

inline HistogramGrid empty_grid(Picoseconds window_ps = kGridWindowPs, Picoseconds bin_ps = kGridBinPs) {
  if (bin_ps <= 0 || window_ps <= 0 || window_ps % bin_ps != 0 || window_ps % 2 != 0) {
    throw Error(ErrorCode::ConfigInvalid, "histogram window must be an even multiple of the bin width");
  }
  HistogramGrid grid;
  grid.window_ps = window_ps;
  grid.bin_ps = bin_ps;
  for (auto& row : grid.counts)
    for (auto& cell : row) cell.assign(grid.bins(), 0);
  return grid;
}

/// Bins every non-multiple record whose delta falls inside the window and
/// annotates the grid with CHSH statistics of `pairs` when all four setting
/// classes are populated.
inline HistogramGrid histogram_grid(const CoincidenceSet& set, std::span<const MutualPair> pairs,
                                    Picoseconds window_ps = kGridWindowPs,
                                    Picoseconds bin_ps = kGridBinPs) {
  HistogramGrid grid = empty_grid(window_ps, bin_ps);
  grid.perspective = set.perspective;
  const Picoseconds lo = grid.lower_edge();
  const Picoseconds hi = lo + window_ps;
  for (const CoincidenceRecord& r : set.records) {
    if (r.multiple || r.delta_ps < lo || r.delta_ps >= hi) continue;
    const auto bin = static_cast<std::size_t>((r.delta_ps - lo) / bin_ps);
    ++grid.counts[r.symbol_a.value()][r.symbol_b.value()][bin];
  }
  try {
    grid.bell = bell_report(tally(pairs));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::EmptyClass) throw;
  }
  return grid;
}

inline std::string grid_csv(const HistogramGrid& grid) {
  std::string out = "bin_center_ps";
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) out += fmt::format(",c_a{}b{}", a, b);
  out += '\n';
  for (std::size_t k = 0; k < grid.bins(); ++k) {
    out += fmt::format("{}", grid.bin_center(k));
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) out += fmt::format(",{}", grid.counts[a][b][k]);
    out += '\n';
  }
  return out;
}

inline std::string render_grid_svg(const HistogramGrid& grid) {
  constexpr double cell_w = 200.0;
  constexpr double cell_h = 120.0;
  constexpr double pad = 12.0;
  constexpr double left = 60.0;
  constexpr double top = 60.0;
  const double width = left + 4 * cell_w + 20.0;
  const double height = top + 4 * cell_h + 40.0;

  std::uint64_t peak = 1;
  for (const auto& row : grid.counts)
    for (const auto& cell : row)
      for (std::uint64_t c : cell) peak = std::max(peak, c);

  std::string out;
  out += fmt::format(
      "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{:.0f}\" height=\"{:.0f}\" "
      "viewBox=\"0 0 {:.0f} {:.0f}\">\n",
      width, height, width, height);
  out += "<style>\n.frame { stroke: #000; fill: none; stroke-width: 0.8; }\n"
         ".zero { stroke: #888; stroke-dasharray: 2 2; stroke-width: 0.6; }\n"
         ".bar { fill: #4c72b0; }\n"
         ".label { font: 11px sans-serif; fill: #000; }\n"
         ".title { font: 14px sans-serif; fill: #000; }\n</style>\n";

  std::string title = fmt::format("{} perspective, {} ps window in {} ps bins", to_string(grid.perspective),
                                  grid.window_ps, grid.bin_ps);
  if (grid.bell) {
    title += fmt::format(", S = {:.4f} +- {:.4f}", grid.bell->S, grid.bell->S_error);
  } else {
    title += ", S unavailable";
  }
  out += fmt::format("<text class=\"title\" x=\"{:.0f}\" y=\"24\">{}</text>\n", left, title);

  const double bar_w = (cell_w - 2 * pad) / static_cast<double>(grid.bins());
  for (int a = 0; a < 4; ++a) {
    out += fmt::format("<text class=\"label\" x=\"8\" y=\"{:.2f}\">A{} {:g}&#176;</text>\n",
                       top + a * cell_h + cell_h / 2, a, angle_of(Side::Alice, SymbolCode::from_value(a)));
    for (int b = 0; b < 4; ++b) {
      const double x0 = left + b * cell_w;
      const double y0 = top + a * cell_h;
      if (a == 0) {
        out += fmt::format("<text class=\"label\" x=\"{:.2f}\" y=\"{:.2f}\">B{} {:g}&#176;</text>\n",
                           x0 + pad, top - 8, b, angle_of(Side::Bob, SymbolCode::from_value(b)));
      }
      out += fmt::format("<rect class=\"frame\" x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\"/>\n",
                         x0 + pad / 2, y0 + pad / 2, cell_w - pad, cell_h - pad);
      const double base = y0 + cell_h - pad;
      const double span = cell_h - 2.5 * pad;
      std::string path;
      for (std::size_t k = 0; k < grid.bins(); ++k) {
        const std::uint64_t c = grid.counts[a][b][k];
        if (c == 0) continue;
        const double h = span * static_cast<double>(c) / static_cast<double>(peak);
        path += fmt::format("M{:.2f} {:.2f}h{:.2f}v{:.2f}h{:.2f}z", x0 + pad + bar_w * static_cast<double>(k),
                            base, bar_w, -h, -bar_w);
      }
      if (!path.empty()) out += fmt::format("<path class=\"bar\" d=\"{}\"/>\n", path);
      const double zero_x = x0 + pad + (cell_w - 2 * pad) / 2;
      out += fmt::format("<path class=\"zero\" d=\"M{:.2f} {:.2f}V{:.2f}\"/>\n", zero_x, y0 + pad, base);
      out += fmt::format("<text class=\"label\" x=\"{:.2f}\" y=\"{:.2f}\">{}</text>\n", x0 + cell_w - 60,
                         y0 + pad + 12, grid.cell_total(a, b));
    }
  }
  out += "</svg>\n";
  return out;
}

inline void grid_export(const HistogramGrid& grid, const std::filesystem::path& svg_path,
                        const std::filesystem::path& csv_path) {
  if (!svg_path.empty()) detail::write_file_bytes(svg_path, render_grid_svg(grid));
  if (!csv_path.empty()) detail::write_file_bytes(csv_path, grid_csv(grid));
}

}  // namespace coinlab
