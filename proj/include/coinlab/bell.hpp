#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>

#include <fmt/format.h>

#include "coinlab/core.hpp"
#include "coinlab/error.hpp"
#include "coinlab/matcher.hpp"

namespace coinlab {

struct OutcomeCounts {
  std::uint64_t pp = 0;
  std::uint64_t pm = 0;
  std::uint64_t mp = 0;
  std::uint64_t mm = 0;

  std::uint64_t total() const { return pp + pm + mp + mm; }
  friend bool operator==(const OutcomeCounts&, const OutcomeCounts&) = default;
};

/// Outcome tallies per (setting_a, setting_b). Outcome is +1 for detector 0.
struct SettingCounts {
  std::array<std::array<OutcomeCounts, 2>, 2> by_setting{};

  OutcomeCounts& at(int setting_a, int setting_b) { return by_setting[setting_a][setting_b]; }
  const OutcomeCounts& at(int setting_a, int setting_b) const {
    return by_setting[setting_a][setting_b];
  }
  std::uint64_t total() const {
    std::uint64_t n = 0;
    for (const auto& row : by_setting)
      for (const auto& c : row) n += c.total();
    return n;
  }
  friend bool operator==(const SettingCounts&, const SettingCounts&) = default;
};

inline void count_outcome(SettingCounts& counts, SymbolCode a, SymbolCode b) {
  OutcomeCounts& c = counts.at(a.setting(), b.setting());
  const bool plus_a = a.outcome() > 0;
  const bool plus_b = b.outcome() > 0;
  if (plus_a && plus_b) ++c.pp;
  else if (plus_a) ++c.pm;
  else if (plus_b) ++c.mp;
  else ++c.mm;
}

inline SettingCounts tally(std::span<const MutualPair> pairs) {
  SettingCounts counts;
  for (const MutualPair& p : pairs) count_outcome(counts, p.from_alice.symbol_a, p.from_alice.symbol_b);
  return counts;
}

inline double correlation_E(const SettingCounts& counts, int setting_a, int setting_b) {
  const OutcomeCounts& c = counts.at(setting_a, setting_b);
  const std::uint64_t n = c.total();
  if (n == 0) {
    throw Error(ErrorCode::EmptyClass, "no pairs with settings (" + std::to_string(setting_a) +
                                           "," + std::to_string(setting_b) + ")");
  }
  const double same = static_cast<double>(c.pp + c.mm);
  const double diff = static_cast<double>(c.pm + c.mp);
  return (same - diff) / static_cast<double>(n);
}

/// Binomial standard error of E: sqrt((1 - E^2) / n).
inline double correlation_error(const SettingCounts& counts, int setting_a, int setting_b) {
  const double e = correlation_E(counts, setting_a, setting_b);
  const auto n = static_cast<double>(counts.at(setting_a, setting_b).total());
  return std::sqrt(std::max(0.0, 1.0 - e * e) / n);
}

/// Sign of each term in S. With Alice at 0/45 degrees and Bob at 22.5/67.5
/// degrees the (0,1) pair is the one separated by 67.5 degrees.
inline constexpr std::array<std::array<int, 2>, 2> kChshSigns{{{+1, -1}, {+1, +1}}};

/// S = E(0,0) - E(0,1) + E(1,0) + E(1,1).
inline double chsh_S(const SettingCounts& counts) {
  double s = 0.0;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) s += kChshSigns[i][j] * correlation_E(counts, i, j);
  return s;
}

inline double chsh_error(const SettingCounts& counts) {
  double var = 0.0;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const double e = correlation_error(counts, i, j);
      var += e * e;
    }
  }
  return std::sqrt(var);
}

struct BellReport {
  SettingCounts counts;
  std::array<std::array<double, 2>, 2> E{};
  std::array<std::array<double, 2>, 2> E_error{};
  double S = 0.0;
  double S_error = 0.0;
};

inline BellReport bell_report(const SettingCounts& counts) {
  BellReport r;
  r.counts = counts;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      r.E[i][j] = correlation_E(counts, i, j);
      r.E_error[i][j] = correlation_error(counts, i, j);
    }
  }
  r.S = chsh_S(counts);
  r.S_error = chsh_error(counts);
  return r;
}

inline std::string format_bell_table(const BellReport& r) {
  std::string out = "setting_a setting_b      n++      n+-      n-+      n--        E    err(E)\n";
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const OutcomeCounts& c = r.counts.at(i, j);
      out += fmt::format("{:>9} {:>9} {:>8} {:>8} {:>8} {:>8} {:>+8.4f} {:>9.4f}\n", i, j, c.pp, c.pm,
                         c.mp, c.mm, r.E[i][j], r.E_error[i][j]);
    }
  }
  out += fmt::format("S = {:.4f} +- {:.4f}\n", r.S, r.S_error);
  return out;
}

inline std::string bell_csv(const BellReport& r) {
  std::string out = "setting_a,setting_b,n_pp,n_pm,n_mp,n_mm,E,E_err\n";
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const OutcomeCounts& c = r.counts.at(i, j);
      out += fmt::format("{},{},{},{},{},{},{:.6f},{:.6f}\n", i, j, c.pp, c.pm, c.mp, c.mm, r.E[i][j],
                         r.E_error[i][j]);
    }
  }
  out += fmt::format("S,,,,,,{:.6f},{:.6f}\n", r.S, r.S_error);
  return out;
}

}  // namespace coinlab
