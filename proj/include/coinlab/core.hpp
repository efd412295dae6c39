#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace coinlab {

/// Picoseconds since run start. Internal time is never kept in instrument ticks.
using Picoseconds = std::int64_t;

inline constexpr Picoseconds kPicosecondsPerSecond = 1'000'000'000'000;
inline constexpr Picoseconds kDefaultTickPs = 75;

enum class Side : std::uint8_t { Alice = 0, Bob = 1 };

constexpr std::string_view to_string(Side side) {
  return side == Side::Alice ? "Alice" : "Bob";
}

constexpr Side other(Side side) {
  return side == Side::Alice ? Side::Bob : Side::Alice;
}

/// (setting, detector) packed as setting + 2 * detector.
class SymbolCode {
 public:
  constexpr SymbolCode() = default;
  constexpr SymbolCode(std::uint8_t setting, std::uint8_t detector)
      : value_(static_cast<std::uint8_t>((setting & 1u) + 2u * (detector & 1u))) {}

  static constexpr SymbolCode from_value(std::uint8_t value) {
    return SymbolCode(value & 1u, (value >> 1) & 1u);
  }

  constexpr std::uint8_t value() const { return value_; }
  constexpr std::uint8_t setting() const { return value_ & 1u; }
  constexpr std::uint8_t detector() const { return value_ >> 1; }
  /// +1 for detector 0, -1 for detector 1.
  constexpr int outcome() const { return detector() == 0 ? +1 : -1; }

  friend constexpr bool operator==(SymbolCode, SymbolCode) = default;

 private:
  std::uint8_t value_ = 0;
};

constexpr SymbolCode symbol_code(std::uint8_t setting, std::uint8_t detector) {
  return SymbolCode(setting, detector);
}

struct EventRecord {
  Picoseconds t_ps = 0;
  std::uint8_t setting = 0;
  std::uint8_t detector = 0;

  constexpr SymbolCode symbol() const { return SymbolCode(setting, detector); }
  friend constexpr bool operator==(const EventRecord&, const EventRecord&) = default;
};

struct RunMetadata {
  std::string run_id;
  Picoseconds tick_ps = kDefaultTickPs;
  Picoseconds duration_ps = 0;

  friend bool operator==(const RunMetadata&, const RunMetadata&) = default;
};

/// One station's time-ordered detector events.
struct EventStream {
  Side side = Side::Alice;
  std::vector<EventRecord> events;
  RunMetadata meta;

  std::size_t size() const { return events.size(); }
  bool empty() const { return events.empty(); }

  friend bool operator==(const EventStream&, const EventStream&) = default;
};

/// Analyzer angles in degrees. The detector bit adds 90 degrees to the
/// setting's base angle.
struct SettingMap {
  std::array<double, 2> alice{0.0, 45.0};
  std::array<double, 2> bob{22.5, 67.5};

  constexpr double base_angle(Side side, std::uint8_t setting) const {
    return side == Side::Alice ? alice[setting & 1u] : bob[setting & 1u];
  }
  constexpr double angle(Side side, SymbolCode code) const {
    return base_angle(side, code.setting()) + 90.0 * code.detector();
  }
};

inline constexpr SettingMap kDefaultSettings{};

/// Alice: 0, 45, 90, 135. Bob: 22.5, 67.5, 112.5, 157.5.
constexpr double angle_of(Side side, SymbolCode code) {
  return kDefaultSettings.angle(side, code);
}

constexpr Picoseconds floor_div(Picoseconds a, Picoseconds b) {
  Picoseconds q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

/// Nearest multiple of tick_ps; exact ties go toward +infinity.
constexpr Picoseconds quantize(Picoseconds t_ps, Picoseconds tick_ps) {
  return floor_div(2 * t_ps + tick_ps, 2 * tick_ps) * tick_ps;
}

inline bool is_sorted_by_time(const std::vector<EventRecord>& events) {
  for (std::size_t i = 1; i < events.size(); ++i) {
    if (events[i].t_ps < events[i - 1].t_ps) return false;
  }
  return true;
}

}  // namespace coinlab
