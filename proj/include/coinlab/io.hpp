#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "coinlab/core.hpp"
#include "coinlab/error.hpp"
#include "coinlab/matcher.hpp"

namespace coinlab {

// Text layout:
//   # side=<Alice|Bob>
//   # run_id=<string>
//   # tick_ps=<int>
//   # duration_ps=<int>          (optional on read)
//   <t_ticks> <setting> <detector>
//
// Binary layout (little endian):
//   16 bytes magic "COINLAB1" zero padded, u32 tick_ps, u32 count,
//   then count x { u64 t_ticks, u8 setting, u8 detector }.

enum class EventFormat { Text, Binary, Auto };

inline constexpr std::array<char, 16> kBinaryMagic{'C', 'O', 'I', 'N', 'L', 'A', 'B', '1',
                                                   0,   0,   0,   0,   0,   0,   0,   0};
inline constexpr std::size_t kBinaryHeaderBytes = 24;
inline constexpr std::size_t kBinaryRecordBytes = 10;

struct ReadOptions {
  EventFormat format = EventFormat::Auto;
  bool allow_unsorted = false;
  /// Side assumed when the file does not declare one (binary files never do).
  Side side = Side::Alice;
};

namespace detail {

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorCode::IoFailure, "read failed on " + path.string());
  return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw Error(ErrorCode::IoFailure, "write failed on " + path.string());
}

template <typename Int>
bool parse_int(std::string_view text, Int& value) {
  if (text.empty()) return false;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  return ec == std::errc() && ptr == end;
}

template <typename Int>
void put_le(std::string& out, Int value) {
  using U = std::make_unsigned_t<Int>;
  U v = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>(v & 0xFFu));
    v = static_cast<U>(v >> 8);
  }
}

template <typename U>
U get_le(const char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    v |= static_cast<U>(static_cast<unsigned char>(p[i])) << (8 * i);
  }
  return v;
}

inline void append_int(std::string& out, std::int64_t value) {
  char buf[24];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  out.append(buf, ptr);
}

inline Picoseconds ticks_to_ps(std::uint64_t ticks, Picoseconds tick_ps, const std::string& where) {
  if (ticks > static_cast<std::uint64_t>(std::numeric_limits<Picoseconds>::max() / tick_ps)) {
    throw Error(ErrorCode::MalformedRecord, where + ": timestamp overflows 64-bit picoseconds");
  }
  return static_cast<Picoseconds>(ticks) * tick_ps;
}

/// Sorted check plus the no-duplicate (t, detector) rule.
inline void validate_order(EventStream& s, bool allow_unsorted, const std::string& origin) {
  if (!is_sorted_by_time(s.events)) {
    if (!allow_unsorted) {
      for (std::size_t i = 1; i < s.events.size(); ++i) {
        if (s.events[i].t_ps < s.events[i - 1].t_ps) {
          throw Error(ErrorCode::NonMonotonic,
                      origin + ": record " + std::to_string(i) + " is earlier than its predecessor");
        }
      }
    }
    warn(origin + ": records not time ordered; sorting");
    std::stable_sort(s.events.begin(), s.events.end(),
                     [](const EventRecord& x, const EventRecord& y) { return x.t_ps < y.t_ps; });
  }
  for (std::size_t i = 1; i < s.events.size(); ++i) {
    for (std::size_t j = i; j-- > 0 && s.events[j].t_ps == s.events[i].t_ps;) {
      if (s.events[j].detector == s.events[i].detector) {
        throw Error(ErrorCode::MalformedRecord,
                    origin + ": duplicate (t, detector) at record " + std::to_string(i));
      }
    }
  }
}

inline EventStream parse_text(std::string_view bytes, const ReadOptions& opts,
                              const std::string& origin) {
  EventStream s;
  s.side = opts.side;
  s.meta.tick_ps = kDefaultTickPs;
  std::optional<Picoseconds> duration;
  std::vector<std::uint64_t> ticks;

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    ++line_no;
    const std::size_t eol = bytes.find('\n', pos);
    if (eol == std::string_view::npos) {
      throw Error(ErrorCode::TruncatedFile,
                  origin + ":" + std::to_string(line_no) + ": last line lacks LF terminator");
    }
    const std::string_view line = bytes.substr(pos, eol - pos);
    pos = eol + 1;
    const std::string where = origin + ":" + std::to_string(line_no);

    if (!line.empty() && line.front() == '#') {
      std::string_view body = line.substr(1);
      while (!body.empty() && body.front() == ' ') body.remove_prefix(1);
      const std::size_t eq = body.find('=');
      if (eq == std::string_view::npos) continue;  // free comment
      const std::string_view key = body.substr(0, eq);
      const std::string_view value = body.substr(eq + 1);
      if (key == "side") {
        if (value == "Alice") s.side = Side::Alice;
        else if (value == "Bob") s.side = Side::Bob;
        else throw Error(ErrorCode::MalformedRecord, where + ": side must be Alice or Bob");
      } else if (key == "run_id") {
        s.meta.run_id = std::string(value);
      } else if (key == "tick_ps") {
        if (!parse_int(value, s.meta.tick_ps) || s.meta.tick_ps <= 0) {
          throw Error(ErrorCode::MalformedRecord, where + ": tick_ps must be a positive integer");
        }
      } else if (key == "duration_ps") {
        Picoseconds d = 0;
        if (!parse_int(value, d) || d < 0) {
          throw Error(ErrorCode::MalformedRecord, where + ": bad duration_ps");
        }
        duration = d;
      }
      continue;
    }

    const std::size_t s1 = line.find(' ');
    const std::size_t s2 = s1 == std::string_view::npos ? s1 : line.find(' ', s1 + 1);
    if (s1 == std::string_view::npos || s2 == std::string_view::npos ||
        line.find(' ', s2 + 1) != std::string_view::npos) {
      throw Error(ErrorCode::MalformedRecord, where + ": expected '<t_ticks> <setting> <detector>'");
    }
    std::uint64_t t = 0;
    unsigned setting = 0;
    unsigned detector = 0;
    if (!parse_int(line.substr(0, s1), t) || !parse_int(line.substr(s1 + 1, s2 - s1 - 1), setting) ||
        !parse_int(line.substr(s2 + 1), detector)) {
      throw Error(ErrorCode::MalformedRecord, where + ": non-numeric field");
    }
    if (setting > 1 || detector > 1) {
      throw Error(ErrorCode::MalformedRecord, where + ": setting and detector must be 0 or 1");
    }
    ticks.push_back(t);
    s.events.push_back({0, static_cast<std::uint8_t>(setting), static_cast<std::uint8_t>(detector)});
  }

  for (std::size_t i = 0; i < ticks.size(); ++i) {
    s.events[i].t_ps = ticks_to_ps(ticks[i], s.meta.tick_ps, origin);
  }
  validate_order(s, opts.allow_unsorted, origin);
  s.meta.duration_ps = duration ? *duration : (s.events.empty() ? 0 : s.events.back().t_ps);
  return s;
}

inline EventStream parse_binary(std::string_view bytes, const ReadOptions& opts,
                                const std::string& origin) {
  if (bytes.size() < kBinaryMagic.size() ||
      !std::equal(kBinaryMagic.begin(), kBinaryMagic.end(), bytes.begin())) {
    if (bytes.size() < kBinaryMagic.size() &&
        std::equal(bytes.begin(), bytes.end(), kBinaryMagic.begin())) {
      throw Error(ErrorCode::TruncatedFile, origin + ": file ends inside the magic");
    }
    throw Error(ErrorCode::BadMagic, origin + ": missing COINLAB1 magic");
  }
  if (bytes.size() < kBinaryHeaderBytes) {
    throw Error(ErrorCode::TruncatedFile, origin + ": header shorter than 24 bytes");
  }
  const auto tick = get_le<std::uint32_t>(bytes.data() + 16);
  const auto count = get_le<std::uint32_t>(bytes.data() + 20);
  if (tick == 0) throw Error(ErrorCode::MalformedRecord, origin + ": tick_ps is zero");
  const std::size_t expected = kBinaryHeaderBytes + kBinaryRecordBytes * std::size_t{count};
  if (bytes.size() < expected) {
    throw Error(ErrorCode::TruncatedFile, origin + ": expected " + std::to_string(expected) +
                                              " bytes, found " + std::to_string(bytes.size()));
  }
  if (bytes.size() > expected) {
    throw Error(ErrorCode::MalformedRecord, origin + ": trailing bytes after last record");
  }

  EventStream s;
  s.side = opts.side;
  s.meta.tick_ps = tick;
  s.events.resize(count);
  const char* p = bytes.data() + kBinaryHeaderBytes;
  for (std::uint32_t i = 0; i < count; ++i, p += kBinaryRecordBytes) {
    const std::string where = origin + "@" + std::to_string(kBinaryHeaderBytes + i * kBinaryRecordBytes);
    const auto setting = static_cast<unsigned char>(p[8]);
    const auto detector = static_cast<unsigned char>(p[9]);
    if (setting > 1 || detector > 1) {
      throw Error(ErrorCode::MalformedRecord, where + ": setting and detector must be 0 or 1");
    }
    s.events[i] = {ticks_to_ps(get_le<std::uint64_t>(p), tick, where), setting, detector};
  }
  validate_order(s, opts.allow_unsorted, origin);
  s.meta.duration_ps = s.events.empty() ? 0 : s.events.back().t_ps;
  return s;
}

inline std::uint64_t ps_to_ticks(const EventRecord& e, Picoseconds tick_ps) {
  if (e.t_ps < 0 || e.t_ps % tick_ps != 0) {
    throw Error(ErrorCode::MalformedRecord,
                "timestamp " + std::to_string(e.t_ps) + " ps is not a non-negative tick multiple");
  }
  return static_cast<std::uint64_t>(e.t_ps / tick_ps);
}

}  // namespace detail

inline EventFormat detect_format(std::string_view bytes) {
  const std::size_t n = std::min(bytes.size(), std::size_t{8});
  return n > 0 && std::equal(bytes.begin(), bytes.begin() + n, kBinaryMagic.begin())
             ? EventFormat::Binary
             : EventFormat::Text;
}

inline EventStream decode_events(std::string_view bytes, const ReadOptions& opts = {},
                                 const std::string& origin = "<memory>") {
  EventFormat fmt = opts.format == EventFormat::Auto ? detect_format(bytes) : opts.format;
  return fmt == EventFormat::Binary ? detail::parse_binary(bytes, opts, origin)
                                    : detail::parse_text(bytes, opts, origin);
}

inline EventStream read_events(const std::filesystem::path& path, const ReadOptions& opts = {}) {
  return decode_events(detail::read_file_bytes(path), opts, path.string());
}

inline std::string encode_events(const EventStream& stream, EventFormat format) {
  const Picoseconds tick = stream.meta.tick_ps;
  if (tick <= 0) throw Error(ErrorCode::ConfigInvalid, "tick_ps must be positive");
  std::string out;
  if (format == EventFormat::Binary) {
    if (tick > std::numeric_limits<std::uint32_t>::max() ||
        stream.events.size() > std::numeric_limits<std::uint32_t>::max()) {
      throw Error(ErrorCode::ConfigInvalid, "stream does not fit the binary header fields");
    }
    out.reserve(kBinaryHeaderBytes + kBinaryRecordBytes * stream.events.size());
    out.append(kBinaryMagic.data(), kBinaryMagic.size());
    detail::put_le(out, static_cast<std::uint32_t>(tick));
    detail::put_le(out, static_cast<std::uint32_t>(stream.events.size()));
    for (const EventRecord& e : stream.events) {
      detail::put_le(out, detail::ps_to_ticks(e, tick));
      out.push_back(static_cast<char>(e.setting));
      out.push_back(static_cast<char>(e.detector));
    }
    return out;
  }
  out.reserve(64 + 16 * stream.events.size());
  out += "# side=";
  out += to_string(stream.side);
  out += "\n# run_id=";
  out += stream.meta.run_id;
  out += "\n# tick_ps=";
  detail::append_int(out, tick);
  out += "\n# duration_ps=";
  detail::append_int(out, stream.meta.duration_ps);
  out += '\n';
  for (const EventRecord& e : stream.events) {
    detail::append_int(out, static_cast<std::int64_t>(detail::ps_to_ticks(e, tick)));
    out += ' ';
    out += static_cast<char>('0' + e.setting);
    out += ' ';
    out += static_cast<char>('0' + e.detector);
    out += '\n';
  }
  return out;
}

inline void write_events(const EventStream& stream, const std::filesystem::path& path,
                         EventFormat format) {
  if (format == EventFormat::Auto) format = EventFormat::Text;
  detail::write_file_bytes(path, encode_events(stream, format));
}

inline std::string coincidences_csv(const CoincidenceSet& set) {
  std::string out = "t_a_ps,delta_ps,symbol_a,symbol_b,multiple\n";
  out.reserve(out.size() + 32 * set.records.size());
  for (const CoincidenceRecord& r : set.records) {
    detail::append_int(out, r.t_ps);
    out += ',';
    detail::append_int(out, r.delta_ps);
    out += ',';
    out += static_cast<char>('0' + r.symbol_a.value());
    out += ',';
    out += static_cast<char>('0' + r.symbol_b.value());
    out += ',';
    out += r.multiple ? '1' : '0';
    out += '\n';
  }
  return out;
}

inline void write_coincidences_csv(const CoincidenceSet& set, const std::filesystem::path& path) {
  detail::write_file_bytes(path, coincidences_csv(set));
}

}  // namespace coinlab
