#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gsb {

// Base for every error the toolkit throws. Subsystems derive typed errors
// from it so callers can catch by category.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

// 64-bit FNV-1a over raw bytes. Stable across platforms; used for artifact
// stamps and for deriving per-item random streams.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hash_hex(std::uint64_t h);
std::uint64_t hash_file(const std::filesystem::path& path);

// SplitMix64. Used instead of <random> distributions, whose outputs are
// implementation-defined, so seeded runs are reproducible everywhere.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next();
  // Uniform in [0, 1).
  double uniform();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::uint64_t state_;
};

std::uint64_t mix_seed(std::uint64_t seed, std::string_view key);

// UTF-8 <-> code points. Invalid sequences decode to U+FFFD.
std::u32string utf8_to_u32(std::string_view s);
std::string u32_to_utf8(std::u32string_view s);
std::string code_point_to_utf8(char32_t c);

// Nearest integer, ties away from zero. The rounding rule for every
// time -> index conversion.
std::int64_t round_half_away(double x);

// Decimal seconds with a fixed number of fractional digits (default 6).
std::string format_fixed(double x, int digits = 6);

// "19h 42min 13s" style rendering of a wall-clock duration.
std::string format_duration_hms(double seconds);

std::string read_file(const std::filesystem::path& path);
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
// Writes to a sibling temp file and renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

// Builds one JSON object line with a fixed key order and fixed-precision
// decimals, so records serialize byte-identically across runs.
class JsonLine {
 public:
  JsonLine& str(std::string_view key, std::string_view value);
  JsonLine& num(std::string_view key, double value, int digits = 6);
  JsonLine& integer(std::string_view key, std::int64_t value);
  JsonLine& boolean(std::string_view key, bool value);
  // Pre-serialized JSON value (array, object).
  JsonLine& raw(std::string_view key, std::string_view json);
  std::string finish() const { return out_ + "}"; }

 private:
  void key(std::string_view k);
  std::string out_ = "{";
};

std::string json_quote(std::string_view s);

// Structured log: one JSON object per line on stderr.
enum class LogLevel { kDebug, kInfo, kWarn, kError, kOff };
void set_log_level(LogLevel level);
LogLevel log_level();
// `fields` is merged into the record after "level" and "event".
void log_event(LogLevel level, std::string_view event, const JsonLine& fields = JsonLine());

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

}  // namespace gsb
