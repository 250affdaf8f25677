#pragma once

#include "evgen/common.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace evgen::dataio {

/// Minutes since 1970-01-01T00:00 (UTC, no leap seconds).
using Minutes = std::int64_t;

/// Parses `YYYY-MM-DDTHH:MM[:SS][Z]` (a space may replace `T`). Seconds must be 0.
std::optional<Minutes> parse_timestamp(std::string_view text);
std::string format_timestamp(Minutes t);

/// Start of the calendar day containing `t`.
Minutes midnight_of(Minutes t);

struct ChargingSession {
  std::string session_id;
  std::string driver_id;
  Minutes start = 0;
  Minutes end = 0;
  /// kW per 15-minute interval of the session; the last interval may be partial.
  std::vector<double> interval_powers;
  std::optional<double> energy_kwh;

  /// Energy implied by the interval powers, prorating a partial last interval.
  double energy() const;
};

/// Empty string when the session satisfies every invariant.
std::string validate(const ChargingSession& s);

struct RowError {
  std::size_t row = 0;  // 1-based line number in the file
  std::string message;
};

struct ParseResult {
  std::vector<ChargingSession> sessions;
  std::vector<RowError> errors;
};

/// Reads the session CSV (`session_id,driver_id,start_iso8601,end_iso8601,powers_kw`).
/// Rows violating session invariants are collected in `errors`; an empty
/// file or a wrong header throws InputError.
ParseResult parse_sessions(std::istream& in);
ParseResult parse_sessions(const std::filesystem::path& path);

void write_sessions(std::ostream& out, const std::vector<ChargingSession>& sessions);

using LoadCurve = std::array<double, kSlots>;

struct CurveResult {
  LoadCurve curve{};
  /// Energy (kWh) that fell outside the 24 h window and was dropped.
  double truncated_kwh = 0.0;
};

/// Places a session on the 96-slot grid of the day starting at `day_origin`.
/// Partial overlaps between session intervals and slots are prorated.
/// Throws InputError when the session lies entirely outside the window.
CurveResult session_to_curve(const ChargingSession& s, Minutes day_origin);

struct NormalizationStats {
  double scale = 1.0;
  std::string scheme = "global-max";

  bool operator==(const NormalizationStats&) const = default;
};

struct LoadCurveDataset {
  Matrix curves;  // N x 96
  std::optional<NormalizationStats> normalization;

  Eigen::Index size() const { return curves.rows(); }
  bool normalized() const { return normalization.has_value(); }
  LoadCurve row(Eigen::Index i) const;
};

LoadCurveDataset make_dataset(const std::vector<LoadCurve>& curves);

/// Divides every entry by the global maximum. Throws on an all-zero or already
/// normalized dataset.
LoadCurveDataset normalize(const LoadCurveDataset& raw);
LoadCurveDataset normalize(const LoadCurveDataset& raw, const NormalizationStats& stats);
LoadCurveDataset denormalize(const LoadCurveDataset& normalized);

struct Split {
  LoadCurveDataset train;
  LoadCurveDataset test;
  std::vector<Eigen::Index> train_rows;
  std::vector<Eigen::Index> test_rows;
};

/// Seeded shuffle, then the first round(ratio * N) rows go to training.
Split split(const LoadCurveDataset& d, double ratio, std::uint64_t seed);

/// Truncated normal: drawn from N(mean, stddev) and clamped into [lo, hi].
struct Distribution {
  double mean = 0.0;
  double stddev = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

struct PopulationMode {
  Distribution start_hours;
  Distribution duration_hours;
  Distribution power_kw;
  double weight = 1.0;
  /// Fraction of the session (at its end) over which power tapers linearly.
  double taper_fraction = 0.0;
  /// Power at the very end of the taper, relative to the plateau power.
  double taper_floor = 1.0;
  /// Relative multiplicative jitter applied to each active slot.
  double jitter = 0.0;
};

struct SyntheticPopulationSpec {
  std::vector<PopulationMode> modes;
  int n_samples = 1;
  std::uint64_t seed = 0;
};

struct SyntheticPopulation {
  LoadCurveDataset data;
  std::vector<int> mode_of_sample;
};

/// Draws curves from a mixture of rectangular or tapered charging shapes.
/// Throws InputError on an empty mode list, bad weights, or n_samples < 1.
SyntheticPopulation synth_population(const SyntheticPopulationSpec& spec);

/// Campus-like workplace charging: morning commuters, optional midday
/// top-ups, evening arrivals. `modes` selects 1 (morning), 2 (morning +
/// evening) or 3 (all).
SyntheticPopulationSpec example_population(int modes, int n_samples, std::uint64_t seed);

/// Session records for a synthetic population, one per non-empty curve,
/// placed on the day starting at `day_origin` (grid-aligned intervals).
std::vector<ChargingSession> synth_sessions(const SyntheticPopulationSpec& spec, Minutes day_origin);

/// Slot values of a constant load over [start, start + duration) hours,
/// prorated on partial slots and truncated at the end of the day.
LoadCurve rectangular_curve(double start_hours, double duration_hours, double power_kw);

/// Dataset file: optional `# scale=<v>,scheme=<s>` line, header `p00..p95`, one row per curve.
void write_dataset(std::ostream& out, const LoadCurveDataset& d);
void write_dataset(const std::filesystem::path& path, const LoadCurveDataset& d);
LoadCurveDataset read_dataset(std::istream& in);
LoadCurveDataset read_dataset(const std::filesystem::path& path);

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

}  // namespace evgen::dataio
