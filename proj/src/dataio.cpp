#include "evgen/dataio.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace evgen::dataio {

namespace {

constexpr Minutes kDayMinutes = 24 * 60;
constexpr std::string_view kSessionHeader =
    "session_id,driver_id,start_iso8601,end_iso8601,powers_kw";

std::vector<std::string_view> split_fields(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t begin = 0;
  while (true) {
    const auto pos = line.find(sep, begin);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(begin));
      return out;
    }
    out.push_back(line.substr(begin, pos - begin));
    begin = pos + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

template <typename T>
bool parse_number(std::string_view text, T& out) {
  text = trim(text);
  if (text.empty()) return false;
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc{} && ptr == last;
}

Minutes floor_div(Minutes a, Minutes b) {
  Minutes q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

}  // namespace

std::optional<Minutes> parse_timestamp(std::string_view text) {
  text = trim(text);
  if (!text.empty() && text.back() == 'Z') text.remove_suffix(1);
  // YYYY-MM-DDTHH:MM or YYYY-MM-DDTHH:MM:SS
  if (text.size() != 16 && text.size() != 19) return std::nullopt;
  if (text[4] != '-' || text[7] != '-' || (text[10] != 'T' && text[10] != ' ') ||
      text[13] != ':')
    return std::nullopt;
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  if (!parse_number(text.substr(0, 4), y) || !parse_number(text.substr(5, 2), mo) ||
      !parse_number(text.substr(8, 2), d) || !parse_number(text.substr(11, 2), h) ||
      !parse_number(text.substr(14, 2), mi))
    return std::nullopt;
  if (text.size() == 19) {
    if (text[16] != ':' || !parse_number(text.substr(17, 2), s)) return std::nullopt;
  }
  if (s != 0 || h > 23 || mi > 59) return std::nullopt;
  const std::chrono::year_month_day ymd{std::chrono::year{y},
                                        std::chrono::month{static_cast<unsigned>(mo)},
                                        std::chrono::day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) return std::nullopt;
  const auto days = std::chrono::sys_days{ymd}.time_since_epoch().count();
  return static_cast<Minutes>(days) * kDayMinutes + h * 60 + mi;
}

std::string format_timestamp(Minutes t) {
  const Minutes day = floor_div(t, kDayMinutes);
  const Minutes rem = t - day * kDayMinutes;
  const std::chrono::year_month_day ymd{
      std::chrono::sys_days{std::chrono::days{static_cast<int>(day)}}};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(rem / 60), static_cast<int>(rem % 60));
  return buf;
}

Minutes midnight_of(Minutes t) { return floor_div(t, kDayMinutes) * kDayMinutes; }

double ChargingSession::energy() const {
  double kwh = 0.0;
  for (std::size_t i = 0; i < interval_powers.size(); ++i) {
    const Minutes a = start + static_cast<Minutes>(i) * kSlotMinutes;
    const Minutes b = std::min<Minutes>(a + kSlotMinutes, end);
    kwh += interval_powers[i] * static_cast<double>(b - a) / 60.0;
  }
  return kwh;
}

std::string validate(const ChargingSession& s) {
  if (s.end <= s.start) return "end must be after start";
  const Minutes span = s.end - s.start;
  const auto expected = static_cast<std::size_t>((span + kSlotMinutes - 1) / kSlotMinutes);
  if (s.interval_powers.size() != expected) {
    return "expected " + std::to_string(expected) + " interval powers, got " +
           std::to_string(s.interval_powers.size());
  }
  for (std::size_t i = 0; i < s.interval_powers.size(); ++i) {
    const double p = s.interval_powers[i];
    if (!std::isfinite(p)) return "non-finite power at interval " + std::to_string(i);
    if (p < 0.0) return "negative power at interval " + std::to_string(i);
  }
  if (s.energy_kwh && *s.energy_kwh < 0.0) return "negative energy";
  return {};
}

ParseResult parse_sessions(std::istream& in) {
  ParseResult result;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim(line);
    if (view.empty()) continue;
    if (!header_seen) {
      if (view != kSessionHeader) {
        throw InputError("session file: expected header '" + std::string(kSessionHeader) +
                         "' at line " + std::to_string(line_no));
      }
      header_seen = true;
      continue;
    }
    const auto fields = split_fields(view, ',');
    if (fields.size() != 5) {
      result.errors.push_back({line_no, "expected 5 fields, got " + std::to_string(fields.size())});
      continue;
    }
    ChargingSession s;
    s.session_id = std::string(trim(fields[0]));
    s.driver_id = std::string(trim(fields[1]));
    if (s.session_id.empty()) {
      result.errors.push_back({line_no, "empty session_id"});
      continue;
    }
    const auto start = parse_timestamp(fields[2]);
    const auto end = parse_timestamp(fields[3]);
    if (!start || !end) {
      result.errors.push_back(
          {line_no, "malformed timestamp '" + std::string(trim(start ? fields[3] : fields[2])) + "'"});
      continue;
    }
    s.start = *start;
    s.end = *end;
    bool bad_power = false;
    if (!trim(fields[4]).empty()) {
      for (const auto token : split_fields(trim(fields[4]), ';')) {
        double p = 0.0;
        if (!parse_number(token, p)) {
          result.errors.push_back({line_no, "malformed power '" + std::string(trim(token)) + "'"});
          bad_power = true;
          break;
        }
        s.interval_powers.push_back(p);
      }
    }
    if (bad_power) continue;
    if (auto why = validate(s); !why.empty()) {
      result.errors.push_back({line_no, std::move(why)});
      continue;
    }
    result.sessions.push_back(std::move(s));
  }
  if (!header_seen) throw InputError("session file is empty");
  if (result.sessions.empty() && result.errors.empty())
    throw InputError("session file has no data rows");
  return result;
}

ParseResult parse_sessions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open session file " + path.string());
  return parse_sessions(in);
}

void write_sessions(std::ostream& out, const std::vector<ChargingSession>& sessions) {
  out << kSessionHeader << '\n';
  for (const auto& s : sessions) {
    out << s.session_id << ',' << s.driver_id << ',' << format_timestamp(s.start) << ','
        << format_timestamp(s.end) << ',';
    for (std::size_t i = 0; i < s.interval_powers.size(); ++i) {
      if (i) out << ';';
      out << format_double(s.interval_powers[i]);
    }
    out << '\n';
  }
}

CurveResult session_to_curve(const ChargingSession& s, Minutes day_origin) {
  if (auto why = validate(s); !why.empty())
    throw InputError("session " + s.session_id + ": " + why);
  const Minutes window_end = day_origin + kDayMinutes;
  if (s.end <= day_origin || s.start >= window_end) {
    throw InputError("session " + s.session_id + " lies outside the day starting " +
                     format_timestamp(day_origin));
  }
  CurveResult result;
  double kept = 0.0;
  for (std::size_t i = 0; i < s.interval_powers.size(); ++i) {
    const double p = s.interval_powers[i];
    const Minutes a = s.start + static_cast<Minutes>(i) * kSlotMinutes;
    const Minutes b = std::min<Minutes>(a + kSlotMinutes, s.end);
    const Minutes ca = std::max(a, day_origin);
    const Minutes cb = std::min(b, window_end);
    if (cb <= ca || p == 0.0) continue;
    const auto first = static_cast<int>((ca - day_origin) / kSlotMinutes);
    const auto last = static_cast<int>((cb - 1 - day_origin) / kSlotMinutes);
    for (int k = first; k <= last; ++k) {
      const Minutes sa = day_origin + static_cast<Minutes>(k) * kSlotMinutes;
      const Minutes overlap = std::min(cb, sa + kSlotMinutes) - std::max(ca, sa);
      if (overlap <= 0) continue;
      result.curve[k] += p * static_cast<double>(overlap) / kSlotMinutes;
    }
    kept += p * static_cast<double>(cb - ca) / 60.0;
  }
  result.truncated_kwh = std::max(0.0, s.energy() - kept);
  if (result.truncated_kwh > 0.0) {
    spdlog::warn("session {} crosses the day window; {:.6g} kWh truncated", s.session_id,
                 result.truncated_kwh);
  }
  return result;
}

LoadCurve LoadCurveDataset::row(Eigen::Index i) const {
  LoadCurve out{};
  for (int k = 0; k < kSlots; ++k) out[k] = curves(i, k);
  return out;
}

LoadCurveDataset make_dataset(const std::vector<LoadCurve>& curves) {
  LoadCurveDataset d;
  d.curves.resize(static_cast<Eigen::Index>(curves.size()), kSlots);
  for (std::size_t i = 0; i < curves.size(); ++i)
    for (int k = 0; k < kSlots; ++k) d.curves(static_cast<Eigen::Index>(i), k) = curves[i][k];
  return d;
}

LoadCurveDataset normalize(const LoadCurveDataset& raw) {
  if (raw.normalized()) throw InputError("normalize: dataset is already normalized");
  if (raw.size() == 0) throw InputError("normalize: empty dataset");
  const double peak = raw.curves.maxCoeff();
  if (!(peak > 0.0)) throw InputError("normalize: all-zero dataset has no scale");
  return normalize(raw, NormalizationStats{peak, "global-max"});
}

LoadCurveDataset normalize(const LoadCurveDataset& raw, const NormalizationStats& stats) {
  if (raw.normalized()) throw InputError("normalize: dataset is already normalized");
  if (!(stats.scale > 0.0)) throw InputError("normalize: scale must be positive");
  LoadCurveDataset out;
  out.curves = raw.curves / stats.scale;
  out.normalization = stats;
  return out;
}

LoadCurveDataset denormalize(const LoadCurveDataset& normalized) {
  if (!normalized.normalized()) return normalized;
  LoadCurveDataset out;
  out.curves = normalized.curves * normalized.normalization->scale;
  return out;
}

Split split(const LoadCurveDataset& d, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw InputError("split: ratio must lie in (0, 1)");
  const Eigen::Index n = d.size();
  if (n < 2) throw InputError("split: need at least 2 curves");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Rng rng(seed);
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    std::swap(order[i], order[rng.below(i + 1)]);
  }
  auto n_train = static_cast<Eigen::Index>(std::llround(ratio * static_cast<double>(n)));
  n_train = std::clamp<Eigen::Index>(n_train, 1, n - 1);

  Split out;
  out.train_rows.assign(order.begin(), order.begin() + n_train);
  out.test_rows.assign(order.begin() + n_train, order.end());
  auto take = [&](const std::vector<Eigen::Index>& rows) {
    LoadCurveDataset part;
    part.normalization = d.normalization;
    part.curves.resize(static_cast<Eigen::Index>(rows.size()), kSlots);
    for (std::size_t i = 0; i < rows.size(); ++i)
      part.curves.row(static_cast<Eigen::Index>(i)) = d.curves.row(rows[i]);
    return part;
  };
  out.train = take(out.train_rows);
  out.test = take(out.test_rows);
  return out;
}

LoadCurve rectangular_curve(double start_hours, double duration_hours, double power_kw) {
  LoadCurve curve{};
  const double a = std::max(0.0, start_hours);
  const double b = std::min(24.0, start_hours + duration_hours);
  if (b <= a) return curve;
  const int first = std::clamp(static_cast<int>(std::floor(a / kSlotHours)), 0, kSlots - 1);
  const int last = std::clamp(static_cast<int>(std::ceil(b / kSlotHours)) - 1, 0, kSlots - 1);
  for (int k = first; k <= last; ++k) {
    const double sa = k * kSlotHours;
    const double overlap = std::min(b, sa + kSlotHours) - std::max(a, sa);
    if (overlap > 0.0) curve[k] = power_kw * overlap / kSlotHours;
  }
  return curve;
}

namespace {

double draw(Rng& rng, const Distribution& d) {
  if (d.stddev <= 0.0) return std::clamp(d.mean, d.lo, d.hi);
  for (int attempt = 0; attempt < 64; ++attempt) {
    const double v = rng.normal(d.mean, d.stddev);
    if (v >= d.lo && v <= d.hi) return v;
  }
  return std::clamp(d.mean, d.lo, d.hi);
}

}  // namespace

SyntheticPopulation synth_population(const SyntheticPopulationSpec& spec) {
  if (spec.modes.empty()) throw InputError("synth_population: no modes");
  if (spec.n_samples < 1) throw InputError("synth_population: n_samples must be >= 1");
  double total = 0.0;
  for (const auto& m : spec.modes) {
    if (m.weight < 0.0) throw InputError("synth_population: negative mode weight");
    if (m.taper_fraction < 0.0 || m.taper_fraction > 1.0)
      throw InputError("synth_population: taper_fraction must lie in [0, 1]");
    total += m.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) throw InputError("synth_population: weights must sum to 1");

  Rng rng(spec.seed);
  SyntheticPopulation pop;
  pop.data.curves.setZero(spec.n_samples, kSlots);
  pop.mode_of_sample.resize(static_cast<std::size_t>(spec.n_samples));
  for (int i = 0; i < spec.n_samples; ++i) {
    const double u = rng.uniform();
    std::size_t mode = spec.modes.size() - 1;
    double acc = 0.0;
    for (std::size_t m = 0; m < spec.modes.size(); ++m) {
      acc += spec.modes[m].weight;
      if (u < acc) {
        mode = m;
        break;
      }
    }
    const auto& m = spec.modes[mode];
    const double start = draw(rng, m.start_hours);
    const double duration = draw(rng, m.duration_hours);
    const double power = draw(rng, m.power_kw);
    LoadCurve curve = rectangular_curve(start, duration, power);
    const double end = std::min(24.0, start + duration);
    for (int k = 0; k < kSlots; ++k) {
      if (curve[k] == 0.0) continue;
      if (m.taper_fraction > 0.0 && duration > 0.0) {
        const double mid =
            0.5 * (std::max(start, k * kSlotHours) + std::min(end, (k + 1) * kSlotHours));
        const double progress = (mid - start) / duration;
        const double knee = 1.0 - m.taper_fraction;
        if (progress > knee) {
          curve[k] *= 1.0 - (1.0 - m.taper_floor) * (progress - knee) / m.taper_fraction;
        }
      }
      if (m.jitter > 0.0) curve[k] = std::max(0.0, curve[k] * (1.0 + m.jitter * rng.normal()));
    }
    for (int k = 0; k < kSlots; ++k) pop.data.curves(i, k) = curve[k];
    pop.mode_of_sample[static_cast<std::size_t>(i)] = static_cast<int>(mode);
  }
  return pop;
}

SyntheticPopulationSpec example_population(int modes, int n_samples, std::uint64_t seed) {
  PopulationMode morning{{8.0, 0.75, 5.0, 12.0}, {4.0, 1.0, 1.0, 9.0}, {6.6, 0.6, 3.0, 7.7},
                         1.0, 0.3, 0.35, 0.03};
  PopulationMode midday{{12.5, 1.0, 9.0, 16.0}, {2.5, 0.75, 0.5, 6.0}, {3.3, 0.4, 1.4, 4.5},
                        1.0, 0.2, 0.5, 0.03};
  PopulationMode evening{{18.0, 1.0, 15.0, 22.0}, {3.0, 1.0, 1.0, 6.0}, {7.2, 0.8, 3.5, 9.6},
                         1.0, 0.3, 0.35, 0.03};
  SyntheticPopulationSpec spec;
  spec.n_samples = n_samples;
  spec.seed = seed;
  switch (modes) {
    case 1: spec.modes = {morning}; break;
    case 2:
      morning.weight = 0.6;
      evening.weight = 0.4;
      spec.modes = {morning, evening};
      break;
    case 3:
      morning.weight = 0.45;
      midday.weight = 0.3;
      evening.weight = 0.25;
      spec.modes = {morning, midday, evening};
      break;
    default: throw InputError("example_population: modes must be 1, 2 or 3");
  }
  return spec;
}

std::vector<ChargingSession> synth_sessions(const SyntheticPopulationSpec& spec,
                                            Minutes day_origin) {
  const auto pop = synth_population(spec);
  std::vector<ChargingSession> out;
  for (Eigen::Index i = 0; i < pop.data.size(); ++i) {
    int first = -1;
    int last = -1;
    for (int k = 0; k < kSlots; ++k) {
      if (pop.data.curves(i, k) > 0.0) {
        if (first < 0) first = k;
        last = k;
      }
    }
    if (first < 0) continue;
    ChargingSession s;
    s.session_id = "S" + std::to_string(i);
    s.driver_id = "D" + std::to_string(i % 997);
    s.start = day_origin + static_cast<Minutes>(first) * kSlotMinutes;
    s.end = day_origin + static_cast<Minutes>(last + 1) * kSlotMinutes;
    for (int k = first; k <= last; ++k) s.interval_powers.push_back(pop.data.curves(i, k));
    s.energy_kwh = s.energy();
    out.push_back(std::move(s));
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

void write_dataset(std::ostream& out, const LoadCurveDataset& d) {
  if (d.normalization) {
    out << "# scale=" << format_double(d.normalization->scale)
        << ",scheme=" << d.normalization->scheme << '\n';
  }
  for (int k = 0; k < kSlots; ++k) {
    char name[8];
    std::snprintf(name, sizeof name, "p%02d", k);
    out << (k ? "," : "") << name;
  }
  out << '\n';
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    for (int k = 0; k < kSlots; ++k) out << (k ? "," : "") << format_double(d.curves(i, k));
    out << '\n';
  }
}

void write_dataset(const std::filesystem::path& path, const LoadCurveDataset& d) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write dataset file " + path.string());
  write_dataset(out, d);
}

LoadCurveDataset read_dataset(std::istream& in) {
  LoadCurveDataset d;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim(line);
    if (view.empty()) continue;
    if (!header_seen && view.front() == '#') {
      NormalizationStats stats;
      for (const auto kv : split_fields(trim(view.substr(1)), ',')) {
        const auto eq = kv.find('=');
        if (eq == std::string_view::npos) continue;
        const auto key = trim(kv.substr(0, eq));
        const auto value = trim(kv.substr(eq + 1));
        if (key == "scale" && !parse_number(value, stats.scale))
          throw InputError("dataset: malformed scale at line " + std::to_string(line_no));
        if (key == "scheme") stats.scheme = std::string(value);
      }
      if (!(stats.scale > 0.0)) throw InputError("dataset: scale must be positive");
      d.normalization = stats;
      continue;
    }
    if (!header_seen) {
      const auto names = split_fields(view, ',');
      if (names.size() != kSlots || trim(names.front()) != "p00" || trim(names.back()) != "p95")
        throw InputError("dataset: expected header p00..p95 at line " + std::to_string(line_no));
      header_seen = true;
      continue;
    }
    const auto fields = split_fields(view, ',');
    if (fields.size() != kSlots)
      throw InputError("dataset: line " + std::to_string(line_no) + " has " +
                       std::to_string(fields.size()) + " columns");
    for (const auto f : fields) {
      double v = 0.0;
      if (!parse_number(f, v) || !std::isfinite(v))
        throw InputError("dataset: malformed value at line " + std::to_string(line_no));
      values.push_back(v);
    }
  }
  if (!header_seen) throw InputError("dataset: missing header");
  const auto rows = static_cast<Eigen::Index>(values.size() / kSlots);
  if (rows == 0) throw InputError("dataset: no rows");
  d.curves = Eigen::Map<const Matrix>(values.data(), rows, kSlots);
  return d;
}

LoadCurveDataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open dataset file " + path.string());
  return read_dataset(in);
}

}  // namespace evgen::dataio
