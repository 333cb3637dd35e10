#include "mptt/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "mptt/errors.hpp"
#include "mptt/rng.hpp"

namespace mptt {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

// Days since 1970-01-01 for a civil date (proleptic Gregorian).
std::int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const int era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = static_cast<unsigned>((153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1);
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return static_cast<std::int64_t>(era) * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

struct CivilDate {
  int year, month, day;
};

CivilDate parse_iso_date(const std::string& s, std::size_t row) {
  CivilDate d{};
  if (s.size() != 10 || s[4] != '-' || s[7] != '-' ||
      std::sscanf(s.c_str(), "%d-%d-%d", &d.year, &d.month, &d.day) != 3)
    throw std::invalid_argument("load_csv: bad ISO-8601 date '" + s + "' at row " +
                                std::to_string(row));
  return d;
}

int day_of_year(const CivilDate& d) {
  return static_cast<int>(days_from_civil(d.year, d.month, d.day) -
                          days_from_civil(d.year, 1, 1)) + 1;
}

}  // namespace

std::vector<TimeSeriesEntity> generate_synthetic(const SynthConfig& cfg) {
  if (cfg.years < 1) throw std::invalid_argument("generate_synthetic: years must be >= 1");
  if (cfg.entities < 1) throw std::invalid_argument("generate_synthetic: entities must be >= 1");
  if (cfg.year_length < 2) throw std::invalid_argument("generate_synthetic: year_length too small");

  const std::size_t steps = cfg.years * cfg.year_length;
  const std::size_t warmup = cfg.warmup_years * cfg.year_length;
  std::vector<TimeSeriesEntity> out;
  out.reserve(cfg.entities);

  for (std::size_t n = 0; n < cfg.entities; ++n) {
    Rng rng(derive_seed(cfg.seed, "synthetic-entity-" + std::to_string(n)));

    TimeSeriesEntity e;
    e.entity_id = "synth" + std::to_string(n);
    e.inputs = Mat(steps, 6);
    e.responses = Mat(steps, 3);
    e.day_of_year.resize(steps);
    e.input_names = {"temp", "precip", "solar", "humidity", "wind", "pressure"};
    e.response_names = {"soil_water", "snowpack", "streamflow"};

    double soil = cfg.init_soil, snow = 0.0, fast = 0.0;
    for (std::size_t t = 0; t < warmup + steps; ++t) {
      const std::size_t d = t % cfg.year_length;
      const double phase = 2.0 * kPi * (static_cast<double>(d) + 0.5) /
                           static_cast<double>(cfg.year_length);

      // Year starts in winter: coldest around day 0, warmest mid-year.
      const double temp = cfg.temp_mean - cfg.temp_amp * std::cos(phase) +
                          rng.normal(0.0, cfg.temp_noise);
      const double precip =
          (cfg.wet_prob > 0.0 && rng.bernoulli(cfg.wet_prob)) ? rng.exponential(cfg.precip_mean)
                                                              : 0.0;
      const double solar = std::max(0.0, 15.0 - 10.0 * std::cos(phase) + rng.normal(0.0, 2.0));
      const double humidity =
          std::clamp(0.65 + 0.15 * std::cos(phase) + rng.normal(0.0, 0.08), 0.0, 1.0);
      const double wind = std::fabs(rng.normal(3.0, 1.2));
      const double pressure = 101.0 + rng.normal(0.0, 0.6);

      const double snowfall = temp < 0.0 ? precip : 0.0;
      const double rain = temp >= 0.0 ? precip : 0.0;
      const double melt = std::min(snow, cfg.melt_rate * std::max(temp, 0.0));
      snow = snow + snowfall - melt;
      const double water_in = rain + melt;
      const double et = cfg.et_coef * std::max(temp, 0.0) * soil / (soil + 200.0);
      const double drain = cfg.slow_drain * soil;
      soil = std::max(0.0, soil + cfg.infil_frac * water_in - drain - et);
      fast = (1.0 - cfg.fast_drain) * fast + (1.0 - cfg.infil_frac) * water_in +
             cfg.route_frac * drain;
      const double flow = cfg.fast_drain * fast;

      if (t < warmup) continue;
      const std::size_t row = t - warmup;
      e.inputs(row, 0) = temp;
      e.inputs(row, 1) = precip;
      e.inputs(row, 2) = solar;
      e.inputs(row, 3) = humidity;
      e.inputs(row, 4) = wind;
      e.inputs(row, 5) = pressure;
      e.responses(row, 0) = soil;
      e.responses(row, 1) = snow;
      e.responses(row, 2) = flow;
      e.day_of_year[row] = static_cast<int>(d) + 1;
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<TimeSeriesEntity> load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("load_csv: cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("load_csv: empty file " + path);
  const auto header = split_csv_row(line);
  auto col_of = [&](const std::string& name) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw std::invalid_argument("load_csv: missing column '" + name + "'");
  };

  const std::size_t entity_col = col_of("entity");
  const std::size_t date_col = col_of("date");
  std::vector<std::size_t> driver_cols, response_cols, static_cols;
  for (const auto& n : schema.drivers) driver_cols.push_back(col_of(n));
  for (const auto& n : schema.responses) response_cols.push_back(col_of(n));
  for (const auto& n : schema.statics) static_cols.push_back(col_of(n));

  struct Building {
    std::vector<Vec> input_rows, response_rows;
    std::vector<int> doy;
    Vec statics;
    std::int64_t last_day = 0;
  };

  std::vector<std::pair<std::string, Building>> groups;
  std::set<std::string> seen;
  std::size_t row_no = 1;

  auto parse_value = [&](const std::string& field, std::size_t col, const Vec* prev_row,
                         std::size_t prev_idx) {
    const bool missing =
        field.empty() || field == "nan" || field == "NaN" || field == "NA" || field == "null";
    if (!missing) {
      try {
        std::size_t pos = 0;
        const double v = std::stod(field, &pos);
        if (pos == field.size() && std::isfinite(v)) return v;
      } catch (const std::exception&) {
      }
      throw std::invalid_argument("load_csv: bad numeric value '" + field + "' at row " +
                                  std::to_string(row_no) + " column '" + header[col] + "'");
    }
    if (schema.strict || prev_row == nullptr)
      throw std::invalid_argument("load_csv: missing value at row " + std::to_string(row_no) +
                                  " column '" + header[col] + "'");
    return (*prev_row)[prev_idx];
  };

  while (std::getline(in, line)) {
    ++row_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_row(line);
    if (fields.size() < header.size())
      throw std::invalid_argument("load_csv: short row " + std::to_string(row_no));

    const std::string& ent = fields[entity_col];
    if (groups.empty() || groups.back().first != ent) {
      if (seen.count(ent))
        throw std::invalid_argument("load_csv: rows not grouped by entity (entity '" + ent +
                                    "' reappears at row " + std::to_string(row_no) + ")");
      seen.insert(ent);
      groups.emplace_back(ent, Building{});
    }
    Building& b = groups.back().second;

    const CivilDate date = parse_iso_date(fields[date_col], row_no);
    const std::int64_t day = days_from_civil(date.year, date.month, date.day);
    if (!b.input_rows.empty()) {
      if (day <= b.last_day)
        throw std::invalid_argument("load_csv: non-monotone dates at row " +
                                    std::to_string(row_no));
      if (day != b.last_day + 1)
        throw std::invalid_argument("load_csv: date gap at row " + std::to_string(row_no) +
                                    " (daily series required)");
    }
    b.last_day = day;

    Vec in_row(driver_cols.size()), resp_row(response_cols.size());
    const Vec* prev_in = b.input_rows.empty() ? nullptr : &b.input_rows.back();
    const Vec* prev_resp = b.response_rows.empty() ? nullptr : &b.response_rows.back();
    for (std::size_t i = 0; i < driver_cols.size(); ++i)
      in_row[i] = parse_value(fields[driver_cols[i]], driver_cols[i], prev_in, i);
    for (std::size_t i = 0; i < response_cols.size(); ++i)
      resp_row[i] = parse_value(fields[response_cols[i]], response_cols[i], prev_resp, i);

    if (b.input_rows.empty()) {
      for (const std::size_t c : static_cols)
        b.statics.push_back(parse_value(fields[c], c, nullptr, 0));
    } else {
      for (std::size_t i = 0; i < static_cols.size(); ++i) {
        const double v = parse_value(fields[static_cols[i]], static_cols[i], nullptr, 0);
        if (v != b.statics[i])
          throw std::invalid_argument("load_csv: static column '" + header[static_cols[i]] +
                                      "' varies within entity '" + ent + "' at row " +
                                      std::to_string(row_no));
      }
    }

    b.input_rows.push_back(std::move(in_row));
    b.response_rows.push_back(std::move(resp_row));
    b.doy.push_back(day_of_year(date));
  }

  std::vector<TimeSeriesEntity> out;
  for (auto& [ent, b] : groups) {
    TimeSeriesEntity e;
    e.entity_id = ent;
    const std::size_t t = b.input_rows.size();
    e.inputs = Mat(t, schema.drivers.size());
    e.responses = Mat(t, schema.responses.size());
    for (std::size_t r = 0; r < t; ++r) {
      for (std::size_t c = 0; c < schema.drivers.size(); ++c) e.inputs(r, c) = b.input_rows[r][c];
      for (std::size_t c = 0; c < schema.responses.size(); ++c)
        e.responses(r, c) = b.response_rows[r][c];
    }
    e.day_of_year = std::move(b.doy);
    e.static_attrs = std::move(b.statics);
    e.input_names = schema.drivers;
    e.response_names = schema.responses;
    e.static_names = schema.statics;
    out.push_back(std::move(e));
  }
  return out;
}

TimeSeriesEntity with_broadcast_statics(const TimeSeriesEntity& e) {
  if (e.static_attrs.empty()) return e;
  TimeSeriesEntity out = e;
  const std::size_t d = e.inputs.cols, s = e.static_attrs.size();
  out.inputs = Mat(e.length(), d + s);
  for (std::size_t r = 0; r < e.length(); ++r) {
    for (std::size_t c = 0; c < d; ++c) out.inputs(r, c) = e.inputs(r, c);
    for (std::size_t c = 0; c < s; ++c) out.inputs(r, d + c) = e.static_attrs[c];
  }
  for (const auto& n : e.static_names) out.input_names.push_back(n);
  out.static_attrs.clear();
  out.static_names.clear();
  return out;
}

namespace {

TimeSeriesEntity slice_entity(const TimeSeriesEntity& e, std::size_t begin, std::size_t end) {
  TimeSeriesEntity out;
  out.entity_id = e.entity_id;
  out.start_step = e.start_step + static_cast<std::int64_t>(begin);
  out.static_attrs = e.static_attrs;
  out.input_names = e.input_names;
  out.response_names = e.response_names;
  out.static_names = e.static_names;
  const std::size_t n = end - begin;
  out.inputs = Mat(n, e.inputs.cols);
  out.responses = Mat(n, e.responses.cols);
  out.day_of_year.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < e.inputs.cols; ++c) out.inputs(r, c) = e.inputs(begin + r, c);
    for (std::size_t c = 0; c < e.responses.cols; ++c)
      out.responses(r, c) = e.responses(begin + r, c);
    out.day_of_year[r] = e.day_of_year[begin + r];
  }
  return out;
}

}  // namespace

PeriodSplit split_periods(const TimeSeriesEntity& e, const PeriodBounds& b) {
  const std::size_t t = e.length();
  if (b.train_begin > b.train_end || b.val_begin > b.val_end || b.test_begin > b.test_end)
    throw std::invalid_argument("split_periods: range begins after its end");
  if (b.train_end != b.val_begin || b.val_end != b.test_begin)
    throw std::invalid_argument("split_periods: ranges must be contiguous and in order");
  if (b.test_end > t) throw std::invalid_argument("split_periods: bounds exceed series length");

  PeriodSplit s;
  s.train = slice_entity(e, b.train_begin, b.train_end);
  s.val = slice_entity(e, b.val_begin, b.val_end);
  s.test = slice_entity(e, b.test_begin, b.test_end);
  s.empty_period = (b.val_begin == b.val_end) || (b.test_begin == b.test_end);
  return s;
}

TimeSeriesEntity take_prefix(const TimeSeriesEntity& e, double fraction) {
  if (!(fraction > 0.0) || fraction > 1.0)
    throw std::invalid_argument("take_prefix: fraction must be in (0, 1]");
  const auto n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(e.length())));
  return slice_entity(e, 0, std::max<std::size_t>(n, 1));
}

std::pair<std::vector<TimeSeriesEntity>, NormStats> normalize(
    const std::vector<TimeSeriesEntity>& entities, const std::optional<NormStats>& given,
    bool strict) {
  if (entities.empty()) throw std::invalid_argument("normalize: no entities");
  const std::size_t d = entities[0].inputs.cols, k = entities[0].responses.cols;

  NormStats stats;
  if (given) {
    stats = *given;
  } else {
    auto fit = [&](auto&& channel_at, std::size_t channels, Vec& mean, Vec& std_out) {
      mean.assign(channels, 0.0);
      std_out.assign(channels, 0.0);
      std::size_t n = 0;
      for (const auto& e : entities) n += e.length();
      if (n == 0) throw std::invalid_argument("normalize: empty entities");
      for (std::size_t c = 0; c < channels; ++c) {
        double sum = 0.0;
        for (const auto& e : entities)
          for (std::size_t r = 0; r < e.length(); ++r) sum += channel_at(e, r, c);
        const double m = sum / static_cast<double>(n);
        double sq = 0.0;
        for (const auto& e : entities)
          for (std::size_t r = 0; r < e.length(); ++r) {
            const double v = channel_at(e, r, c) - m;
            sq += v * v;
          }
        double sd = std::sqrt(sq / static_cast<double>(n));
        if (sd < 1e-12) {
          if (strict)
            throw std::invalid_argument("normalize: zero-variance channel " + std::to_string(c));
          sd = 1.0;
        }
        mean[c] = m;
        std_out[c] = sd;
      }
    };
    fit([](const TimeSeriesEntity& e, std::size_t r, std::size_t c) { return e.inputs(r, c); }, d,
        stats.input_mean, stats.input_std);
    fit([](const TimeSeriesEntity& e, std::size_t r, std::size_t c) { return e.responses(r, c); },
        k, stats.response_mean, stats.response_std);
  }

  if (stats.input_mean.size() != d || stats.response_mean.size() != k)
    throw std::invalid_argument("normalize: stats shape mismatch");

  std::vector<TimeSeriesEntity> out = entities;
  for (auto& e : out) {
    for (std::size_t r = 0; r < e.length(); ++r) {
      for (std::size_t c = 0; c < d; ++c)
        e.inputs(r, c) = (e.inputs(r, c) - stats.input_mean[c]) / stats.input_std[c];
      for (std::size_t c = 0; c < k; ++c)
        e.responses(r, c) = (e.responses(r, c) - stats.response_mean[c]) / stats.response_std[c];
    }
  }
  return {std::move(out), std::move(stats)};
}

TimeSeriesEntity denormalize(const TimeSeriesEntity& e, const NormStats& stats) {
  TimeSeriesEntity out = e;
  for (std::size_t r = 0; r < e.length(); ++r) {
    for (std::size_t c = 0; c < e.inputs.cols; ++c)
      out.inputs(r, c) = e.inputs(r, c) * stats.input_std[c] + stats.input_mean[c];
    for (std::size_t c = 0; c < e.responses.cols; ++c)
      out.responses(r, c) = e.responses(r, c) * stats.response_std[c] + stats.response_mean[c];
  }
  return out;
}

Mat denormalize_responses(const Mat& responses, const NormStats& stats) {
  if (responses.cols != stats.response_mean.size())
    throw std::invalid_argument("denormalize_responses: channel mismatch");
  Mat out = responses;
  for (std::size_t r = 0; r < out.rows; ++r)
    for (std::size_t c = 0; c < out.cols; ++c)
      out(r, c) = out(r, c) * stats.response_std[c] + stats.response_mean[c];
  return out;
}

std::vector<Sequence> segment(const TimeSeriesEntity& e, const SegmentationConfig& seg) {
  if (seg.window < 2) throw std::invalid_argument("segment: window must be >= 2");
  if (seg.stride < 1 || seg.stride > seg.window)
    throw std::invalid_argument("segment: stride must be in [1, window]");
  const std::size_t t = e.length();
  if (t < seg.window + 1)
    throw std::invalid_argument("segment: entity '" + e.entity_id + "' shorter than window+1");

  std::vector<Sequence> out;
  const std::size_t w = seg.window;
  for (std::size_t start = 0; start + w <= t - 1; start += seg.stride) {
    Sequence s;
    s.entity_id = e.entity_id;
    s.initial_step = e.start_step + static_cast<std::int64_t>(start);
    s.inputs = Mat(w, e.inputs.cols);
    s.targets = Mat(w, e.responses.cols);
    s.doy.resize(w);
    s.y0.resize(e.responses.cols);
    for (std::size_t c = 0; c < e.responses.cols; ++c) s.y0[c] = e.responses(start, c);
    for (std::size_t r = 0; r < w; ++r) {
      const std::size_t src = start + 1 + r;
      for (std::size_t c = 0; c < e.inputs.cols; ++c) s.inputs(r, c) = e.inputs(src, c);
      for (std::size_t c = 0; c < e.responses.cols; ++c) s.targets(r, c) = e.responses(src, c);
      s.doy[r] = e.day_of_year[src];
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Sequence> segment_all(const std::vector<TimeSeriesEntity>& entities,
                                  const SegmentationConfig& seg) {
  std::vector<Sequence> out;
  for (const auto& e : entities) {
    auto seqs = segment(e, seg);
    for (auto& s : seqs) out.push_back(std::move(s));
  }
  return out;
}

}  // namespace mptt
