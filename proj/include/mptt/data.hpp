#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mptt/linalg.hpp"
#include "mptt/memory.hpp"

namespace mptt {

/// One entity's full record: aligned driver and response series plus
/// day-of-year labels. start_step anchors row 0 in the source series so that
/// period views keep globally consistent initial steps.
struct TimeSeriesEntity {
  std::string entity_id;
  Mat inputs;                  // T x D
  Mat responses;               // T x K
  std::vector<int> day_of_year;  // T, values in [1, year_length]
  Vec static_attrs;            // optional, broadcast via with_broadcast_statics
  std::int64_t start_step = 0;
  std::vector<std::string> input_names;
  std::vector<std::string> response_names;
  std::vector<std::string> static_names;

  std::size_t length() const { return inputs.rows; }
};

/// Discrete bucket model driven by synthetic daily weather. Three response
/// channels with distinct memory scales:
///   soil_water  - slow storage, drains at slow_drain per step (long memory)
///   snowpack    - accumulates below freezing, melts above (seasonal memory)
///   streamflow  - fast outflow store (short memory)
struct SynthConfig {
  std::size_t years = 40;
  std::size_t year_length = 120;
  std::size_t entities = 1;
  std::uint64_t seed = 7;

  double temp_mean = 8.0;
  double temp_amp = 15.0;
  double temp_noise = 2.5;
  double wet_prob = 0.35;
  double precip_mean = 6.0;

  double melt_rate = 1.5;
  double infil_frac = 0.7;
  double slow_drain = 0.004;
  double et_coef = 0.08;
  double fast_drain = 0.6;
  double route_frac = 0.15;
  double init_soil = 150.0;
  std::size_t warmup_years = 1;
};

std::vector<TimeSeriesEntity> generate_synthetic(const SynthConfig& cfg);

/// CSV schema: header row with columns entity,date,<drivers...>,<responses...>
/// [,<statics...>]; rows grouped by entity and consecutive by date.
struct CsvSchema {
  std::vector<std::string> drivers;
  std::vector<std::string> responses;
  std::vector<std::string> statics;
  bool strict = true;  // false forward-fills missing values
};

std::vector<TimeSeriesEntity> load_csv(const std::string& path, const CsvSchema& schema);

/// Appends each static attribute as a constant per-step input channel.
TimeSeriesEntity with_broadcast_statics(const TimeSeriesEntity& e);

struct PeriodBounds {
  std::size_t train_begin = 0, train_end = 0;
  std::size_t val_begin = 0, val_end = 0;
  std::size_t test_begin = 0, test_end = 0;
};

struct PeriodSplit {
  TimeSeriesEntity train, val, test;
  bool empty_period = false;  // set when val or test came out empty
};

/// Contiguous, non-overlapping, temporally ordered ranges; views keep
/// absolute step indexing via start_step.
PeriodSplit split_periods(const TimeSeriesEntity& e, const PeriodBounds& bounds);

/// Temporal prefix of an entity (used for training-data-fraction sweeps).
TimeSeriesEntity take_prefix(const TimeSeriesEntity& e, double fraction);

struct NormStats {
  Vec input_mean, input_std;
  Vec response_mean, response_std;
};

/// Gaussian-normalizes every input and response channel. Without given stats,
/// fits on the provided entities (the training period). Zero-variance
/// channels throw in strict mode and clamp std to 1 otherwise.
std::pair<std::vector<TimeSeriesEntity>, NormStats> normalize(
    const std::vector<TimeSeriesEntity>& entities, const std::optional<NormStats>& stats,
    bool strict = false);

TimeSeriesEntity denormalize(const TimeSeriesEntity& e, const NormStats& stats);
Mat denormalize_responses(const Mat& responses, const NormStats& stats);

struct SegmentationConfig {
  std::size_t window = 0;  // W >= 2
  std::size_t stride = 0;  // 1 <= stride <= W
};

/// One training/inference window. The window covers source steps T+1..T+W and
/// y0 is the response at the initial step T itself.
struct Sequence {
  std::string entity_id;
  std::int64_t initial_step = 0;  // T, absolute
  Mat inputs;                     // W x D
  Mat targets;                    // W x K
  Vec y0;                         // K
  std::vector<int> doy;           // W

  SequenceId id() const { return {entity_id, initial_step}; }
};

/// Cuts sequences at initial steps start, start+stride, ... reserving the
/// first step of the entity view as the y0 boundary.
std::vector<Sequence> segment(const TimeSeriesEntity& e, const SegmentationConfig& seg);

std::vector<Sequence> segment_all(const std::vector<TimeSeriesEntity>& entities,
                                  const SegmentationConfig& seg);

}  // namespace mptt
