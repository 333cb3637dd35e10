#pragma once

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mptt/linalg.hpp"

namespace mptt {

double rmse(std::span<const double> pred, std::span<const double> truth);
double rmse(const Mat& pred, const Mat& truth);

/// 1 - SSE/SST with SST about the truth mean. Negative when worse than the
/// mean predictor; throws on zero truth variance.
double r_squared(std::span<const double> pred, std::span<const double> truth);

/// Per-local-step error over a set of equal-length sequences. Pooled mode
/// takes the RMSE of all squared errors at each step; the alternative
/// averages per-sequence RMSEs step-wise.
Vec avg_step_rmse(const std::vector<const Mat*>& preds, const std::vector<const Mat*>& truths,
                  bool pooled = true);

/// Per-day-of-year error pooled over all years, entities and channels.
/// Entries for days that never occur are NaN.
Vec avg_daily_rmse(const std::vector<const Mat*>& preds, const std::vector<const Mat*>& truths,
                   const std::vector<const std::vector<int>*>& doys, std::size_t year_length);

/// Right-continuous empirical CDF: (value, fraction of samples <= value) at
/// each distinct value, ending at 1.
std::vector<std::pair<double, double>> ecdf(const std::vector<double>& values);

/// Median seconds/epoch per strategy label.
std::map<std::string, double> timing_summary(
    const std::map<std::string, std::vector<double>>& epoch_seconds);

double median(std::vector<double> values);

}  // namespace mptt
