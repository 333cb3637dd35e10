#include "mptt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mptt {

double rmse(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("rmse: shape mismatch");
  if (pred.empty()) throw std::invalid_argument("rmse: empty input");
  double sq = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - truth[i];
    sq += d * d;
  }
  return std::sqrt(sq / static_cast<double>(pred.size()));
}

double rmse(const Mat& pred, const Mat& truth) {
  if (pred.rows != truth.rows || pred.cols != truth.cols)
    throw std::invalid_argument("rmse: shape mismatch");
  return rmse(std::span<const double>(pred.a), std::span<const double>(truth.a));
}

double r_squared(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw std::invalid_argument("r_squared: shape mismatch");
  if (pred.empty()) throw std::invalid_argument("r_squared: empty input");
  double mean = 0.0;
  for (const double v : truth) mean += v;
  mean /= static_cast<double>(truth.size());
  double sse = 0.0, sst = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - truth[i];
    const double m = truth[i] - mean;
    sse += e * e;
    sst += m * m;
  }
  if (sst <= 0.0) throw std::invalid_argument("r_squared: zero truth variance");
  return 1.0 - sse / sst;
}

Vec avg_step_rmse(const std::vector<const Mat*>& preds, const std::vector<const Mat*>& truths,
                  bool pooled) {
  if (preds.empty() || preds.size() != truths.size())
    throw std::invalid_argument("avg_step_rmse: mismatched sets");
  const std::size_t w = preds[0]->rows, k = preds[0]->cols;
  for (std::size_t s = 0; s < preds.size(); ++s)
    if (preds[s]->rows != w || truths[s]->rows != w || preds[s]->cols != k ||
        truths[s]->cols != k)
      throw std::invalid_argument("avg_step_rmse: ragged sequence shapes");

  Vec out(w, 0.0);
  for (std::size_t t = 0; t < w; ++t) {
    if (pooled) {
      double sq = 0.0;
      for (std::size_t s = 0; s < preds.size(); ++s)
        for (std::size_t c = 0; c < k; ++c) {
          const double d = (*preds[s])(t, c) - (*truths[s])(t, c);
          sq += d * d;
        }
      out[t] = std::sqrt(sq / static_cast<double>(preds.size() * k));
    } else {
      double acc = 0.0;
      for (std::size_t s = 0; s < preds.size(); ++s) {
        double sq = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
          const double d = (*preds[s])(t, c) - (*truths[s])(t, c);
          sq += d * d;
        }
        acc += std::sqrt(sq / static_cast<double>(k));
      }
      out[t] = acc / static_cast<double>(preds.size());
    }
  }
  return out;
}

Vec avg_daily_rmse(const std::vector<const Mat*>& preds, const std::vector<const Mat*>& truths,
                   const std::vector<const std::vector<int>*>& doys, std::size_t year_length) {
  if (preds.size() != truths.size() || preds.size() != doys.size() || preds.empty())
    throw std::invalid_argument("avg_daily_rmse: mismatched sets");
  Vec sq(year_length, 0.0);
  std::vector<std::size_t> counts(year_length, 0);
  for (std::size_t s = 0; s < preds.size(); ++s) {
    const Mat& p = *preds[s];
    const Mat& t = *truths[s];
    const std::vector<int>& d = *doys[s];
    if (p.rows != t.rows || p.cols != t.cols || d.size() != p.rows)
      throw std::invalid_argument("avg_daily_rmse: shape mismatch");
    for (std::size_t r = 0; r < p.rows; ++r) {
      const int day = d[r];
      if (day < 1 || static_cast<std::size_t>(day) > year_length)
        throw std::invalid_argument("avg_daily_rmse: day-of-year label out of range");
      for (std::size_t c = 0; c < p.cols; ++c) {
        const double e = p(r, c) - t(r, c);
        sq[static_cast<std::size_t>(day) - 1] += e * e;
        counts[static_cast<std::size_t>(day) - 1] += 1;
      }
    }
  }
  Vec out(year_length, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t d = 0; d < year_length; ++d)
    if (counts[d] > 0) out[d] = std::sqrt(sq[d] / static_cast<double>(counts[d]));
  return out;
}

std::vector<std::pair<double, double>> ecdf(const std::vector<double>& values) {
  if (values.empty()) throw std::invalid_argument("ecdf: empty input");
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::pair<double, double>> out;
  const double n = static_cast<double>(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i + 1 < sorted.size() && sorted[i + 1] == sorted[i]) continue;
    out.emplace_back(sorted[i], static_cast<double>(i + 1) / n);
  }
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median: empty input");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return (n % 2 == 1) ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::map<std::string, double> timing_summary(
    const std::map<std::string, std::vector<double>>& epoch_seconds) {
  std::map<std::string, double> out;
  for (const auto& [label, seconds] : epoch_seconds) out[label] = median(seconds);
  return out;
}

}  // namespace mptt
