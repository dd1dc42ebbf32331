#ifndef RISKSEQ_SERIES_STATS_HPP
#define RISKSEQ_SERIES_STATS_HPP

// Fixed-length statistical summary of one intraoperative channel, used as the
// logistic baseline's view of the time series.

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "riskseq/error.hpp"

namespace riskseq {

inline constexpr std::size_t kSeriesStatCount = 49;

struct SeriesStatsConfig {
  std::array<double, 9> quantiles{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::array<double, 9> index_mass_quantiles{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::size_t entropy_bins = 10;
  // The enumerated statistics fill 45 slots; these quantiles fill the last 4.
  std::array<double, 4> extra_quantiles{0.01, 0.05, 0.95, 0.99};
};

/// Linear interpolation between order statistics of sorted data (q in [0, 1]).
inline double percentile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw NumericError("percentile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

inline double percentile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  return percentile_sorted(values, q);
}

inline std::vector<std::string> series_stat_names(const SeriesStatsConfig& cfg = {}) {
  std::vector<std::string> n{"minimum", "maximum", "mean", "median", "standard_deviation", "sum_values",
                             "variance", "kurtosis", "skewness", "abs_energy", "absolute_sum_of_changes",
                             "count_above_mean", "count_below_mean", "first_location_of_minimum",
                             "last_location_of_minimum", "first_location_of_maximum", "last_location_of_maximum",
                             "length", "longest_strike_above_mean", "longest_strike_below_mean",
                             "mean_abs_change", "mean_change", "ratio_unique_values",
                             "variance_larger_than_standard_deviation"};
  auto tag = [](double q) { return std::to_string(static_cast<int>(std::lround(q * 100))); };
  for (double q : cfg.quantiles) n.push_back("quantile_q" + tag(q));
  for (double q : cfg.index_mass_quantiles) n.push_back("index_mass_quantile_q" + tag(q));
  n.push_back("binned_entropy_" + std::to_string(cfg.entropy_bins));
  n.push_back("number_peaks_n1");
  n.push_back("range_count_mean_pm_std");
  for (double q : cfg.extra_quantiles) n.push_back("extra_quantile_q" + tag(q));
  return n;
}

/// 49 statistics of one channel's values. `range_lo`/`range_hi` bound the entropy bins.
inline std::array<double, kSeriesStatCount> summarize_channel(std::span<const double> x, double range_lo,
                                                             double range_hi, const SeriesStatsConfig& cfg = {}) {
  if (x.empty()) throw NumericError("summarize_channel: empty series");
  const std::size_t n = x.size();
  const double dn = static_cast<double>(n);
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());

  double sum = 0.0, energy = 0.0;
  for (double v : x) {
    sum += v;
    energy += v * v;
  }
  const double mean = sum / dn;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double d = v - mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= dn;
  m3 /= dn;
  m4 /= dn;
  const double var = m2;
  const double sd = std::sqrt(var);
  // Population moment ratios; defined as 0 for a constant series.
  const double skew = m2 > 0.0 ? m3 / std::pow(m2, 1.5) : 0.0;
  const double kurt = m2 > 0.0 ? m4 / (m2 * m2) - 3.0 : 0.0;

  double abs_changes = 0.0;
  for (std::size_t i = 1; i < n; ++i) abs_changes += std::abs(x[i] - x[i - 1]);
  const double mean_abs_change = n > 1 ? abs_changes / (dn - 1.0) : 0.0;
  const double mean_change = n > 1 ? (x[n - 1] - x[0]) / (dn - 1.0) : 0.0;

  std::size_t above = 0, below = 0, longest_above = 0, longest_below = 0, run_above = 0, run_below = 0;
  for (double v : x) {
    if (v > mean) {
      ++above;
      longest_above = std::max(longest_above, ++run_above);
    } else {
      run_above = 0;
    }
    if (v < mean) {
      ++below;
      longest_below = std::max(longest_below, ++run_below);
    } else {
      run_below = 0;
    }
  }

  const auto [min_it, max_it] = std::minmax_element(x.begin(), x.end());
  const double vmin = *min_it, vmax = *max_it;
  std::size_t first_min = n, last_min = 0, first_max = n, last_max = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i] == vmin) {
      first_min = std::min(first_min, i);
      last_min = i;
    }
    if (x[i] == vmax) {
      first_max = std::min(first_max, i);
      last_max = i;
    }
  }

  const std::set<double> unique(x.begin(), x.end());

  std::array<double, kSeriesStatCount> out{};
  std::size_t k = 0;
  out[k++] = vmin;
  out[k++] = vmax;
  out[k++] = mean;
  out[k++] = percentile_sorted(sorted, 0.5);
  out[k++] = sd;
  out[k++] = sum;
  out[k++] = var;
  out[k++] = kurt;
  out[k++] = skew;
  out[k++] = energy;
  out[k++] = abs_changes;
  out[k++] = static_cast<double>(above);
  out[k++] = static_cast<double>(below);
  // Locations are relative to the length, as in tsfresh.
  out[k++] = static_cast<double>(first_min) / dn;
  out[k++] = static_cast<double>(last_min + 1) / dn;
  out[k++] = static_cast<double>(first_max) / dn;
  out[k++] = static_cast<double>(last_max + 1) / dn;
  out[k++] = dn;
  out[k++] = static_cast<double>(longest_above);
  out[k++] = static_cast<double>(longest_below);
  out[k++] = mean_abs_change;
  out[k++] = mean_change;
  out[k++] = static_cast<double>(unique.size()) / dn;
  out[k++] = var > sd ? 1.0 : 0.0;
  for (double q : cfg.quantiles) out[k++] = percentile_sorted(sorted, q);

  double abs_total = 0.0;
  for (double v : x) abs_total += std::abs(v);
  for (double q : cfg.index_mass_quantiles) {
    if (abs_total == 0.0) {
      out[k++] = 0.0;
      continue;
    }
    double cum = 0.0;
    std::size_t idx = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      cum += std::abs(x[i]);
      if (cum / abs_total >= q) {
        idx = i;
        break;
      }
    }
    out[k++] = static_cast<double>(idx + 1) / dn;
  }

  {
    const std::size_t bins = std::max<std::size_t>(cfg.entropy_bins, 1);
    std::vector<std::size_t> counts(bins, 0);
    const double width = (range_hi - range_lo) / static_cast<double>(bins);
    for (double v : x) {
      std::size_t b = 0;
      if (width > 0.0) {
        const double pos = std::floor((v - range_lo) / width);
        b = pos < 0.0 ? 0 : std::min(bins - 1, static_cast<std::size_t>(pos));
      }
      ++counts[b];
    }
    double h = 0.0;
    for (std::size_t c : counts) {
      if (c == 0) continue;
      const double p = static_cast<double>(c) / dn;
      h -= p * std::log(p);
    }
    out[k++] = h;
  }

  std::size_t peaks = 0;
  for (std::size_t i = 1; i + 1 < n; ++i)
    if (x[i] > x[i - 1] && x[i] > x[i + 1]) ++peaks;
  out[k++] = static_cast<double>(peaks);

  std::size_t in_range = 0;
  for (double v : x)
    if (v > mean - sd && v < mean + sd) ++in_range;
  out[k++] = static_cast<double>(in_range);

  for (double q : cfg.extra_quantiles) out[k++] = percentile_sorted(sorted, q);
  return out;
}

}  // namespace riskseq

#endif  // RISKSEQ_SERIES_STATS_HPP
