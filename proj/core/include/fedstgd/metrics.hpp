#pragma once

#include "fedstgd/data.hpp"
#include "fedstgd/tensor.hpp"

#include <span>
#include <string>
#include <vector>

namespace fedstgd {

double rmse(const Tensor& pred, const Tensor& target);
double mae(const Tensor& pred, const Tensor& target);

struct MapeResult {
    double percent = 0.0;
    std::size_t masked = 0; // targets equal to exactly zero
};

/// Mean |pred − target| / |target| × 100 over nonzero targets. Throws
/// UndefinedMetricError when every target is masked.
MapeResult mape(const Tensor& pred, const Tensor& target);

/// Repeats the last input frame for every horizon: T_out×N×d.
Tensor persistence_baseline(const SignalSeries& series, std::size_t t0, std::size_t t_in, std::size_t t_out);

struct HorizonMetrics {
    std::size_t horizon = 0; // 1-based
    double rmse = 0.0;
    double mae = 0.0;
    double mape_percent = 0.0; // NaN when every target of the horizon is zero
};

struct MetricReport {
    double rmse = 0.0;
    double mae = 0.0;
    double mape_percent = 0.0;
    std::size_t masked_count = 0;
    std::size_t count = 0;
    std::vector<HorizonMetrics> horizons;
};

/// Metrics over raw-unit predictions, one T_out×N×d tensor per start,
/// against the raw series.
MetricReport evaluate_raw(std::span<const Tensor> predictions, const SignalSeries& raw,
                          std::span<const std::size_t> starts, std::size_t t_in);

/// Denormalizes `predictions` with `normalizer` and scores them in raw units.
MetricReport evaluate(std::span<const Tensor> predictions, const SignalSeries& raw, std::span<const std::size_t> starts,
                      std::size_t t_in, const Normalizer& normalizer);

/// Persistence predictions for every start.
std::vector<Tensor> persistence_predictions(const SignalSeries& series, std::span<const std::size_t> starts,
                                            std::size_t t_in, std::size_t t_out);

/// Aligned text table, overall row first.
std::string format_report_table(const MetricReport& report, const std::string& label);

/// `key=value` records, one line for the overall metrics and one per horizon.
std::string format_report_records(const MetricReport& report, const std::string& label);

} // namespace fedstgd
