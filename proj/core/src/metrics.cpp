#include "fedstgd/metrics.hpp"

#include "fedstgd/errors.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace fedstgd {

namespace {

void check_same(const Tensor& pred, const Tensor& target, const char* what)
{
    if (pred.dims() != target.dims()) {
        throw ShapeError(std::string(what) + ": prediction " + pred.shape_string() + " vs target " +
                         target.shape_string());
    }
    if (pred.empty()) throw ShapeError(std::string(what) + ": empty input");
}

struct Accumulator {
    double sq = 0.0;
    double abs = 0.0;
    double pct = 0.0;
    std::size_t n = 0;
    std::size_t unmasked = 0;

    void add(double p, double y)
    {
        const double e = p - y;
        sq += e * e;
        abs += std::abs(e);
        ++n;
        if (y != 0.0) {
            pct += std::abs(e) / std::abs(y);
            ++unmasked;
        }
    }
    double rmse() const { return std::sqrt(sq / static_cast<double>(n)); }
    double mae() const { return abs / static_cast<double>(n); }
    double mape() const
    {
        return unmasked == 0 ? std::numeric_limits<double>::quiet_NaN() : 100.0 * pct / static_cast<double>(unmasked);
    }
};

std::string fixed(double v, int digits)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

} // namespace

double rmse(const Tensor& pred, const Tensor& target)
{
    check_same(pred, target, "rmse");
    Accumulator acc;
    for (std::size_t i = 0; i < pred.size(); ++i) acc.add(pred[i], target[i]);
    return acc.rmse();
}

double mae(const Tensor& pred, const Tensor& target)
{
    check_same(pred, target, "mae");
    Accumulator acc;
    for (std::size_t i = 0; i < pred.size(); ++i) acc.add(pred[i], target[i]);
    return acc.mae();
}

MapeResult mape(const Tensor& pred, const Tensor& target)
{
    check_same(pred, target, "mape");
    Accumulator acc;
    for (std::size_t i = 0; i < pred.size(); ++i) acc.add(pred[i], target[i]);
    if (acc.unmasked == 0) throw UndefinedMetricError("mape: every target is zero");
    return {acc.mape(), acc.n - acc.unmasked};
}

Tensor persistence_baseline(const SignalSeries& series, std::size_t t0, std::size_t t_in, std::size_t t_out)
{
    if (t_in == 0) throw ConfigError("persistence baseline needs t_in >= 1");
    if (t0 + t_in > series.steps()) throw DataError(DataErrorKind::too_short, "window runs past the series");
    const std::size_t n = series.nodes();
    const std::size_t d = series.features();
    Tensor out({t_out, n, d});
    const std::size_t last = t0 + t_in - 1;
    for (std::size_t h = 0; h < t_out; ++h) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t f = 0; f < d; ++f) out.at(h, i, f) = series.values.at(last, i, f);
        }
    }
    return out;
}

std::vector<Tensor> persistence_predictions(const SignalSeries& series, std::span<const std::size_t> starts,
                                            std::size_t t_in, std::size_t t_out)
{
    std::vector<Tensor> out;
    out.reserve(starts.size());
    for (std::size_t t0 : starts) out.push_back(persistence_baseline(series, t0, t_in, t_out));
    return out;
}

MetricReport evaluate_raw(std::span<const Tensor> predictions, const SignalSeries& raw,
                          std::span<const std::size_t> starts, std::size_t t_in)
{
    if (predictions.size() != starts.size()) throw ShapeError("evaluate: one prediction per start expected");
    if (predictions.empty()) throw ShapeError("evaluate: no windows");
    const std::size_t t_out = predictions.front().dim(0);
    const std::size_t n = raw.nodes();
    const std::size_t d = raw.features();

    Accumulator total;
    std::vector<Accumulator> per(t_out);
    for (std::size_t w = 0; w < starts.size(); ++w) {
        const Tensor& p = predictions[w];
        if (p.rank() != 3 || p.dim(0) != t_out || p.dim(1) != n || p.dim(2) != d) {
            throw ShapeError("evaluate: prediction " + p.shape_string() + " does not match the series");
        }
        if (starts[w] + t_in + t_out > raw.steps()) throw DataError(DataErrorKind::too_short, "window past the end");
        for (std::size_t h = 0; h < t_out; ++h) {
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t f = 0; f < d; ++f) {
                    const double y = raw.values.at(starts[w] + t_in + h, i, f);
                    total.add(p.at(h, i, f), y);
                    per[h].add(p.at(h, i, f), y);
                }
            }
        }
    }

    MetricReport report;
    report.rmse = total.rmse();
    report.mae = total.mae();
    report.mape_percent = total.mape();
    report.count = total.n;
    report.masked_count = total.n - total.unmasked;
    if (total.unmasked == 0) throw UndefinedMetricError("evaluate: every target is zero");
    for (std::size_t h = 0; h < t_out; ++h) {
        report.horizons.push_back({h + 1, per[h].rmse(), per[h].mae(), per[h].mape()});
    }
    return report;
}

MetricReport evaluate(std::span<const Tensor> predictions, const SignalSeries& raw, std::span<const std::size_t> starts,
                      std::size_t t_in, const Normalizer& normalizer)
{
    std::vector<Tensor> denorm;
    denorm.reserve(predictions.size());
    for (const Tensor& p : predictions) denorm.push_back(normalizer.invert(p));
    return evaluate_raw(denorm, raw, starts, t_in);
}

std::string format_report_table(const MetricReport& report, const std::string& label)
{
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof line, "%-12s %-8s %12s %12s %12s\n", "model", "horizon", "rmse", "mae", "mape%");
    out << line;
    std::snprintf(line, sizeof line, "%-12s %-8s %12s %12s %12s\n", label.c_str(), "all", fixed(report.rmse, 5).c_str(),
                  fixed(report.mae, 5).c_str(), fixed(report.mape_percent, 3).c_str());
    out << line;
    for (const HorizonMetrics& h : report.horizons) {
        std::snprintf(line, sizeof line, "%-12s %-8zu %12s %12s %12s\n", label.c_str(), h.horizon,
                      fixed(h.rmse, 5).c_str(), fixed(h.mae, 5).c_str(), fixed(h.mape_percent, 3).c_str());
        out << line;
    }
    std::snprintf(line, sizeof line, "masked targets: %zu of %zu\n", report.masked_count, report.count);
    out << line;
    return out.str();
}

std::string format_report_records(const MetricReport& report, const std::string& label)
{
    std::ostringstream out;
    out.precision(10);
    out << "model=" << label << " horizon=all rmse=" << report.rmse << " mae=" << report.mae
        << " mape_percent=" << report.mape_percent << " masked=" << report.masked_count << " count=" << report.count
        << '\n';
    for (const HorizonMetrics& h : report.horizons) {
        out << "model=" << label << " horizon=" << h.horizon << " rmse=" << h.rmse << " mae=" << h.mae
            << " mape_percent=" << h.mape_percent << '\n';
    }
    return out.str();
}

} // namespace fedstgd
