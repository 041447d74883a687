#include "fedstgd/data.hpp"

#include "bytes.hpp"
#include "fedstgd/errors.hpp"
#include "fedstgd/random.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

namespace fedstgd {

std::string_view to_string(DataErrorKind kind)
{
    switch (kind) {
    case DataErrorKind::io: return "io";
    case DataErrorKind::parse: return "parse";
    case DataErrorKind::ordering: return "ordering";
    case DataErrorKind::missing_cell: return "missing_cell";
    case DataErrorKind::duplicate: return "duplicate";
    case DataErrorKind::non_finite: return "non_finite";
    case DataErrorKind::unassigned: return "unassigned";
    case DataErrorKind::client_gap: return "client_gap";
    case DataErrorKind::too_short: return "too_short";
    }
    return "unknown";
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        std::string_view field = line.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                                    : comma - start);
        while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
        while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r')) {
            field.remove_suffix(1);
        }
        out.push_back(field);
        if (comma == std::string_view::npos) {
            return out;
        }
        start = comma + 1;
    }
}

// Iterates over non-blank lines, reporting 1-based line numbers.
template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn)
{
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
        fn(line_no, line);
    }
}

std::size_t field_index(std::string_view field, const std::string& where)
{
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
        throw DataError(DataErrorKind::parse, where + ": bad integer '" + std::string(field) + "'");
    }
    return v;
}

std::string at_line(const std::filesystem::path& path, std::size_t line)
{
    return path.string() + ":" + std::to_string(line);
}

} // namespace

// ---------------------------------------------------------------------------

void DatasetManifest::validate() const
{
    if (num_nodes == 0) throw ConfigError("manifest: num_nodes must be >= 1");
    if (feature_dim == 0) throw ConfigError("manifest: feature_dim must be >= 1");
    if (steps_per_day == 0) throw ConfigError("manifest: steps_per_day must be >= 1");
    if (signal_file.empty()) throw ConfigError("manifest: signal_file missing");
}

DatasetManifest read_manifest(const std::filesystem::path& path)
{
    DatasetManifest m;
    m.num_nodes = 0;
    const auto base = path.parent_path();
    for (const auto& [key, value] : read_key_values(path)) {
        if (key == "name") {
            m.name = value;
        } else if (key == "num_nodes") {
            m.num_nodes = parse_size(value, key);
        } else if (key == "feature_dim") {
            m.feature_dim = parse_size(value, key);
        } else if (key == "steps_per_day") {
            m.steps_per_day = parse_size(value, key);
        } else if (key == "signal_file") {
            m.signal_file = base / value;
        } else if (key == "partition_file") {
            m.partition_file = value.empty() ? std::filesystem::path() : base / value;
        } else {
            throw ConfigError("manifest: unknown key '" + key + "'");
        }
    }
    m.validate();
    return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& m)
{
    m.validate();
    KeyValues kv{
        {"name", m.name},
        {"num_nodes", std::to_string(m.num_nodes)},
        {"feature_dim", std::to_string(m.feature_dim)},
        {"steps_per_day", std::to_string(m.steps_per_day)},
        {"signal_file", m.signal_file.lexically_relative(path.parent_path()).generic_string()},
    };
    if (!m.partition_file.empty()) {
        kv.emplace_back("partition_file", m.partition_file.lexically_relative(path.parent_path()).generic_string());
    }
    write_text_file(path, format_key_values(kv));
}

// ---------------------------------------------------------------------------

Tensor SignalSeries::frame(std::size_t t) const
{
    const std::size_t n = nodes();
    const std::size_t d = features();
    Tensor out = Tensor::zeros(n, d);
    std::copy_n(values.data() + t * n * d, n * d, out.data());
    return out;
}

SignalSeries load_signals(const std::filesystem::path& path, std::size_t nodes, std::size_t feature_dim)
{
    if (nodes == 0 || feature_dim == 0) {
        throw ConfigError("load_signals: nodes and feature_dim must be >= 1");
    }
    const std::string text = read_text_file(path);

    std::vector<double> data;
    std::vector<std::pair<std::size_t, std::size_t>> keys; // flat (t, node) index, line
    bool header_seen = false;
    for_each_line(text, [&](std::size_t line_no, std::string_view line) {
        const auto fields = split_fields(line);
        const std::string where = at_line(path, line_no);
        if (!header_seen) {
            bool ok = fields.size() == feature_dim + 2 && fields[0] == "t" && fields[1] == "node";
            for (std::size_t f = 0; ok && f < feature_dim; ++f) {
                ok = fields[f + 2] == "v" + std::to_string(f);
            }
            if (!ok) {
                throw DataError(DataErrorKind::parse, where + ": expected header t,node,v0..v" +
                                                          std::to_string(feature_dim - 1));
            }
            header_seen = true;
            return;
        }
        if (fields.size() != feature_dim + 2) {
            throw DataError(DataErrorKind::parse, where + ": expected " + std::to_string(feature_dim + 2) + " fields");
        }
        const std::size_t t = field_index(fields[0], where);
        const std::size_t node = field_index(fields[1], where);
        if (node >= nodes) {
            throw DataError(DataErrorKind::parse, where + ": node " + std::to_string(node) + " out of range");
        }
        keys.push_back({t * nodes + node, line_no});
        for (std::size_t f = 0; f < feature_dim; ++f) {
            double v = 0.0;
            const auto s = fields[f + 2];
            const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
                throw DataError(DataErrorKind::parse, where + ": bad value '" + std::string(s) + "'");
            }
            if (!std::isfinite(v)) {
                throw DataError(DataErrorKind::non_finite, where + ": non-finite value");
            }
            data.push_back(v);
        }
    });
    if (!header_seen) {
        throw DataError(DataErrorKind::parse, path.string() + ": empty signal file");
    }
    if (keys.empty()) {
        throw DataError(DataErrorKind::too_short, path.string() + ": no rows");
    }
    // Ordering first, so a shuffled file is reported as such rather than as a gap.
    for (std::size_t i = 1; i < keys.size(); ++i) {
        const std::string where = at_line(path, keys[i].second);
        if (keys[i].first == keys[i - 1].first) {
            throw DataError(DataErrorKind::duplicate, where + ": duplicate cell t=" +
                                                          std::to_string(keys[i].first / nodes) +
                                                          " node=" + std::to_string(keys[i].first % nodes));
        }
        if (keys[i].first < keys[i - 1].first) {
            throw DataError(DataErrorKind::ordering, where + ": rows must be sorted by t then node");
        }
    }
    std::size_t expected = 0;
    for (const auto& [idx, line] : keys) {
        if (idx != expected) break;
        ++expected;
    }
    if (expected != keys.size()) {
        throw DataError(DataErrorKind::missing_cell, path.string() + ": missing cell t=" +
                                                         std::to_string(expected / nodes) +
                                                         " node=" + std::to_string(expected % nodes));
    }
    if (expected % nodes != 0) {
        throw DataError(DataErrorKind::missing_cell, path.string() + ": missing cell t=" +
                                                         std::to_string(expected / nodes) +
                                                         " node=" + std::to_string(expected % nodes));
    }
    SignalSeries s;
    s.values = Tensor({expected / nodes, nodes, feature_dim}, std::move(data));
    return s;
}

SignalSeries load_dataset(const DatasetManifest& manifest)
{
    manifest.validate();
    SignalSeries s = load_signals(manifest.signal_file, manifest.num_nodes, manifest.feature_dim);
    s.steps_per_day = manifest.steps_per_day;
    return s;
}

void write_signals(const std::filesystem::path& path, const SignalSeries& series)
{
    std::string out = "t,node";
    for (std::size_t f = 0; f < series.features(); ++f) out += ",v" + std::to_string(f);
    out += '\n';
    const auto values = series.values.values();
    std::size_t i = 0;
    for (std::size_t t = 0; t < series.steps(); ++t) {
        for (std::size_t n = 0; n < series.nodes(); ++n) {
            out += std::to_string(t) + ',' + std::to_string(n);
            for (std::size_t f = 0; f < series.features(); ++f) {
                out += ',';
                out += format_double(values[i++]);
            }
            out += '\n';
        }
    }
    write_text_file(path, out);
}

// ---------------------------------------------------------------------------

SignalSeries synth_diffusion(const SynthOptions& o)
{
    if (o.nodes == 0 || o.steps == 0 || o.features == 0 || o.steps_per_day == 0) {
        throw ConfigError("synth_diffusion: nodes, steps, features and steps_per_day must be >= 1");
    }
    if (!(o.retention >= 0.0 && o.retention < 1.0) || !(o.advection >= 0.0 && o.advection <= 1.0)) {
        throw ConfigError("synth_diffusion: retention must be in [0,1) and advection in [0,1]");
    }
    const std::size_t n = o.nodes;
    const std::size_t period = o.steps_per_day;
    const CounterRng phase_rng(o.seed, 1);
    const CounterRng noise_rng(o.seed, 2);

    std::vector<double> phase(n);
    for (std::size_t i = 0; i < n; ++i) phase[i] = 2.0 * std::numbers::pi * phase_rng.uniform(i);

    // Whole days of burn-in so the first kept step sits at slot 0.
    const std::size_t burn_in = period * ((400 + period - 1) / period);
    std::vector<double> u(n, o.level);
    std::vector<double> next(n);

    SignalSeries s;
    s.steps_per_day = period;
    s.values = Tensor({o.steps, n, o.features});
    for (std::size_t step = 0; step < burn_in + o.steps; ++step) {
        if (step >= burn_in) {
            const std::size_t t = step - burn_in;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t f = 0; f < o.features; ++f) {
                    s.values.at(t, i, f) = (1.0 + 0.25 * static_cast<double>(f)) * u[i] + static_cast<double>(f);
                }
            }
        }
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(step % period) / static_cast<double>(period);
        for (std::size_t i = 0; i < n; ++i) {
            const double upstream = u[(i + n - 1) % n];
            const double forcing = o.level + o.amplitude * std::sin(angle + phase[i]);
            double v = o.retention * ((1.0 - o.advection) * u[i] + o.advection * upstream) +
                       (1.0 - o.retention) * forcing;
            if (o.noise != 0.0) v += o.noise * noise_rng.normal(step * n + i);
            next[i] = v;
        }
        u.swap(next);
    }
    return s;
}

// ---------------------------------------------------------------------------

Normalizer::Normalizer(std::vector<double> mean, std::vector<double> std) : mean_(std::move(mean)), std_(std::move(std))
{
    if (mean_.size() != std_.size() || mean_.empty()) {
        throw ShapeError("Normalizer: mean and std must have the same non-zero length");
    }
    for (double s : std_) {
        if (!(s > 0.0) || !std::isfinite(s)) throw NumericError("Normalizer: std must be positive and finite");
    }
}

Normalizer Normalizer::fit(const SignalSeries& series, std::size_t begin, std::size_t end)
{
    if (begin >= end || end > series.steps()) {
        throw ShapeError("Normalizer::fit: bad time range");
    }
    const std::size_t d = series.features();
    const std::size_t per_step = series.nodes() * d;
    const auto values = series.values.values().subspan(begin * per_step, (end - begin) * per_step);
    const double count = static_cast<double>(values.size() / d);

    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < values.size(); ++i) mean[i % d] += values[i];
    for (double& m : mean) m /= count;
    std::vector<double> var(d, 0.0);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double c = values[i] - mean[i % d];
        var[i % d] += c * c;
    }
    std::vector<double> std(d);
    for (std::size_t f = 0; f < d; ++f) {
        const double s = std::sqrt(var[f] / count);
        std[f] = s > 0.0 ? s : 1.0;
    }
    return Normalizer(std::move(mean), std::move(std));
}

Tensor Normalizer::apply(const Tensor& raw) const
{
    const std::size_t d = mean_.size();
    if (d == 0 || raw.size() % d != 0) throw ShapeError("Normalizer::apply: " + raw.shape_string());
    Tensor out = raw;
    auto v = out.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = (v[i] - mean_[i % d]) / std_[i % d];
    return out;
}

Tensor Normalizer::invert(const Tensor& normalized) const
{
    const std::size_t d = mean_.size();
    if (d == 0 || normalized.size() % d != 0) throw ShapeError("Normalizer::invert: " + normalized.shape_string());
    Tensor out = normalized;
    auto v = out.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = v[i] * std_[i % d] + mean_[i % d];
    return out;
}

// ---------------------------------------------------------------------------

WindowPlan split_and_window(std::size_t steps, std::size_t t_in, std::size_t t_out, SplitRatios r)
{
    if (t_in == 0 || t_out == 0) throw ConfigError("split_and_window: t_in and t_out must be >= 1");
    if (r.train <= 0.0 || r.val < 0.0 || r.test < 0.0 || std::abs(r.train + r.val + r.test - 1.0) > 1e-9) {
        throw ConfigError("split_and_window: ratios must be non-negative, train positive, and sum to 1");
    }
    const std::size_t span = t_in + t_out;
    if (span > steps) {
        throw DataError(DataErrorKind::too_short, "split_and_window: series of " + std::to_string(steps) +
                                                      " steps is shorter than one window");
    }
    const auto len_train = static_cast<std::size_t>(std::floor(r.train * static_cast<double>(steps) + 1e-9));
    const auto len_val = static_cast<std::size_t>(std::floor(r.val * static_cast<double>(steps) + 1e-9));

    auto make = [&](std::size_t begin, std::size_t end, double ratio, const char* name) {
        SplitWindows s{begin, end, {}};
        if (ratio == 0.0) return s;
        if (end - begin < span) {
            throw DataError(DataErrorKind::too_short, std::string("split_and_window: ") + name + " split has " +
                                                          std::to_string(end - begin) + " steps, need " +
                                                          std::to_string(span));
        }
        for (std::size_t t = begin; t + span <= end; ++t) s.starts.push_back(t);
        return s;
    };
    WindowPlan plan;
    plan.train = make(0, len_train, r.train, "train");
    plan.val = make(len_train, len_train + len_val, r.val, "val");
    plan.test = make(len_train + len_val, steps, r.test, "test");
    return plan;
}

WindowPlan split_and_window(const SignalSeries& series, std::size_t t_in, std::size_t t_out, SplitRatios ratios)
{
    return split_and_window(series.steps(), t_in, t_out, ratios);
}

WindowData make_window(const SignalSeries& series, std::size_t t0, std::size_t t_in, std::size_t t_out,
                       std::span<const std::size_t> node_ids)
{
    if (t0 + t_in + t_out > series.steps()) throw ShapeError("make_window: window runs past the series");
    std::vector<std::size_t> all;
    if (node_ids.empty()) {
        all.resize(series.nodes());
        std::iota(all.begin(), all.end(), 0);
        node_ids = all;
    }
    const std::size_t d = series.features();
    WindowData w;
    w.start_slot = (series.start_slot + t0) % series.steps_per_day;
    for (std::size_t t = 0; t < t_in; ++t) {
        Tensor f = Tensor::zeros(node_ids.size(), d);
        for (std::size_t r = 0; r < node_ids.size(); ++r) {
            for (std::size_t c = 0; c < d; ++c) f.at(r, c) = series.values.at(t0 + t, node_ids[r], c);
        }
        w.frames.push_back(std::move(f));
    }
    w.target = Tensor::zeros(node_ids.size(), t_out * d);
    for (std::size_t h = 0; h < t_out; ++h) {
        for (std::size_t r = 0; r < node_ids.size(); ++r) {
            for (std::size_t c = 0; c < d; ++c) {
                w.target.at(r, h * d + c) = series.values.at(t0 + t_in + h, node_ids[r], c);
            }
        }
    }
    return w;
}

// ---------------------------------------------------------------------------

PartitionScheme parse_partition_scheme(std::string_view name)
{
    if (name == "contiguous-equal") return PartitionScheme::contiguous_equal;
    if (name == "contiguous-skewed") return PartitionScheme::contiguous_skewed;
    throw ConfigError("unknown partition scheme '" + std::string(name) + "'");
}

Partition partition_graph(std::size_t nodes, std::size_t clients, PartitionScheme scheme, double skew)
{
    if (clients == 0 || clients > nodes) {
        throw ConfigError("partition_graph: need 1 <= M <= N, got M=" + std::to_string(clients) +
                          " N=" + std::to_string(nodes));
    }
    std::vector<std::size_t> sizes(clients, nodes / clients);
    if (scheme == PartitionScheme::contiguous_equal) {
        for (std::size_t i = 0; i < nodes % clients; ++i) ++sizes[i];
    } else {
        if (!(skew > 0.0 && skew <= 1.0)) throw ConfigError("partition_graph: skew must be in (0, 1]");
        // One node each, then the rest by largest remainder over weights skew^i.
        std::vector<double> weight(clients);
        double total = 0.0;
        for (std::size_t i = 0; i < clients; ++i) total += weight[i] = std::pow(skew, static_cast<double>(i));
        const std::size_t spare = nodes - clients;
        std::vector<double> remainder(clients);
        std::size_t assigned = 0;
        for (std::size_t i = 0; i < clients; ++i) {
            const double share = static_cast<double>(spare) * weight[i] / total;
            const auto whole = static_cast<std::size_t>(std::floor(share));
            sizes[i] = 1 + whole;
            remainder[i] = share - static_cast<double>(whole);
            assigned += whole;
        }
        std::vector<std::size_t> order(clients);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
        for (std::size_t i = 0; assigned < spare; ++i, ++assigned) ++sizes[order[i]];
    }
    Partition out(clients);
    std::size_t next = 0;
    for (std::size_t i = 0; i < clients; ++i) {
        for (std::size_t k = 0; k < sizes[i]; ++k) out[i].push_back(next++);
    }
    return out;
}

Partition load_partition(const std::filesystem::path& path, std::size_t nodes)
{
    const std::string text = read_text_file(path);
    std::vector<long long> owner(nodes, -1);
    bool header_seen = false;
    for_each_line(text, [&](std::size_t line_no, std::string_view line) {
        const auto fields = split_fields(line);
        const std::string where = at_line(path, line_no);
        if (!header_seen) {
            if (fields.size() != 2 || fields[0] != "node" || fields[1] != "client") {
                throw DataError(DataErrorKind::parse, where + ": expected header node,client");
            }
            header_seen = true;
            return;
        }
        if (fields.size() != 2) throw DataError(DataErrorKind::parse, where + ": expected node,client");
        const std::size_t node = field_index(fields[0], where);
        const std::size_t client = field_index(fields[1], where);
        if (node >= nodes) {
            throw DataError(DataErrorKind::parse, where + ": node " + std::to_string(node) + " out of range");
        }
        if (owner[node] >= 0) {
            throw DataError(DataErrorKind::duplicate, where + ": node " + std::to_string(node) + " assigned twice");
        }
        owner[node] = static_cast<long long>(client);
    });
    if (!header_seen) throw DataError(DataErrorKind::parse, path.string() + ": empty partition file");

    std::size_t clients = 0;
    for (std::size_t n = 0; n < nodes; ++n) {
        if (owner[n] < 0) {
            throw DataError(DataErrorKind::unassigned, path.string() + ": node " + std::to_string(n) + " unassigned");
        }
        clients = std::max(clients, static_cast<std::size_t>(owner[n]) + 1);
    }
    Partition out(clients);
    for (std::size_t n = 0; n < nodes; ++n) out[static_cast<std::size_t>(owner[n])].push_back(n);
    for (std::size_t c = 0; c < clients; ++c) {
        if (out[c].empty()) {
            throw DataError(DataErrorKind::client_gap, path.string() + ": client " + std::to_string(c) + " has no nodes");
        }
    }
    return out;
}

void write_partition(const std::filesystem::path& path, const Partition& partition)
{
    std::vector<std::pair<std::size_t, std::size_t>> rows;
    for (std::size_t c = 0; c < partition.size(); ++c) {
        for (std::size_t n : partition[c]) rows.emplace_back(n, c);
    }
    std::sort(rows.begin(), rows.end());
    std::string out = "node,client\n";
    for (const auto& [n, c] : rows) out += std::to_string(n) + ',' + std::to_string(c) + '\n';
    write_text_file(path, out);
}

std::vector<std::size_t> owner_of_nodes(const Partition& partition, std::size_t nodes)
{
    std::vector<std::size_t> owner(nodes, partition.size());
    for (std::size_t c = 0; c < partition.size(); ++c) {
        for (std::size_t n : partition[c]) {
            if (n >= nodes || owner[n] != partition.size()) {
                throw ConfigError("partition: node " + std::to_string(n) + " out of range or assigned twice");
            }
            owner[n] = c;
        }
    }
    for (std::size_t n = 0; n < nodes; ++n) {
        if (owner[n] == partition.size()) throw ConfigError("partition: node " + std::to_string(n) + " unassigned");
    }
    return owner;
}

// ---------------------------------------------------------------------------

const Tensor& Checkpoint::tensor(std::string_view name) const
{
    for (const auto& [n, t] : tensors) {
        if (n == name) return t;
    }
    throw DataError(DataErrorKind::parse, "checkpoint: no tensor named '" + std::string(name) + "'");
}

const std::string& Checkpoint::meta_value(std::string_view key) const
{
    for (const auto& [k, v] : meta) {
        if (k == key) return v;
    }
    throw DataError(DataErrorKind::parse, "checkpoint: no metadata key '" + std::string(key) + "'");
}

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt)
{
    std::filesystem::create_directories(dir);
    KeyValues manifest{{"format", "fedstgd-checkpoint-1"}};
    for (const auto& [k, v] : ckpt.meta) manifest.emplace_back("meta." + k, v);
    std::vector<std::uint8_t> blob;
    for (const auto& [name, t] : ckpt.tensors) {
        std::string dims;
        for (std::size_t i = 0; i < t.rank(); ++i) dims += (i ? "," : "") + std::to_string(t.dim(i));
        manifest.emplace_back("tensor." + name, dims);
        detail::put_f64s(blob, t.values());
    }
    write_text_file(dir / "checkpoint.txt", format_key_values(manifest));
    write_text_file(dir / "checkpoint.bin",
                    std::string_view(reinterpret_cast<const char*>(blob.data()), blob.size()));
}

Checkpoint load_checkpoint(const std::filesystem::path& dir)
{
    const KeyValues manifest = read_key_values(dir / "checkpoint.txt");
    const std::string blob = read_text_file(dir / "checkpoint.bin");
    detail::ByteReader reader(reinterpret_cast<const std::uint8_t*>(blob.data()), blob.size());

    Checkpoint ckpt;
    bool format_ok = false;
    for (const auto& [key, value] : manifest) {
        if (key == "format") {
            format_ok = value == "fedstgd-checkpoint-1";
        } else if (key.rfind("meta.", 0) == 0) {
            ckpt.meta.emplace_back(key.substr(5), value);
        } else if (key.rfind("tensor.", 0) == 0) {
            Dims dims;
            for (auto part : split_fields(value)) dims.push_back(field_index(part, "checkpoint " + key));
            Tensor t(dims);
            for (double& v : t.values()) v = reader.f64();
            if (reader.overrun()) throw DataError(DataErrorKind::too_short, "checkpoint: blob shorter than manifest");
            ckpt.tensors.emplace_back(key.substr(7), std::move(t));
        } else {
            throw DataError(DataErrorKind::parse, "checkpoint: unknown key '" + key + "'");
        }
    }
    if (!format_ok) throw DataError(DataErrorKind::parse, "checkpoint: missing or unknown format tag");
    if (reader.remaining() != 0) throw DataError(DataErrorKind::parse, "checkpoint: blob longer than manifest");
    return ckpt;
}

} // namespace fedstgd
