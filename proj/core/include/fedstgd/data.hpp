#pragma once

#include "fedstgd/keyvalue.hpp"
#include "fedstgd/model.hpp"
#include "fedstgd/tensor.hpp"

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace fedstgd {

struct DatasetManifest {
    std::string name = "synthetic";
    std::size_t num_nodes = 0;
    std::size_t feature_dim = 1;
    std::size_t steps_per_day = 48;
    std::filesystem::path signal_file;
    std::filesystem::path partition_file; // empty when absent

    void validate() const;
};

/// Relative file paths are resolved against the manifest's directory.
DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

struct SignalSeries {
    Tensor values; // T × N × d
    std::size_t start_slot = 0;
    std::size_t steps_per_day = 1;

    std::size_t steps() const { return values.dim(0); }
    std::size_t nodes() const { return values.dim(1); }
    std::size_t features() const { return values.dim(2); }
    /// N × d graph signal at time t.
    Tensor frame(std::size_t t) const;
};

/// Reads `t,node,v0..v{d-1}` rows sorted by t then node. Gaps, duplicates,
/// out-of-order rows and non-finite values each raise a distinct DataError.
SignalSeries load_signals(const std::filesystem::path& path, std::size_t nodes, std::size_t feature_dim);
SignalSeries load_dataset(const DatasetManifest& manifest);
void write_signals(const std::filesystem::path& path, const SignalSeries& series);

struct SynthOptions {
    std::uint64_t seed = 7;
    std::size_t nodes = 16;
    std::size_t steps = 2000;
    std::size_t features = 1;
    std::size_t steps_per_day = 48;
    double noise = 0.3;
    double retention = 0.8; // share of the state kept from one step to the next
    double advection = 0.5; // share of the retained state taken from the upstream node
    double level = 10.0;
    double amplitude = 5.0;
};

/// Ring-graph diffusion driven by a daily sinusoid with a per-node phase.
SignalSeries synth_diffusion(const SynthOptions& options);

/// Z-score per feature, pooled over nodes and time of the fitting range.
class Normalizer {
public:
    Normalizer() = default;
    Normalizer(std::vector<double> mean, std::vector<double> std);

    /// Statistics over time steps [begin, end) only.
    static Normalizer fit(const SignalSeries& series, std::size_t begin, std::size_t end);

    /// Feature of flat element i is i mod d, which holds for T×N×d series,
    /// N×d frames and N×(t_out·d) packed targets alike.
    Tensor apply(const Tensor& raw) const;
    Tensor invert(const Tensor& normalized) const;

    const std::vector<double>& mean() const { return mean_; }
    const std::vector<double>& std() const { return std_; }

private:
    std::vector<double> mean_;
    std::vector<double> std_;
};

struct SplitRatios {
    double train = 0.7;
    double val = 0.1;
    double test = 0.2;
};

struct SplitWindows {
    std::size_t begin = 0; // time range [begin, end)
    std::size_t end = 0;
    std::vector<std::size_t> starts; // first input step of each window
};

struct WindowPlan {
    SplitWindows train, val, test;
};

/// Chronological split; windows of t_in + t_out steps at stride 1 that never
/// cross a split border. Throws DataError(too_short) if a split holds none.
WindowPlan split_and_window(std::size_t steps, std::size_t t_in, std::size_t t_out, SplitRatios ratios = {});
WindowPlan split_and_window(const SignalSeries& series, std::size_t t_in, std::size_t t_out,
                            SplitRatios ratios = {});

/// Window starting at step t0, restricted to `node_ids` (all nodes if empty).
/// The target packs horizon h, feature f at column h·d + f.
WindowData make_window(const SignalSeries& series, std::size_t t0, std::size_t t_in, std::size_t t_out,
                       std::span<const std::size_t> node_ids = {});

using Partition = std::vector<std::vector<std::size_t>>;

enum class PartitionScheme { contiguous_equal, contiguous_skewed };

PartitionScheme parse_partition_scheme(std::string_view name);

/// Contiguous node ranges. Equal sizes differ by at most one with the larger
/// ranges first; skewed sizes follow weights skew^i (skew in (0, 1]).
Partition partition_graph(std::size_t nodes, std::size_t clients, PartitionScheme scheme, double skew = 0.5);

/// Reads `node,client` rows. Every node must be assigned exactly once and
/// client ids must be contiguous from 0.
Partition load_partition(const std::filesystem::path& path, std::size_t nodes);
void write_partition(const std::filesystem::path& path, const Partition& partition);
std::vector<std::size_t> owner_of_nodes(const Partition& partition, std::size_t nodes);

/// Named tensors plus free-form metadata, stored as a text manifest of shapes
/// (`checkpoint.txt`) and a raw little-endian f64 blob (`checkpoint.bin`).
struct Checkpoint {
    KeyValues meta;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor& tensor(std::string_view name) const;
    const std::string& meta_value(std::string_view key) const;
};

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

} // namespace fedstgd
