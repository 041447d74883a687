#pragma once

#include "fedstgd/federated.hpp"
#include "fedstgd/metrics.hpp"
#include "fedstgd/run_config.hpp"

#include <vector>

namespace fedstgd {

/// A dataset prepared for training: raw and normalized series, the window
/// plan and the node partition.
struct Experiment {
    SignalSeries raw;
    SignalSeries normalized;
    Normalizer normalizer;
    WindowPlan plan;
    Partition partition;
};

/// Loads `cfg.dataset` (or synthesizes from the synth_* keys when empty),
/// fits the normalizer on the training range and partitions the nodes. A
/// partition file named in the manifest wins over the configured scheme.
Experiment prepare_experiment(const RunConfig& cfg);

/// Writes manifest, signals and partition for a synthetic dataset.
DatasetManifest write_synthetic_dataset(const RunConfig& cfg, const std::filesystem::path& dir);

enum class TrainMode { central, federated };

TrainResult run_training(const RunConfig& cfg, const Experiment& exp, TrainMode mode, const TrainHooks& hooks = {});

/// Normalized predictions for every start.
std::vector<Tensor> run_prediction(const RunConfig& cfg, const Experiment& exp, const TrainedModel& model,
                                   TrainMode mode, std::span<const std::size_t> starts);

/// Θ, node embeddings, normalizer statistics and the run configuration.
Checkpoint make_checkpoint(const RunConfig& cfg, const Experiment& exp, const TrainedModel& model, TrainMode mode);
TrainedModel model_from_checkpoint(const Checkpoint& ckpt, const HyperConfig& cfg);
/// The run configuration stored in a checkpoint.
RunConfig config_from_checkpoint(const Checkpoint& ckpt);
TrainMode mode_from_checkpoint(const Checkpoint& ckpt);

} // namespace fedstgd
