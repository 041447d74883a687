#include "fedstgd/pipeline.hpp"

#include "fedstgd/errors.hpp"

namespace fedstgd {

Experiment prepare_experiment(const RunConfig& cfg)
{
    cfg.validate();
    Experiment exp;
    std::filesystem::path partition_file;
    if (cfg.dataset.empty()) {
        exp.raw = synth_diffusion(cfg.synth);
    } else {
        const DatasetManifest manifest = read_manifest(cfg.dataset);
        exp.raw = load_dataset(manifest);
        partition_file = manifest.partition_file;
    }
    exp.plan = split_and_window(exp.raw, cfg.train.model.t_in, cfg.train.model.t_out, cfg.split);
    exp.normalizer = Normalizer::fit(exp.raw, exp.plan.train.begin, exp.plan.train.end);
    exp.normalized = exp.raw;
    exp.normalized.values = exp.normalizer.apply(exp.raw.values);
    exp.partition = partition_file.empty()
                        ? partition_graph(exp.raw.nodes(), cfg.train.clients, cfg.partition, cfg.skew)
                        : load_partition(partition_file, exp.raw.nodes());
    if (exp.partition.size() != cfg.train.clients) {
        throw ConfigError("partition file has " + std::to_string(exp.partition.size()) + " clients but clients=" +
                          std::to_string(cfg.train.clients));
    }
    return exp;
}

DatasetManifest write_synthetic_dataset(const RunConfig& cfg, const std::filesystem::path& dir)
{
    cfg.validate();
    std::filesystem::create_directories(dir);
    const SignalSeries series = synth_diffusion(cfg.synth);
    DatasetManifest manifest;
    manifest.name = "synth_diffusion";
    manifest.num_nodes = series.nodes();
    manifest.feature_dim = series.features();
    manifest.steps_per_day = series.steps_per_day;
    manifest.signal_file = dir / "signals.csv";
    manifest.partition_file = dir / "partition.csv";
    write_signals(manifest.signal_file, series);
    write_partition(manifest.partition_file,
                    partition_graph(series.nodes(), cfg.train.clients, cfg.partition, cfg.skew));
    write_manifest(dir / "manifest.txt", manifest);
    return manifest;
}

TrainResult run_training(const RunConfig& cfg, const Experiment& exp, TrainMode mode, const TrainHooks& hooks)
{
    if (mode == TrainMode::central) {
        return train_central(cfg.train, exp.normalized, exp.plan, exp.partition, cfg.adjacency, hooks);
    }
    FederatedHooks fh;
    fh.on_step = hooks.on_step;
    fh.on_round = hooks.on_round;
    return train_federated(cfg.train, exp.normalized, exp.plan, exp.partition, fh);
}

std::vector<Tensor> run_prediction(const RunConfig& cfg, const Experiment& exp, const TrainedModel& model,
                                   TrainMode mode, std::span<const std::size_t> starts)
{
    if (mode == TrainMode::central) {
        return predict_central(cfg.train.model, model, exp.normalized, starts, exp.partition, cfg.adjacency);
    }
    return predict_federated(cfg.train, model, exp.normalized, starts, exp.partition);
}

Checkpoint make_checkpoint(const RunConfig& cfg, const Experiment& exp, const TrainedModel& model, TrainMode mode)
{
    Checkpoint ckpt;
    ckpt.meta.emplace_back("train_mode", mode == TrainMode::central ? "central" : "federated");
    ckpt.meta.emplace_back("theta_size", std::to_string(model.params.flat_size()));
    for (const auto& [k, v] : cfg.to_key_values()) ckpt.meta.emplace_back("config." + k, v);
    for (std::size_t s = 0; s < GlobalParams::kCount; ++s) {
        ckpt.tensors.emplace_back(std::string(GlobalParams::kNames[s]), model.params.tensors[s]);
    }
    ckpt.tensors.emplace_back("E_nu", model.node_embeddings);
    const std::size_t d = exp.normalizer.mean().size();
    ckpt.tensors.emplace_back("norm_mean", Tensor({d}, exp.normalizer.mean()));
    ckpt.tensors.emplace_back("norm_std", Tensor({d}, exp.normalizer.std()));
    return ckpt;
}

TrainedModel model_from_checkpoint(const Checkpoint& ckpt, const HyperConfig& cfg)
{
    const Tensor& time = ckpt.tensor("E_tau");
    const Tensor& affinity = ckpt.tensor("W_mlp");
    TrainedModel model{GlobalParams::zeros(cfg, affinity.dim(0), time.dim(0)), ckpt.tensor("E_nu")};
    for (std::size_t s = 0; s < GlobalParams::kCount; ++s) {
        const Tensor& t = ckpt.tensor(GlobalParams::kNames[s]);
        if (t.dims() != model.params.tensors[s].dims()) {
            throw DataError(DataErrorKind::parse, "checkpoint tensor " + std::string(GlobalParams::kNames[s]) +
                                                      " has shape " + t.shape_string() + ", expected " +
                                                      model.params.tensors[s].shape_string());
        }
        model.params.tensors[s] = t;
    }
    if (model.node_embeddings.rank() != 2 || model.node_embeddings.dim(1) != cfg.node_dim) {
        throw DataError(DataErrorKind::parse, "checkpoint E_nu does not match node_dim");
    }
    return model;
}

RunConfig config_from_checkpoint(const Checkpoint& ckpt)
{
    RunConfig cfg;
    for (const auto& [k, v] : ckpt.meta) {
        if (k.rfind("config.", 0) == 0) cfg.set(std::string_view(k).substr(7), v);
    }
    return cfg;
}

TrainMode mode_from_checkpoint(const Checkpoint& ckpt)
{
    return ckpt.meta_value("train_mode") == "central" ? TrainMode::central : TrainMode::federated;
}

} // namespace fedstgd
