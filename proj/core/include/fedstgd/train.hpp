#pragma once

#include "fedstgd/data.hpp"
#include "fedstgd/model.hpp"
#include "fedstgd/transport.hpp"

#include <chrono>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace fedstgd {

struct TrainConfig {
    HyperConfig model;
    std::size_t clients = 4;        // M
    std::size_t global_rounds = 30; // R_g; epochs in central mode
    std::size_t local_rounds = 20;  // R_l; minibatch steps per global round
    std::size_t batch_size = 16;
    double learning_rate = 1e-3;
    double weight_decay = 1e-4;
    double lr_decay = 0.3;
    std::vector<std::size_t> lr_milestones{5, 20, 40, 70, 90};
    std::uint64_t seed = 1;
    TransportKind transport = TransportKind::memory;
    std::chrono::milliseconds timeout{std::chrono::minutes(5)};
    GammaOrder gamma_order = GammaOrder::k_major;

    void validate() const;
    /// Learning rate in effect during global round (epoch) `round`.
    double learning_rate_at(std::size_t round) const;
};

/// Adam with L2 weight decay folded into the gradient.
class Adam {
public:
    Adam(double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

    /// Updates `params` in place. Missing gradients count as zero.
    void step(std::span<Tensor* const> params, std::span<const Tensor* const> grads, double lr, double weight_decay);
    std::size_t steps() const { return t_; }

private:
    double beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

/// Window starts for minibatch `step`: `batch` distinct entries of `pool`,
/// a pure function of (seed, step) so every party draws the same batch.
std::vector<std::size_t> batch_starts(std::uint64_t seed, std::size_t step, std::span<const std::size_t> pool,
                                      std::size_t batch);

/// Mixer used by a party that sees all nodes. `owner` is only read by
/// the intra_only ablation.
std::unique_ptr<SpatialMixer> make_central_mixer(const ModelBinding& model, std::span<const std::size_t> owner,
                                                 CentralAdjacency adjacency);

/// Model parameters after training: Θ plus every node's private embedding
/// in global node order.
struct TrainedModel {
    GlobalParams params;
    Tensor node_embeddings;
};

struct RoundStats {
    std::size_t round = 0;
    double train_loss = 0.0;
    std::uint64_t bytes_up = 0;
    std::uint64_t bytes_down = 0;
    std::uint64_t messages_up = 0;
    std::uint64_t messages_down = 0;
    std::uint64_t param_bytes_up = 0;
    std::uint64_t param_bytes_down = 0;
    std::vector<std::uint64_t> local_bytes_up;   // per local round
    std::vector<std::uint64_t> local_bytes_down; // per local round
    double seconds = 0.0;

    /// `round=.. train_loss=.. bytes_up=.. bytes_down=.. seconds=..`; the
    /// seconds field is dropped when `with_seconds` is false.
    std::string log_line(bool with_seconds = true) const;
};

/// Called after every optimizer step with the party's current parameters.
/// `party` is the client id (0 in central mode). May run on client threads.
using StepObserver =
    std::function<void(std::size_t party, std::size_t step, const GlobalParams& params, const Tensor& embeddings)>;
using RoundObserver = std::function<void(const RoundStats&)>;

struct TrainHooks {
    StepObserver on_step;
    RoundObserver on_round;
};

struct TrainResult {
    TrainedModel model;
    std::vector<RoundStats> rounds;
};

/// Centralised training over all nodes: R_g epochs of R_l minibatch steps.
TrainResult train_central(const TrainConfig& cfg, const SignalSeries& normalized, const WindowPlan& plan,
                          const Partition& partition, CentralAdjacency adjacency = CentralAdjacency::approximated,
                          const TrainHooks& hooks = {});

/// Forward pass of the centralised model over windows; returns one
/// T_out×N×d prediction per start (normalized units).
std::vector<Tensor> predict_central(const HyperConfig& cfg, const TrainedModel& model, const SignalSeries& normalized,
                                    std::span<const std::size_t> starts, const Partition& partition,
                                    CentralAdjacency adjacency = CentralAdjacency::approximated,
                                    std::size_t batch = 16);

} // namespace fedstgd
