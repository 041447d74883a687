#pragma once

#include "fedstgd/train.hpp"
#include "fedstgd/transport.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace fedstgd {

/// Θ_g = Σ_i (N_i/N)·Θ_i, accumulated from zero in ascending client order.
/// Throws ProtocolError on shape drift and ConfigError on a zero count.
GlobalParams fedavg(std::span<const GlobalParams> snapshots, std::span<const std::size_t> node_counts);

/// Sees every message crossing the server, in either direction.
using MessageObserver = std::function<void(const ProtocolMessage& msg, bool upstream)>;

struct FederatedHooks {
    StepObserver on_step;
    RoundObserver on_round;
    MessageObserver on_message;
};

/// Client side of one collective round over an endpoint: sends the stacked
/// P and Q shares for (t, k) and waits for the stacked sums.
class NetworkExchange final : public ShareExchange {
public:
    NetworkExchange(Endpoint& endpoint, std::uint16_t client_id, std::uint32_t round, std::uint32_t timestep_base,
                    std::chrono::milliseconds timeout);
    ShareBundle exchange(std::size_t step, std::uint8_t k, ShareBundle own) override;

private:
    Endpoint* endpoint_;
    std::uint16_t client_id_;
    std::uint32_t round_;
    std::uint32_t timestep_base_;
    std::chrono::milliseconds timeout_;
};

/// One federated client: private node embeddings, a snapshot of Θ, and its
/// optimizer state. Only shares, Θ and its training loss leave it.
class ClientNode {
public:
    ClientNode(std::uint16_t id, std::vector<std::size_t> nodes, const TrainConfig& cfg, const SignalSeries& normalized,
               std::span<const std::size_t> train_starts, Tensor node_embeddings);

    std::uint16_t id() const { return id_; }
    const std::vector<std::size_t>& nodes() const { return nodes_; }
    const Tensor& node_embeddings() const { return embeddings_; }
    const GlobalParams& globals() const { return globals_; }

    /// Takes part in cfg.global_rounds rounds of training.
    void run_training(Endpoint& endpoint, const StepObserver& on_step);
    /// Forward-only participation; returns T_out×N_i×d per start. When
    /// `traces` is given it receives the per-step cell trace of every start.
    std::vector<Tensor> run_prediction(Endpoint& endpoint, std::span<const std::size_t> starts, std::uint32_t round,
                                       std::vector<std::vector<StepTrace>>* traces = nullptr);

private:
    double local_round(Endpoint& endpoint, std::size_t round, std::size_t local_step);
    void receive_globals(Endpoint& endpoint, std::uint32_t round);

    std::uint16_t id_;
    std::vector<std::size_t> nodes_;
    const TrainConfig* cfg_;
    const SignalSeries* data_;
    std::vector<std::size_t> train_starts_;
    GlobalParams globals_;
    Tensor embeddings_;
    Adam adam_;
};

/// Coordinator: barrier per (timestep, k), id-ordered reduction, FedAvg.
class ServerNode {
public:
    ServerNode(const TrainConfig& cfg, std::vector<Endpoint*> endpoints, std::vector<std::size_t> node_counts,
               GlobalParams initial, MessageObserver on_message = {});

    const GlobalParams& params() const { return params_; }

    std::vector<RoundStats> run_training(const RoundObserver& on_round);
    /// Services the share rounds of a prediction pass over `windows` windows.
    void run_prediction(std::size_t windows, std::uint32_t round);

private:
    void broadcast_params(std::uint32_t round);
    void collective_round(std::uint32_t round, std::uint32_t timestep, std::uint8_t k);
    ProtocolMessage expect(std::size_t client, MsgType type, std::uint32_t round, std::uint32_t timestep,
                           std::uint8_t k);
    void send(std::size_t client, const ProtocolMessage& msg);

    const TrainConfig* cfg_;
    std::vector<Endpoint*> endpoints_;
    std::vector<std::size_t> node_counts_;
    GlobalParams params_;
    MessageObserver on_message_;
    std::uint64_t messages_up_ = 0;
    std::uint64_t messages_down_ = 0;
};

/// Federated training over cfg.transport with one thread per client.
/// The partition defines the clients; cfg.clients must match its size.
TrainResult train_federated(const TrainConfig& cfg, const SignalSeries& normalized, const WindowPlan& plan,
                            const Partition& partition, const FederatedHooks& hooks = {});

/// Stacked federated forward pass; predictions are reassembled in global
/// node order, T_out×N×d per start.
std::vector<Tensor> predict_federated(const TrainConfig& cfg, const TrainedModel& model, const SignalSeries& normalized,
                                      std::span<const std::size_t> starts, const Partition& partition,
                                      const MessageObserver& on_message = {});

/// Stacked federated forward pass that also returns the per-step cell
/// trace of every start, with client rows reassembled in global node order.
struct FederatedTrace {
    std::vector<Tensor> predictions;
    std::vector<std::vector<StepTrace>> steps; // [start][step]
};

FederatedTrace trace_federated(const TrainConfig& cfg, const TrainedModel& model, const SignalSeries& normalized,
                               std::span<const std::size_t> starts, const Partition& partition);

/// Closed-form wire bytes (frames plus length prefixes), counted at the
/// server, for one local round and one global round.
struct CommPrediction {
    std::uint64_t p_frame_bytes = 0;    // one P share or P sum message
    std::uint64_t q_frame_bytes = 0;    // one Q share or Q sum message
    std::uint64_t share_payload_up = 0; // all clients, one local round, tensor values only
    std::uint64_t local_up = 0;
    std::uint64_t local_down = 0;
    std::uint64_t param_up = 0;
    std::uint64_t param_down = 0;
    std::uint64_t round_up = 0;
    std::uint64_t round_down = 0;
    std::size_t theta_size = 0;
};

CommPrediction comm_account(const TrainConfig& cfg, std::size_t feature_dim, std::size_t steps_per_day,
                            std::size_t train_windows);

/// Flags any payload tensor whose per-sample row extent equals a client's
/// node count.
class LocalityAudit {
public:
    explicit LocalityAudit(std::vector<std::size_t> client_sizes);
    void observe(const ProtocolMessage& msg);
    std::size_t messages() const { return messages_; }
    std::size_t tensors() const { return tensors_; }
    const std::vector<std::string>& violations() const { return violations_; }

private:
    std::vector<std::size_t> sizes_;
    std::size_t messages_ = 0;
    std::size_t tensors_ = 0;
    std::vector<std::string> violations_;
};

} // namespace fedstgd
