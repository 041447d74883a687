#pragma once

#include "fedstgd/tape.hpp"
#include "fedstgd/tensor.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fedstgd {

enum class AblationMode : std::uint8_t { full, no_gnea, intra_only, static_inter, no_spatial, static_all };

AblationMode parse_ablation(std::string_view name);
std::string_view to_string(AblationMode mode);

struct HyperConfig {
    double alpha = 0.3;
    std::size_t node_dim = 64;   // d_N
    std::size_t time_dim = 64;   // d_T
    std::size_t hidden_dim = 64;
    std::size_t t_in = 4;
    std::size_t t_out = 4;
    std::size_t affinity_dim = 4; // d_φ
    std::size_t augment_dim = 4;  // d_ψ
    std::string activation = "relu";
    AblationMode mode = AblationMode::full;

    void validate() const;
    std::size_t embed_dim() const { return node_dim + time_dim; }
    /// Width of Ẽ: d_ψ, or d_N when augmentation is bypassed.
    std::size_t augmented_width() const;
};

/// Global parameter bundle Θ. Every tensor here is shared, averaged and
/// shipped; private node embeddings live elsewhere.
struct GlobalParams {
    static constexpr std::size_t kCount = 13;
    static constexpr std::array<std::string_view, kCount> kNames = {
        "W_z", "W_r", "W_h", "b_z", "b_r", "b_h", "W_mlp", "b_mlp", "W_nl", "b_nl", "E_tau", "W_out", "b_out",
    };
    enum Slot : std::size_t {
        w_update, w_reset, w_candidate, b_update, b_reset, b_candidate,
        w_affinity, b_affinity, w_augment, b_augment, time_embedding, w_out, b_out,
    };

    std::array<Tensor, kCount> tensors;

    Tensor& operator[](Slot s) { return tensors[s]; }
    const Tensor& operator[](Slot s) const { return tensors[s]; }

    /// Zero-filled bundle with the shapes implied by the configuration.
    static GlobalParams zeros(const HyperConfig& cfg, std::size_t feature_dim, std::size_t steps_per_day);
    /// Random initialisation, deterministic in `seed`.
    static GlobalParams init(const HyperConfig& cfg, std::size_t feature_dim, std::size_t steps_per_day,
                             std::uint64_t seed);

    std::size_t feature_dim() const { return tensors[w_affinity].dim(0); }
    std::size_t steps_per_day() const { return tensors[time_embedding].dim(0); }

    /// |θ|: total number of scalars.
    std::size_t flat_size() const;
    std::vector<double> flatten() const;
    /// Inverse of flatten(); extents are taken from `*this`.
    void assign_flat(std::span<const double> flat);
    bool identical(const GlobalParams& other) const;
    bool same_shapes(const GlobalParams& other) const;
};

/// Random node embeddings for `nodes` global node ids, so that slicing the
/// full table by client gives the same rows as initialising per client.
Tensor init_node_embeddings(std::span<const std::size_t> nodes, std::size_t node_dim, std::uint64_t seed);
Tensor init_node_embeddings(std::size_t nodes, std::size_t node_dim, std::uint64_t seed);

struct CellState {
    Tensor h;
    std::size_t t = 0;

    static CellState zeros(std::size_t nodes, std::size_t hidden_dim) { return {Tensor::zeros(nodes, hidden_dim), 0}; }
};

// ---------------------------------------------------------------------------
// Tensor-level reference operations.

Tensor self_adjacency(const Tensor& node_embeddings);
double trend_factor(const Tensor& time_row, const Tensor& previous_time_row);
Tensor periodic_discriminant(const Tensor& x);
Tensor dynamic_adjacency(const Tensor& self_adj, const Tensor& periodic, double trend, double alpha);
Tensor joint_embedding(const Tensor& node_embeddings, const Tensor& time_row);

/// Node-adaptive affine map: row n is U[n]·reshape(Ê[n]·W) + Ê[n]·b, with
/// W of extents d_e×d_in×h and b of extents d_e×h.
Tensor node_adaptive(const Tensor& u, const Tensor& e_hat, const Tensor& w, const Tensor& b);

/// One recurrent step of the centralised dynamic-graph cell with a given
/// adjacency.
CellState cell_step_central(const Tensor& adjacency, const Tensor& x, const CellState& state, const Tensor& e_hat,
                            const GlobalParams& params);

Tensor affinity_features(const Tensor& x, const GlobalParams& params, const HyperConfig& cfg);
Tensor augment_embedding(const Tensor& node_embeddings, const GlobalParams& params, const HyperConfig& cfg);

Tensor p_share(const Tensor& phi, const Tensor& gate_input);
Tensor q_share(const Tensor& phi, const Tensor& augmented, const Tensor& gate_input);
Tensor combine_l(const Tensor& phi, const Tensor& augmented, double trend, const Tensor& p_sum, const Tensor& q_sum);

struct GateStage {
    Tensor update; // z
    Tensor reset;  // r
    Tensor candidate_input; // I_2 = [X ∥ r ⊙ h]
};

GateStage client_gates(const Tensor& l1, const Tensor& x, const CellState& state, const Tensor& e_hat,
                       const GlobalParams& params);
CellState client_candidate_update(const GateStage& gates, const Tensor& l2, const Tensor& e_hat,
                                  const CellState& state, const GlobalParams& params);
/// Full client update; `mix_candidate` maps I_2 to L̃_2 (normally through a
/// collective round).
CellState client_gate_update(const Tensor& l1, const std::function<Tensor(const Tensor&)>& mix_candidate,
                             const Tensor& x, const Tensor& e_hat, const CellState& state,
                             const GlobalParams& params);

// ---------------------------------------------------------------------------
// Tape-level model used for training and federated execution.

/// Leaves for one GlobalParams bundle on a tape.
struct ParamVars {
    std::array<Tape::Var, GlobalParams::kCount> vars;
    Tape::Var operator[](GlobalParams::Slot s) const { return vars[s]; }

    static ParamVars bind(Tape& tape, const GlobalParams& params, bool trainable);
};

/// One input window as seen by one party (all nodes, or one client's block).
struct WindowData {
    std::vector<Tensor> frames; // t_in tensors, rows × d
    std::size_t start_slot = 0; // time-of-day slot of frames[0]
    Tensor target;              // rows × (t_out·d); empty when not scoring
};

struct StepFrame {
    Tape::Var x;
    Tape::Var trend; // 1×1
    std::size_t slot = 0;
};

/// Produces L̃_k = spatial mixing of the gate input I_k for every window of a
/// batch at one step.
class SpatialMixer {
public:
    virtual ~SpatialMixer() = default;
    virtual void begin_step(Tape& tape, std::size_t step, std::span<const StepFrame> frames) = 0;
    virtual std::vector<Tape::Var> mix(Tape& tape, std::uint8_t k, std::span<const Tape::Var> inputs) = 0;
};

struct StepTrace {
    Tensor l1, update, reset, l2, candidate, h;
};

struct ForwardOutput {
    std::vector<Tape::Var> predictions; // per window, rows × (t_out·d)
    Tape::Var loss;                     // mean absolute error; invalid without targets
    std::vector<std::vector<StepTrace>> trace; // [window][step] when requested
};

/// Everything a forward pass needs besides the mixer.
struct ModelBinding {
    const HyperConfig* cfg = nullptr;
    ParamVars params;
    Tape::Var node_embeddings; // rows × d_N
};

ForwardOutput run_windows(Tape& tape, const ModelBinding& model, std::span<const WindowData> windows,
                          SpatialMixer& mixer, bool keep_trace = false);

/// Trend factor η for a slot, read from the shared time-embedding table.
Tape::Var trend_var(Tape& tape, Tape::Var time_embedding, std::size_t slot);
Tape::Var affinity_var(Tape& tape, const ModelBinding& model, Tape::Var x, std::span<const std::size_t> node_ids);
Tape::Var augment_var(Tape& tape, const ModelBinding& model);

/// Constant Φ rows used by the static ablations.
Tensor static_affinity(std::span<const std::size_t> node_ids, std::size_t width, AblationMode mode);

/// Original dynamic adjacency (1 + ασ(tanh(XXᵀ))) ⊙ (E_νE_νᵀ + η).
class ExactMixer final : public SpatialMixer {
public:
    explicit ExactMixer(const ModelBinding& model);
    void begin_step(Tape& tape, std::size_t step, std::span<const StepFrame> frames) override;
    std::vector<Tape::Var> mix(Tape& tape, std::uint8_t k, std::span<const Tape::Var> inputs) override;

private:
    const ModelBinding* model_;
    Tape::Var self_adj_;
    std::vector<Tape::Var> adjacency_;
};

/// Approximated adjacency (ΦΦᵀ) ⊙ (η + ẼẼᵀ) evaluated densely over all
/// nodes, with the ablation masks applied.
class DenseApproxMixer final : public SpatialMixer {
public:
    /// `owner[n]` is the client that holds node n (used by intra_only).
    DenseApproxMixer(const ModelBinding& model, std::vector<std::size_t> owner);
    void begin_step(Tape& tape, std::size_t step, std::span<const StepFrame> frames) override;
    std::vector<Tape::Var> mix(Tape& tape, std::uint8_t k, std::span<const Tape::Var> inputs) override;

private:
    const ModelBinding* model_;
    std::vector<std::size_t> owner_;
    std::vector<std::size_t> node_ids_;
    Tape::Var augmented_;
    Tape::Var block_mask_;
    std::vector<Tape::Var> adjacency_;
};

/// Share bundle for one (step, k): one P and one Q tensor per window.
struct ShareBundle {
    std::vector<Tensor> p;
    std::vector<Tensor> q;
};

/// Client side of a collective round: send own shares, receive the sums.
class ShareExchange {
public:
    virtual ~ShareExchange() = default;
    virtual ShareBundle exchange(std::size_t step, std::uint8_t k, ShareBundle own) = 0;
};

/// Single-party exchange: the sum of one share is the share itself.
class LocalExchange final : public ShareExchange {
public:
    ShareBundle exchange(std::size_t, std::uint8_t, ShareBundle own) override { return own; }
};

/// Gamma column order used when building outgoing Q shares. Only the
/// verification harness selects anything but the default.
enum class GammaOrder : std::uint8_t { k_major, l_major_fault };

/// Client-side factorised mixing: P/Q shares, exchange, combine. Received
/// sums act as constants except for the client's own contribution, through
/// which gradients reach its own parameters.
class FederatedMixer final : public SpatialMixer {
public:
    FederatedMixer(const ModelBinding& model, std::vector<std::size_t> node_ids, ShareExchange& exchange,
                   GammaOrder order = GammaOrder::k_major);
    void begin_step(Tape& tape, std::size_t step, std::span<const StepFrame> frames) override;
    std::vector<Tape::Var> mix(Tape& tape, std::uint8_t k, std::span<const Tape::Var> inputs) override;

private:
    const ModelBinding* model_;
    std::vector<std::size_t> node_ids_;
    ShareExchange* exchange_;
    GammaOrder order_;
    std::size_t step_ = 0;
    Tape::Var augmented_;
    std::vector<Tape::Var> phi_;
    std::vector<Tape::Var> gamma_;
    std::vector<Tape::Var> trend_;
};

/// Ablation no_spatial: L̃_k = I_k.
class IdentityMixer final : public SpatialMixer {
public:
    void begin_step(Tape&, std::size_t, std::span<const StepFrame>) override {}
    std::vector<Tape::Var> mix(Tape&, std::uint8_t, std::span<const Tape::Var> inputs) override
    {
        return {inputs.begin(), inputs.end()};
    }
};

/// Column permutation applied to Γ under GammaOrder::l_major_fault.
Tensor reorder_gamma_l_major(const Tensor& gamma, std::size_t w_cols, std::size_t v_cols);

enum class CentralAdjacency : std::uint8_t { approximated, exact };

/// Forecast for one window with the centralised model: T_out×N×d.
Tensor forecast(const WindowData& window, const GlobalParams& params, const Tensor& node_embeddings,
                const HyperConfig& cfg, CentralAdjacency adjacency = CentralAdjacency::approximated);

/// Rearranges rows × (t_out·d) predictions into t_out × rows × d.
Tensor unpack_horizons(const Tensor& packed, std::size_t t_out, std::size_t feature_dim);

} // namespace fedstgd
