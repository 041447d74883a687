#include "fedstgd/model.hpp"

#include "fedstgd/errors.hpp"
#include "fedstgd/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace fedstgd {

namespace {

constexpr std::uint64_t kStaticAffinityStream = 0x57a71cULL;
constexpr std::uint64_t kNodeEmbeddingStream = 0xe1b0ULL;

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

Tensor gaussian(Dims dims, double stddev, const CounterRng& rng)
{
    Tensor t(std::move(dims));
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = stddev * rng.normal(i);
    }
    return t;
}

std::vector<std::size_t> iota_ids(std::size_t n)
{
    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    return ids;
}

} // namespace

AblationMode parse_ablation(std::string_view name)
{
    if (name == "full") return AblationMode::full;
    if (name == "no_gnea") return AblationMode::no_gnea;
    if (name == "intra_only") return AblationMode::intra_only;
    if (name == "static_inter") return AblationMode::static_inter;
    if (name == "no_spatial") return AblationMode::no_spatial;
    if (name == "static_all") return AblationMode::static_all;
    throw ConfigError("unknown ablation mode '" + std::string(name) + "'");
}

std::string_view to_string(AblationMode mode)
{
    switch (mode) {
    case AblationMode::full: return "full";
    case AblationMode::no_gnea: return "no_gnea";
    case AblationMode::intra_only: return "intra_only";
    case AblationMode::static_inter: return "static_inter";
    case AblationMode::no_spatial: return "no_spatial";
    case AblationMode::static_all: return "static_all";
    }
    return "?";
}

void HyperConfig::validate() const
{
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
        throw ConfigError("alpha must be a finite value >= 0");
    }
    if (node_dim == 0 || time_dim == 0 || hidden_dim == 0 || t_in == 0 || t_out == 0 || affinity_dim == 0
        || augment_dim == 0) {
        throw ConfigError("model dimensions must be positive");
    }
    if (!is_known_activation(activation)) {
        throw ConfigError("unknown activation '" + activation + "'");
    }
}

std::size_t HyperConfig::augmented_width() const
{
    return mode == AblationMode::no_gnea ? node_dim : augment_dim;
}

// ---------------------------------------------------------------------------
// GlobalParams

GlobalParams GlobalParams::zeros(const HyperConfig& cfg, std::size_t feature_dim, std::size_t steps_per_day)
{
    cfg.validate();
    if (feature_dim == 0 || steps_per_day == 0) {
        throw ConfigError("feature_dim and steps_per_day must be positive");
    }
    const std::size_t de = cfg.embed_dim();
    const std::size_t din = feature_dim + cfg.hidden_dim;
    const std::size_t h = cfg.hidden_dim;
    GlobalParams p;
    p[w_update] = Tensor({de, din, h});
    p[w_reset] = Tensor({de, din, h});
    p[w_candidate] = Tensor({de, din, h});
    p[b_update] = Tensor({de, h});
    p[b_reset] = Tensor({de, h});
    p[b_candidate] = Tensor({de, h});
    p[w_affinity] = Tensor({feature_dim, cfg.affinity_dim});
    p[b_affinity] = Tensor({1, cfg.affinity_dim});
    p[w_augment] = Tensor({cfg.node_dim, cfg.augment_dim});
    p[b_augment] = Tensor({1, cfg.augment_dim});
    p[time_embedding] = Tensor({steps_per_day, cfg.time_dim});
    p[w_out] = Tensor({h, cfg.t_out * feature_dim});
    p[b_out] = Tensor({1, cfg.t_out * feature_dim});
    return p;
}

GlobalParams GlobalParams::init(const HyperConfig& cfg, std::size_t feature_dim, std::size_t steps_per_day,
                                std::uint64_t seed)
{
    GlobalParams p = zeros(cfg, feature_dim, steps_per_day);
    const std::size_t din = feature_dim + cfg.hidden_dim;
    const double gate_std = 1.0 / std::sqrt(static_cast<double>(din));
    for (Slot s : {w_update, w_reset, w_candidate}) {
        p[s] = gaussian(p[s].dims(), gate_std, CounterRng(seed, 100 + s));
    }
    p[w_affinity] = gaussian(p[w_affinity].dims(), 1.0 / std::sqrt(static_cast<double>(feature_dim)),
                             CounterRng(seed, 100 + w_affinity));
    p[w_augment] = gaussian(p[w_augment].dims(), 1.0, CounterRng(seed, 100 + w_augment));
    p[time_embedding] = gaussian(p[time_embedding].dims(), 1.0 / std::sqrt(static_cast<double>(cfg.time_dim)),
                                 CounterRng(seed, 100 + time_embedding));
    p[w_out] = gaussian(p[w_out].dims(), 1.0 / std::sqrt(static_cast<double>(cfg.hidden_dim)),
                        CounterRng(seed, 100 + w_out));
    return p;
}

std::size_t GlobalParams::flat_size() const
{
    std::size_t n = 0;
    for (const auto& t : tensors) {
        n += t.size();
    }
    return n;
}

std::vector<double> GlobalParams::flatten() const
{
    std::vector<double> flat;
    flat.reserve(flat_size());
    for (const auto& t : tensors) {
        flat.insert(flat.end(), t.values().begin(), t.values().end());
    }
    return flat;
}

void GlobalParams::assign_flat(std::span<const double> flat)
{
    if (flat.size() != flat_size()) {
        throw ShapeError("flat parameter vector has " + std::to_string(flat.size()) + " values, expected "
                         + std::to_string(flat_size()));
    }
    std::size_t offset = 0;
    for (auto& t : tensors) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), t.size(), t.data());
        offset += t.size();
    }
}

bool GlobalParams::identical(const GlobalParams& other) const
{
    for (std::size_t i = 0; i < kCount; ++i) {
        if (!tensors[i].identical(other.tensors[i])) {
            return false;
        }
    }
    return true;
}

bool GlobalParams::same_shapes(const GlobalParams& other) const
{
    for (std::size_t i = 0; i < kCount; ++i) {
        if (tensors[i].dims() != other.tensors[i].dims()) {
            return false;
        }
    }
    return true;
}

Tensor init_node_embeddings(std::span<const std::size_t> nodes, std::size_t node_dim, std::uint64_t seed)
{
    const double stddev = 1.0 / std::sqrt(static_cast<double>(node_dim));
    Tensor e = Tensor::zeros(nodes.size(), node_dim);
    for (std::size_t r = 0; r < nodes.size(); ++r) {
        const CounterRng rng(seed, kNodeEmbeddingStream + (nodes[r] << 8));
        for (std::size_t c = 0; c < node_dim; ++c) {
            e.at(r, c) = stddev * rng.normal(c);
        }
    }
    return e;
}

Tensor init_node_embeddings(std::size_t nodes, std::size_t node_dim, std::uint64_t seed)
{
    const auto ids = iota_ids(nodes);
    return init_node_embeddings(ids, node_dim, seed);
}

// ---------------------------------------------------------------------------
// Tensor-level reference operations

Tensor self_adjacency(const Tensor& node_embeddings)
{
    const std::size_t n = node_embeddings.rows();
    const std::size_t d = node_embeddings.cols();
    Tensor a = Tensor::zeros(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                s += node_embeddings.at(i, c) * node_embeddings.at(j, c);
            }
            a.at(i, j) = s;
            a.at(j, i) = s;
        }
    }
    return a;
}

double trend_factor(const Tensor& time_row, const Tensor& previous_time_row)
{
    if (time_row.rows() != 1 || previous_time_row.rows() != 1 || time_row.cols() != previous_time_row.cols()) {
        throw ShapeError("trend_factor: " + time_row.shape_string() + " vs " + previous_time_row.shape_string());
    }
    double s = 0.0;
    for (std::size_t c = 0; c < time_row.cols(); ++c) {
        s += time_row[c] * previous_time_row[c];
    }
    return s;
}

Tensor periodic_discriminant(const Tensor& x)
{
    Tensor a = self_adjacency(x);
    for (double& v : a.values()) {
        v = std::tanh(v);
    }
    return a;
}

Tensor dynamic_adjacency(const Tensor& self_adj, const Tensor& periodic, double trend, double alpha)
{
    if (self_adj.dims() != periodic.dims()) {
        throw ShapeError("dynamic_adjacency: " + self_adj.shape_string() + " vs " + periodic.shape_string());
    }
    Tensor a(self_adj.dims());
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = (1.0 + alpha * sigmoid(periodic[i])) * (self_adj[i] + trend);
    }
    return a;
}

Tensor joint_embedding(const Tensor& node_embeddings, const Tensor& time_row)
{
    if (time_row.rows() != 1) {
        throw ShapeError("joint_embedding: time row must have one row");
    }
    const std::size_t n = node_embeddings.rows();
    return concat_cols(node_embeddings, matmul(Tensor::ones(n, 1), time_row));
}

Tensor node_adaptive(const Tensor& u, const Tensor& e_hat, const Tensor& w, const Tensor& b)
{
    if (w.rank() != 3 || w.dim(0) != e_hat.cols() || w.dim(1) != u.cols() || u.rows() != e_hat.rows()
        || b.rows() != w.dim(0) || b.cols() != w.dim(2)) {
        throw ShapeError("node_adaptive: U" + u.shape_string() + " E" + e_hat.shape_string() + " W"
                         + w.shape_string() + " b" + b.shape_string());
    }
    const std::size_t n = u.rows();
    const std::size_t de = w.dim(0);
    const std::size_t din = w.dim(1);
    const std::size_t h = w.dim(2);
    Tensor out = Tensor::zeros(n, h);
    std::vector<double> node_w(din * h);
    for (std::size_t r = 0; r < n; ++r) {
        std::fill(node_w.begin(), node_w.end(), 0.0);
        for (std::size_t e = 0; e < de; ++e) {
            const double coeff = e_hat.at(r, e);
            for (std::size_t i = 0; i < din * h; ++i) {
                node_w[i] += coeff * w[e * din * h + i];
            }
        }
        for (std::size_t o = 0; o < h; ++o) {
            double acc = 0.0;
            for (std::size_t c = 0; c < din; ++c) {
                acc += u.at(r, c) * node_w[c * h + o];
            }
            for (std::size_t e = 0; e < de; ++e) {
                acc += e_hat.at(r, e) * b.at(e, o);
            }
            out.at(r, o) = acc;
        }
    }
    return out;
}

namespace {

Tensor sigmoid_of(const Tensor& t) { return activation("sigmoid", t); }
Tensor tanh_of(const Tensor& t) { return activation("tanh", t); }

CellState blend(const Tensor& z, const Tensor& candidate, const CellState& state)
{
    Tensor h(state.h.dims());
    for (std::size_t i = 0; i < h.size(); ++i) {
        h[i] = (1.0 - z[i]) * state.h[i] + z[i] * candidate[i];
    }
    return {std::move(h), state.t + 1};
}

} // namespace

CellState cell_step_central(const Tensor& adjacency, const Tensor& x, const CellState& state, const Tensor& e_hat,
                            const GlobalParams& params)
{
    if (adjacency.rows() != x.rows() || adjacency.cols() != x.rows() || state.h.rows() != x.rows()) {
        throw ShapeError("cell_step_central: inconsistent node counts");
    }
    using S = GlobalParams;
    const Tensor i1 = concat_cols(x, state.h);
    const Tensor mixed1 = matmul(adjacency, i1);
    const Tensor z = sigmoid_of(node_adaptive(mixed1, e_hat, params[S::w_update], params[S::b_update]));
    const Tensor r = sigmoid_of(node_adaptive(mixed1, e_hat, params[S::w_reset], params[S::b_reset]));
    const Tensor i2 = concat_cols(x, hadamard(r, state.h));
    const Tensor mixed2 = matmul(adjacency, i2);
    const Tensor c = tanh_of(node_adaptive(mixed2, e_hat, params[S::w_candidate], params[S::b_candidate]));
    return blend(z, c, state);
}

Tensor affinity_features(const Tensor& x, const GlobalParams& params, const HyperConfig& cfg)
{
    using S = GlobalParams;
    const Tensor hidden = add_row(matmul(x, params[S::w_affinity]), params[S::b_affinity]);
    return softmax_rows(activation(cfg.activation, hidden));
}

Tensor augment_embedding(const Tensor& node_embeddings, const GlobalParams& params, const HyperConfig& cfg)
{
    using S = GlobalParams;
    if (cfg.mode == AblationMode::no_gnea) {
        return softmax_rows(node_embeddings);
    }
    const Tensor hidden = add_row(matmul(node_embeddings, params[S::w_augment]), params[S::b_augment]);
    return softmax_rows(activation(cfg.activation, hidden));
}

Tensor p_share(const Tensor& phi, const Tensor& gate_input)
{
    if (phi.rows() != gate_input.rows()) {
        throw ShapeError("p_share: row mismatch");
    }
    return matmul_tn(phi, gate_input);
}

Tensor q_share(const Tensor& phi, const Tensor& augmented, const Tensor& gate_input)
{
    if (phi.rows() != gate_input.rows() || augmented.rows() != gate_input.rows()) {
        throw ShapeError("q_share: row mismatch");
    }
    return matmul_tn(gamma_map(phi, augmented), gate_input);
}

Tensor combine_l(const Tensor& phi, const Tensor& augmented, double trend, const Tensor& p_sum, const Tensor& q_sum)
{
    if (p_sum.rows() != phi.cols() || q_sum.rows() != phi.cols() * augmented.cols() || p_sum.cols() != q_sum.cols()) {
        throw ShapeError("combine_l: sums " + p_sum.shape_string() + ", " + q_sum.shape_string());
    }
    return add(scale(matmul(phi, p_sum), trend), matmul(gamma_map(phi, augmented), q_sum));
}

GateStage client_gates(const Tensor& l1, const Tensor& x, const CellState& state, const Tensor& e_hat,
                       const GlobalParams& params)
{
    using S = GlobalParams;
    if (l1.rows() != x.rows() || state.h.rows() != x.rows()) {
        throw ShapeError("client_gates: inconsistent node counts");
    }
    GateStage g;
    g.update = sigmoid_of(node_adaptive(l1, e_hat, params[S::w_update], params[S::b_update]));
    g.reset = sigmoid_of(node_adaptive(l1, e_hat, params[S::w_reset], params[S::b_reset]));
    g.candidate_input = concat_cols(x, hadamard(g.reset, state.h));
    return g;
}

CellState client_candidate_update(const GateStage& gates, const Tensor& l2, const Tensor& e_hat,
                                  const CellState& state, const GlobalParams& params)
{
    using S = GlobalParams;
    const Tensor c = tanh_of(node_adaptive(l2, e_hat, params[S::w_candidate], params[S::b_candidate]));
    return blend(gates.update, c, state);
}

CellState client_gate_update(const Tensor& l1, const std::function<Tensor(const Tensor&)>& mix_candidate,
                             const Tensor& x, const Tensor& e_hat, const CellState& state,
                             const GlobalParams& params)
{
    const GateStage gates = client_gates(l1, x, state, e_hat, params);
    return client_candidate_update(gates, mix_candidate(gates.candidate_input), e_hat, state, params);
}

// ---------------------------------------------------------------------------
// Tape-level model

ParamVars ParamVars::bind(Tape& tape, const GlobalParams& params, bool trainable)
{
    ParamVars out;
    for (std::size_t i = 0; i < GlobalParams::kCount; ++i) {
        out.vars[i] = trainable ? tape.parameter(params.tensors[i]) : tape.constant(params.tensors[i]);
    }
    return out;
}

Tape::Var trend_var(Tape& tape, Tape::Var time_embedding, std::size_t slot)
{
    const std::size_t slots = tape.value(time_embedding).rows();
    const std::size_t prev = (slot + slots - 1) % slots;
    const Tape::Var now = tape.slice_rows(time_embedding, slot, slot + 1);
    const Tape::Var before = tape.slice_rows(time_embedding, prev, prev + 1);
    return tape.matmul(now, tape.transpose(before));
}

Tensor static_affinity(std::span<const std::size_t> node_ids, std::size_t width, AblationMode mode)
{
    Tensor phi = Tensor::zeros(node_ids.size(), width);
    if (mode == AblationMode::static_all) {
        for (std::size_t r = 0; r < node_ids.size(); ++r) {
            phi.at(r, 0) = 1.0;
        }
        return phi;
    }
    for (std::size_t r = 0; r < node_ids.size(); ++r) {
        const CounterRng rng(kStaticAffinityStream, node_ids[r]);
        for (std::size_t c = 0; c < width; ++c) {
            phi.at(r, c) = rng.normal(c);
        }
    }
    return softmax_rows(phi);
}

Tape::Var affinity_var(Tape& tape, const ModelBinding& model, Tape::Var x, std::span<const std::size_t> node_ids)
{
    const HyperConfig& cfg = *model.cfg;
    if (cfg.mode == AblationMode::static_inter || cfg.mode == AblationMode::static_all) {
        return tape.constant(static_affinity(node_ids, cfg.affinity_dim, cfg.mode));
    }
    using S = GlobalParams;
    const Tape::Var hidden = tape.add_row(tape.matmul(x, model.params[S::w_affinity]), model.params[S::b_affinity]);
    return tape.softmax_rows(tape.activation(cfg.activation, hidden));
}

Tape::Var augment_var(Tape& tape, const ModelBinding& model)
{
    const HyperConfig& cfg = *model.cfg;
    if (cfg.mode == AblationMode::no_gnea) {
        return tape.softmax_rows(model.node_embeddings);
    }
    using S = GlobalParams;
    const Tape::Var hidden = tape.add_row(tape.matmul(model.node_embeddings, model.params[S::w_augment]),
                                          model.params[S::b_augment]);
    return tape.softmax_rows(tape.activation(cfg.activation, hidden));
}

namespace {

/// Node-adaptive gate split into a per-node part and a per-slot time part,
/// both computed once per tape. `slot_rows` holds one time embedding row
/// per distinct slot of the batch.
class AdaptiveGate {
public:
    AdaptiveGate(Tape& tape, const ModelBinding& model, GlobalParams::Slot weight, GlobalParams::Slot bias,
                 std::size_t input_dim, Tape::Var slot_rows)
        : input_dim_(input_dim)
        , hidden_(model.cfg->hidden_dim)
    {
        const std::size_t dn = model.cfg->node_dim;
        const std::size_t de = model.cfg->embed_dim();
        const Tape::Var w2 = tape.reshape(model.params[weight], {de, input_dim_ * hidden_});
        node_w_ = tape.matmul(model.node_embeddings, tape.slice_rows(w2, 0, dn));
        node_b_ = tape.matmul(model.node_embeddings, tape.slice_rows(model.params[bias], 0, dn));
        time_w_ = tape.matmul(slot_rows, tape.slice_rows(w2, dn, de));
        time_b_ = tape.matmul(slot_rows, tape.slice_rows(model.params[bias], dn, de));
    }

    Tape::Var apply(Tape& tape, Tape::Var u, std::size_t slot_index)
    {
        auto it = per_slot_.find(slot_index);
        if (it == per_slot_.end()) {
            const Tape::Var w =
                tape.reshape(tape.slice_rows(time_w_, slot_index, slot_index + 1), {input_dim_, hidden_});
            const Tape::Var b = tape.slice_rows(time_b_, slot_index, slot_index + 1);
            it = per_slot_.emplace(slot_index, std::make_pair(w, b)).first;
        }
        const auto [w, b] = it->second;
        const Tape::Var node_part = tape.rowwise_vecmat(u, node_w_, hidden_);
        const Tape::Var time_part = tape.matmul(u, w);
        return tape.add_row(tape.add(tape.add(node_part, time_part), node_b_), b);
    }

private:
    std::size_t input_dim_;
    std::size_t hidden_;
    Tape::Var node_w_;
    Tape::Var time_w_;
    Tape::Var node_b_;
    Tape::Var time_b_;
    std::map<std::size_t, std::pair<Tape::Var, Tape::Var>> per_slot_;
};

} // namespace

ForwardOutput run_windows(Tape& tape, const ModelBinding& model, std::span<const WindowData> windows,
                          SpatialMixer& mixer, bool keep_trace)
{
    using S = GlobalParams;
    const HyperConfig& cfg = *model.cfg;
    if (windows.empty()) {
        throw UsageError("run_windows: no windows");
    }
    const std::size_t rows = windows.front().frames.at(0).rows();
    const std::size_t d = windows.front().frames.at(0).cols();
    const std::size_t h = cfg.hidden_dim;
    const std::size_t slots = tape.value(model.params[S::time_embedding]).rows();
    if (tape.value(model.node_embeddings).rows() != rows) {
        throw ShapeError("run_windows: node embeddings do not match window rows");
    }
    for (const auto& w : windows) {
        if (w.frames.size() != cfg.t_in) {
            throw ShapeError("window length " + std::to_string(w.frames.size()) + " != t_in "
                             + std::to_string(cfg.t_in));
        }
    }

    std::map<std::size_t, std::size_t> slot_index;
    for (const auto& w : windows) {
        for (std::size_t t = 0; t < cfg.t_in; ++t) slot_index.emplace((w.start_slot + t) % slots, 0);
    }
    Tensor select = Tensor::zeros(slot_index.size(), slots);
    for (std::size_t i = 0; auto& [slot, index] : slot_index) {
        index = i;
        select.at(i++, slot) = 1.0;
    }
    const Tape::Var slot_rows = tape.matmul(tape.constant(select), model.params[S::time_embedding]);
    AdaptiveGate gate_z(tape, model, S::w_update, S::b_update, d + h, slot_rows);
    AdaptiveGate gate_r(tape, model, S::w_reset, S::b_reset, d + h, slot_rows);
    AdaptiveGate gate_c(tape, model, S::w_candidate, S::b_candidate, d + h, slot_rows);

    const std::size_t batch = windows.size();
    const Tape::Var ones = tape.constant(Tensor::ones(rows, h));
    std::vector<Tape::Var> state(batch, tape.constant(Tensor::zeros(rows, h)));
    ForwardOutput out;
    if (keep_trace) {
        out.trace.assign(batch, std::vector<StepTrace>(cfg.t_in));
    }

    std::vector<StepFrame> frames(batch);
    std::vector<Tape::Var> inputs(batch);
    for (std::size_t t = 0; t < cfg.t_in; ++t) {
        for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t slot = (windows[b].start_slot + t) % slots;
            frames[b] = {tape.constant(windows[b].frames[t]), trend_var(tape, model.params[S::time_embedding], slot),
                         slot};
            inputs[b] = tape.concat_cols(frames[b].x, state[b]);
        }
        mixer.begin_step(tape, t, frames);
        const std::vector<Tape::Var> l1 = mixer.mix(tape, 1, inputs);

        std::vector<Tape::Var> update(batch);
        std::vector<Tape::Var> reset(batch);
        for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t si = slot_index.at(frames[b].slot);
            update[b] = tape.sigmoid(gate_z.apply(tape, l1[b], si));
            reset[b] = tape.sigmoid(gate_r.apply(tape, l1[b], si));
            inputs[b] = tape.concat_cols(frames[b].x, tape.hadamard(reset[b], state[b]));
        }
        const std::vector<Tape::Var> l2 = mixer.mix(tape, 2, inputs);

        for (std::size_t b = 0; b < batch; ++b) {
            const Tape::Var candidate = tape.tanh(gate_c.apply(tape, l2[b], slot_index.at(frames[b].slot)));
            const Tape::Var keep = tape.hadamard(tape.sub(ones, update[b]), state[b]);
            state[b] = tape.add(keep, tape.hadamard(update[b], candidate));
            if (keep_trace) {
                out.trace[b][t] = {tape.value(l1[b]), tape.value(update[b]), tape.value(reset[b]),
                                   tape.value(l2[b]), tape.value(candidate), tape.value(state[b])};
            }
        }
    }

    Tape::Var total;
    for (std::size_t b = 0; b < batch; ++b) {
        const Tape::Var pred = tape.add_row(tape.matmul(state[b], model.params[S::w_out]), model.params[S::b_out]);
        out.predictions.push_back(pred);
        if (!windows[b].target.empty()) {
            const Tape::Var err = tape.mean(tape.abs(tape.sub(pred, tape.constant(windows[b].target))));
            total = total.valid() ? tape.add(total, err) : err;
        }
    }
    if (total.valid()) {
        out.loss = tape.scale(total, 1.0 / static_cast<double>(batch));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Mixers

ExactMixer::ExactMixer(const ModelBinding& model)
    : model_(&model)
{
}

void ExactMixer::begin_step(Tape& tape, std::size_t, std::span<const StepFrame> frames)
{
    if (!self_adj_.valid()) {
        self_adj_ = tape.matmul(model_->node_embeddings, tape.transpose(model_->node_embeddings));
    }
    const std::size_t n = tape.value(self_adj_).rows();
    const Tape::Var ones = tape.constant(Tensor::ones(n, n));
    adjacency_.clear();
    for (const auto& f : frames) {
        const Tape::Var periodic = tape.tanh(tape.matmul(f.x, tape.transpose(f.x)));
        const Tape::Var gate = tape.add(ones, tape.scale(tape.sigmoid(periodic), model_->cfg->alpha));
        adjacency_.push_back(tape.hadamard(gate, tape.add(self_adj_, tape.scale_by(f.trend, ones))));
    }
}

std::vector<Tape::Var> ExactMixer::mix(Tape& tape, std::uint8_t, std::span<const Tape::Var> inputs)
{
    std::vector<Tape::Var> out;
    for (std::size_t b = 0; b < inputs.size(); ++b) {
        out.push_back(tape.matmul(adjacency_.at(b), inputs[b]));
    }
    return out;
}

DenseApproxMixer::DenseApproxMixer(const ModelBinding& model, std::vector<std::size_t> owner)
    : model_(&model)
    , owner_(std::move(owner))
    , node_ids_(iota_ids(owner_.size()))
{
}

void DenseApproxMixer::begin_step(Tape& tape, std::size_t, std::span<const StepFrame> frames)
{
    const std::size_t n = owner_.size();
    if (!augmented_.valid()) {
        augmented_ = augment_var(tape, *model_);
        if (model_->cfg->mode == AblationMode::intra_only) {
            Tensor mask = Tensor::zeros(n, n);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    mask.at(i, j) = owner_[i] == owner_[j] ? 1.0 : 0.0;
                }
            }
            block_mask_ = tape.constant(std::move(mask));
        }
    }
    const Tape::Var ones = tape.constant(Tensor::ones(n, n));
    const Tape::Var embed_gram = tape.matmul(augmented_, tape.transpose(augmented_));
    adjacency_.clear();
    for (const auto& f : frames) {
        const Tape::Var phi = affinity_var(tape, *model_, f.x, node_ids_);
        Tape::Var adj = tape.hadamard(tape.matmul(phi, tape.transpose(phi)),
                                      tape.add(tape.scale_by(f.trend, ones), embed_gram));
        if (block_mask_.valid()) {
            adj = tape.hadamard(adj, block_mask_);
        }
        adjacency_.push_back(adj);
    }
}

std::vector<Tape::Var> DenseApproxMixer::mix(Tape& tape, std::uint8_t, std::span<const Tape::Var> inputs)
{
    std::vector<Tape::Var> out;
    for (std::size_t b = 0; b < inputs.size(); ++b) {
        out.push_back(tape.matmul(adjacency_.at(b), inputs[b]));
    }
    return out;
}

Tensor reorder_gamma_l_major(const Tensor& gamma, std::size_t w_cols, std::size_t v_cols)
{
    Tensor out(gamma.dims());
    for (std::size_t r = 0; r < gamma.rows(); ++r) {
        for (std::size_t k = 0; k < w_cols; ++k) {
            for (std::size_t l = 0; l < v_cols; ++l) {
                out.at(r, l * w_cols + k) = gamma.at(r, k * v_cols + l);
            }
        }
    }
    return out;
}

FederatedMixer::FederatedMixer(const ModelBinding& model, std::vector<std::size_t> node_ids, ShareExchange& exchange,
                               GammaOrder order)
    : model_(&model)
    , node_ids_(std::move(node_ids))
    , exchange_(&exchange)
    , order_(order)
{
}

void FederatedMixer::begin_step(Tape& tape, std::size_t step, std::span<const StepFrame> frames)
{
    if (!augmented_.valid()) {
        augmented_ = augment_var(tape, *model_);
    }
    step_ = step;
    phi_.clear();
    gamma_.clear();
    trend_.clear();
    for (const auto& f : frames) {
        const Tape::Var phi = affinity_var(tape, *model_, f.x, node_ids_);
        phi_.push_back(phi);
        gamma_.push_back(tape.gamma_map(phi, augmented_));
        trend_.push_back(f.trend);
    }
}

std::vector<Tape::Var> FederatedMixer::mix(Tape& tape, std::uint8_t k, std::span<const Tape::Var> inputs)
{
    const std::size_t batch = inputs.size();
    std::vector<Tape::Var> p_live(batch);
    std::vector<Tape::Var> q_live(batch);
    ShareBundle own;
    for (std::size_t b = 0; b < batch; ++b) {
        p_live[b] = tape.matmul(tape.transpose(phi_.at(b)), inputs[b]);
        q_live[b] = tape.matmul(tape.transpose(gamma_.at(b)), inputs[b]);
        own.p.push_back(tape.value(p_live[b]));
        if (order_ == GammaOrder::l_major_fault) {
            const Tensor wrong = reorder_gamma_l_major(tape.value(gamma_[b]), tape.value(phi_[b]).cols(),
                                                       tape.value(augmented_).cols());
            own.q.push_back(matmul_tn(wrong, tape.value(inputs[b])));
        } else {
            own.q.push_back(tape.value(q_live[b]));
        }
    }
    ShareBundle sums = exchange_->exchange(step_, k, std::move(own));
    if (sums.p.size() != batch || sums.q.size() != batch) {
        throw ProtocolError("collective round returned " + std::to_string(sums.p.size()) + " sums for "
                            + std::to_string(batch) + " windows");
    }
    std::vector<Tape::Var> out(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        const Tape::Var p_sum = tape.straight_through(std::move(sums.p[b]), p_live[b]);
        const Tape::Var q_sum = tape.straight_through(std::move(sums.q[b]), q_live[b]);
        const Tape::Var p_term = tape.scale_by(trend_[b], tape.matmul(phi_[b], p_sum));
        out[b] = tape.add(p_term, tape.matmul(gamma_[b], q_sum));
    }
    return out;
}

// ---------------------------------------------------------------------------

Tensor unpack_horizons(const Tensor& packed, std::size_t t_out, std::size_t feature_dim)
{
    const std::size_t rows = packed.rows();
    if (packed.cols() != t_out * feature_dim) {
        throw ShapeError("unpack_horizons: " + packed.shape_string());
    }
    Tensor out({t_out, rows, feature_dim});
    for (std::size_t n = 0; n < rows; ++n) {
        for (std::size_t hz = 0; hz < t_out; ++hz) {
            for (std::size_t f = 0; f < feature_dim; ++f) {
                out.at(hz, n, f) = packed.at(n, hz * feature_dim + f);
            }
        }
    }
    return out;
}

Tensor forecast(const WindowData& window, const GlobalParams& params, const Tensor& node_embeddings,
                const HyperConfig& cfg, CentralAdjacency adjacency)
{
    Tape tape;
    ModelBinding model{&cfg, ParamVars::bind(tape, params, false), tape.constant(node_embeddings)};
    const std::vector<WindowData> one{WindowData{window.frames, window.start_slot, Tensor()}};
    std::unique_ptr<SpatialMixer> mixer;
    if (cfg.mode == AblationMode::no_spatial) {
        mixer = std::make_unique<IdentityMixer>();
    } else if (adjacency == CentralAdjacency::exact) {
        mixer = std::make_unique<ExactMixer>(model);
    } else {
        mixer = std::make_unique<DenseApproxMixer>(model, std::vector<std::size_t>(node_embeddings.rows(), 0));
    }
    const ForwardOutput fwd = run_windows(tape, model, one, *mixer);
    return unpack_horizons(tape.value(fwd.predictions.front()), cfg.t_out, params.feature_dim());
}

} // namespace fedstgd
