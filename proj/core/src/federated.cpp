#include "fedstgd/federated.hpp"

#include "fedstgd/errors.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

namespace fedstgd {

namespace {

using Clock = std::chrono::steady_clock;

Tensor stack(std::span<const Tensor> parts)
{
    if (parts.empty()) return Tensor({0, 0, 0});
    const std::size_t rows = parts.front().rows();
    const std::size_t cols = parts.front().cols();
    Tensor out({parts.size(), rows, cols});
    for (std::size_t b = 0; b < parts.size(); ++b) {
        if (parts[b].rows() != rows || parts[b].cols() != cols) throw ShapeError("stack: ragged shares");
        std::copy_n(parts[b].data(), rows * cols, out.data() + b * rows * cols);
    }
    return out;
}

std::vector<Tensor> unstack(const Tensor& t)
{
    if (t.rank() != 3) throw ProtocolError("expected a rank-3 stacked tensor, got " + t.shape_string());
    std::vector<Tensor> out;
    const std::size_t per = t.dim(1) * t.dim(2);
    for (std::size_t b = 0; b < t.dim(0); ++b) {
        Tensor m = Tensor::zeros(t.dim(1), t.dim(2));
        std::copy_n(t.data() + b * per, per, m.data());
        out.push_back(std::move(m));
    }
    return out;
}

Tensor flat_tensor(const GlobalParams& p)
{
    std::vector<double> flat = p.flatten();
    const std::size_t n = flat.size();
    return Tensor({n}, std::move(flat));
}

std::size_t collective_rounds_per_window(const HyperConfig& cfg)
{
    return cfg.mode == AblationMode::no_spatial ? 0 : 2 * cfg.t_in;
}

/// Runs `client(i, endpoint)` on one thread per client and `server(endpoints)`
/// on the calling thread. Any failure closes every endpoint so blocked peers
/// unwind; the root cause is rethrown after all threads have joined.
template <typename ClientFn, typename ServerFn>
void run_federation(TransportKind kind, std::size_t clients, ClientFn&& client, ServerFn&& server)
{
    std::vector<EndpointPair> links;
    for (std::size_t i = 0; i < clients; ++i) links.push_back(make_pair(kind));
    std::vector<Endpoint*> server_side;
    for (auto& l : links) server_side.push_back(l.first.get());

    std::vector<std::exception_ptr> client_errors(clients);
    std::vector<std::thread> threads;
    threads.reserve(clients);
    for (std::size_t i = 0; i < clients; ++i) {
        threads.emplace_back([&, i] {
            try {
                client(i, *links[i].second);
            } catch (...) {
                client_errors[i] = std::current_exception();
                links[i].second->close();
            }
        });
    }
    std::exception_ptr server_error;
    try {
        server(server_side);
    } catch (...) {
        server_error = std::current_exception();
        for (auto& l : links) l.first->close();
    }
    for (auto& t : threads) t.join();

    // A client that failed on its own is the root cause; peers only saw the
    // resulting disconnect.
    for (const auto& e : client_errors) {
        if (!e) continue;
        try {
            std::rethrow_exception(e);
        } catch (const PeerClosedError&) {
        } catch (...) {
            throw;
        }
    }
    if (server_error) std::rethrow_exception(server_error);
    for (const auto& e : client_errors) {
        if (e) std::rethrow_exception(e);
    }
}

} // namespace

// ---------------------------------------------------------------------------

GlobalParams fedavg(std::span<const GlobalParams> snapshots, std::span<const std::size_t> node_counts)
{
    if (snapshots.empty() || snapshots.size() != node_counts.size()) {
        throw ConfigError("fedavg: need one node count per snapshot");
    }
    std::size_t total = 0;
    for (std::size_t c : node_counts) {
        if (c == 0) throw ConfigError("fedavg: node counts must be positive");
        total += c;
    }
    GlobalParams out = snapshots.front();
    for (auto& t : out.tensors) std::fill(t.values().begin(), t.values().end(), 0.0);
    for (std::size_t i = 0; i < snapshots.size(); ++i) {
        if (!snapshots[i].same_shapes(out)) {
            throw ProtocolError("fedavg: client " + std::to_string(i) + " parameter shapes drifted");
        }
        const double w = static_cast<double>(node_counts[i]) / static_cast<double>(total);
        for (std::size_t k = 0; k < GlobalParams::kCount; ++k) {
            auto dst = out.tensors[k].values();
            const auto src = snapshots[i].tensors[k].values();
            for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += w * src[j];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

NetworkExchange::NetworkExchange(Endpoint& endpoint, std::uint16_t client_id, std::uint32_t round,
                                 std::uint32_t timestep_base, std::chrono::milliseconds timeout)
    : endpoint_(&endpoint), client_id_(client_id), round_(round), timestep_base_(timestep_base), timeout_(timeout)
{
}

ShareBundle NetworkExchange::exchange(std::size_t step, std::uint8_t k, ShareBundle own)
{
    const auto timestep = static_cast<std::uint32_t>(timestep_base_ + step);
    const std::size_t batch = own.p.size();
    endpoint_->send({MsgType::p_share, round_, timestep, k, client_id_, {stack(own.p)}});
    endpoint_->send({MsgType::q_share, round_, timestep, k, client_id_, {stack(own.q)}});

    ShareBundle sums;
    for (MsgType want : {MsgType::p_sum, MsgType::q_sum}) {
        ProtocolMessage m = endpoint_->recv(timeout_);
        if (m.type != want || m.round != round_ || m.timestep != timestep || m.k != k || m.tensors.size() != 1) {
            throw ProtocolError("client " + std::to_string(client_id_) + ": expected " + std::string(to_string(want)) +
                                " for round " + std::to_string(round_) + " t=" + std::to_string(timestep) +
                                " k=" + std::to_string(k) + ", got " + std::string(to_string(m.type)));
        }
        std::vector<Tensor> parts = unstack(m.tensors.front());
        if (parts.size() != batch) throw ProtocolError("sum batch size disagrees with own batch");
        (want == MsgType::p_sum ? sums.p : sums.q) = std::move(parts);
    }
    return sums;
}

// ---------------------------------------------------------------------------

ClientNode::ClientNode(std::uint16_t id, std::vector<std::size_t> nodes, const TrainConfig& cfg,
                       const SignalSeries& normalized, std::span<const std::size_t> train_starts,
                       Tensor node_embeddings)
    : id_(id)
    , nodes_(std::move(nodes))
    , cfg_(&cfg)
    , data_(&normalized)
    , train_starts_(train_starts.begin(), train_starts.end())
    , globals_(GlobalParams::zeros(cfg.model, normalized.features(), normalized.steps_per_day))
    , embeddings_(std::move(node_embeddings))
{
    if (embeddings_.rows() != nodes_.size()) throw ShapeError("ClientNode: one embedding row per node expected");
}

void ClientNode::receive_globals(Endpoint& endpoint, std::uint32_t round)
{
    const ProtocolMessage m = endpoint.recv(cfg_->timeout);
    if (m.type != MsgType::param_down || m.round != round || m.tensors.size() != 1 ||
        m.tensors[0].size() != globals_.flat_size()) {
        throw ProtocolError("client " + std::to_string(id_) + ": expected PARAM_DOWN for round " +
                            std::to_string(round));
    }
    globals_.assign_flat(m.tensors[0].values());
}

double ClientNode::local_round(Endpoint& endpoint, std::size_t round, std::size_t local_step)
{
    const HyperConfig& mc = cfg_->model;
    const std::size_t step = round * cfg_->local_rounds + local_step;
    std::vector<WindowData> windows;
    for (std::size_t t0 : batch_starts(cfg_->seed, step, train_starts_, cfg_->batch_size)) {
        windows.push_back(make_window(*data_, t0, mc.t_in, mc.t_out, nodes_));
    }

    Tape tape;
    const ModelBinding model{&mc, ParamVars::bind(tape, globals_, true), tape.parameter(embeddings_)};
    NetworkExchange exchange(endpoint, id_, static_cast<std::uint32_t>(round),
                             static_cast<std::uint32_t>(local_step * mc.t_in), cfg_->timeout);
    std::unique_ptr<SpatialMixer> mixer;
    if (mc.mode == AblationMode::no_spatial) {
        mixer = std::make_unique<IdentityMixer>();
    } else {
        mixer = std::make_unique<FederatedMixer>(model, nodes_, exchange, cfg_->gamma_order);
    }
    const ForwardOutput fwd = run_windows(tape, model, windows, *mixer);
    const double loss = tape.value(fwd.loss)[0];
    if (!std::isfinite(loss)) {
        throw NumericError("client " + std::to_string(id_) + ": non-finite loss at step " + std::to_string(step));
    }
    const Tape::Gradients grads = tape.backward(fwd.loss);

    std::vector<Tensor*> targets;
    std::vector<const Tensor*> g;
    for (std::size_t i = 0; i < GlobalParams::kCount; ++i) {
        targets.push_back(&globals_.tensors[i]);
        const auto it = grads.find(model.params.vars[i].id);
        g.push_back(it == grads.end() ? nullptr : &it->second);
    }
    targets.push_back(&embeddings_);
    const auto it = grads.find(model.node_embeddings.id);
    g.push_back(it == grads.end() ? nullptr : &it->second);
    adam_.step(targets, g, cfg_->learning_rate_at(round), cfg_->weight_decay);

    endpoint.send({MsgType::stats, static_cast<std::uint32_t>(round), static_cast<std::uint32_t>(local_step), 0, id_,
                   {Tensor({1}, {loss})}});
    return loss;
}

void ClientNode::run_training(Endpoint& endpoint, const StepObserver& on_step)
{
    for (std::size_t r = 0; r < cfg_->global_rounds; ++r) {
        receive_globals(endpoint, static_cast<std::uint32_t>(r));
        for (std::size_t s = 0; s < cfg_->local_rounds; ++s) {
            local_round(endpoint, r, s);
            if (on_step) on_step(id_, r * cfg_->local_rounds + s, globals_, embeddings_);
        }
        endpoint.send({MsgType::param_up, static_cast<std::uint32_t>(r), 0, 0, id_, {flat_tensor(globals_)}});
    }
}

std::vector<Tensor> ClientNode::run_prediction(Endpoint& endpoint, std::span<const std::size_t> starts,
                                               std::uint32_t round, std::vector<std::vector<StepTrace>>* traces)
{
    const HyperConfig& mc = cfg_->model;
    receive_globals(endpoint, round);
    std::vector<Tensor> out;
    const std::size_t batch = cfg_->batch_size;
    for (std::size_t begin = 0, chunk = 0; begin < starts.size(); begin += batch, ++chunk) {
        const std::size_t end = std::min(starts.size(), begin + batch);
        std::vector<WindowData> windows;
        for (std::size_t i = begin; i < end; ++i) {
            WindowData w = make_window(*data_, starts[i], mc.t_in, mc.t_out, nodes_);
            w.target = Tensor();
            windows.push_back(std::move(w));
        }
        Tape tape;
        const ModelBinding model{&mc, ParamVars::bind(tape, globals_, false), tape.constant(embeddings_)};
        NetworkExchange exchange(endpoint, id_, round, static_cast<std::uint32_t>(chunk * mc.t_in), cfg_->timeout);
        std::unique_ptr<SpatialMixer> mixer;
        if (mc.mode == AblationMode::no_spatial) {
            mixer = std::make_unique<IdentityMixer>();
        } else {
            mixer = std::make_unique<FederatedMixer>(model, nodes_, exchange, cfg_->gamma_order);
        }
        ForwardOutput fwd = run_windows(tape, model, windows, *mixer, traces != nullptr);
        for (const Tape::Var& p : fwd.predictions) {
            out.push_back(unpack_horizons(tape.value(p), mc.t_out, data_->features()));
        }
        if (traces != nullptr) {
            for (auto& t : fwd.trace) traces->push_back(std::move(t));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

ServerNode::ServerNode(const TrainConfig& cfg, std::vector<Endpoint*> endpoints, std::vector<std::size_t> node_counts,
                       GlobalParams initial, MessageObserver on_message)
    : cfg_(&cfg)
    , endpoints_(std::move(endpoints))
    , node_counts_(std::move(node_counts))
    , params_(std::move(initial))
    , on_message_(std::move(on_message))
{
    if (endpoints_.size() != node_counts_.size() || endpoints_.empty()) {
        throw ConfigError("ServerNode: one endpoint and node count per client required");
    }
}

void ServerNode::send(std::size_t client, const ProtocolMessage& msg)
{
    if (on_message_) on_message_(msg, false);
    endpoints_[client]->send(msg);
    ++messages_down_;
}

ProtocolMessage ServerNode::expect(std::size_t client, MsgType type, std::uint32_t round, std::uint32_t timestep,
                                   std::uint8_t k)
{
    ProtocolMessage m = endpoints_[client]->recv(cfg_->timeout);
    ++messages_up_;
    if (on_message_) on_message_(m, true);
    if (m.type != type || m.round != round || m.timestep != timestep || m.k != k || m.client_id != client) {
        throw ProtocolError("server: expected " + std::string(to_string(type)) + " from client " +
                            std::to_string(client) + " (round " + std::to_string(round) + ", t=" +
                            std::to_string(timestep) + ", k=" + std::to_string(k) + "), got " +
                            std::string(to_string(m.type)) + " from client " + std::to_string(m.client_id));
    }
    return m;
}

void ServerNode::broadcast_params(std::uint32_t round)
{
    const Tensor flat = flat_tensor(params_);
    for (std::size_t i = 0; i < endpoints_.size(); ++i) {
        send(i, {MsgType::param_down, round, 0, 0, static_cast<std::uint16_t>(i), {flat}});
    }
}

void ServerNode::collective_round(std::uint32_t round, std::uint32_t timestep, std::uint8_t k)
{
    const std::size_t m = endpoints_.size();
    std::vector<Tensor> p(m);
    std::vector<Tensor> q(m);
    // Barrier: every share for (t, k) must arrive before any sum goes out.
    for (std::size_t i = 0; i < m; ++i) {
        ProtocolMessage pm = expect(i, MsgType::p_share, round, timestep, k);
        ProtocolMessage qm = expect(i, MsgType::q_share, round, timestep, k);
        if (pm.tensors.size() != 1 || qm.tensors.size() != 1) throw ProtocolError("share message must carry 1 tensor");
        p[i] = std::move(pm.tensors[0]);
        q[i] = std::move(qm.tensors[0]);
        if (p[i].dims() != p[0].dims() || q[i].dims() != q[0].dims()) {
            throw ProtocolError("server: share shape mismatch from client " + std::to_string(i) + ": " +
                                p[i].shape_string() + " vs " + p[0].shape_string());
        }
    }
    if (cfg_->model.mode == AblationMode::intra_only) {
        for (std::size_t i = 0; i < m; ++i) {
            const auto id = static_cast<std::uint16_t>(i);
            send(i, {MsgType::p_sum, round, timestep, k, id, {p[i]}});
            send(i, {MsgType::q_sum, round, timestep, k, id, {q[i]}});
        }
        return;
    }
    Tensor p_sum = p[0];
    Tensor q_sum = q[0];
    for (std::size_t i = 1; i < m; ++i) {
        p_sum = add(p_sum, p[i]);
        q_sum = add(q_sum, q[i]);
    }
    for (std::size_t i = 0; i < m; ++i) {
        const auto id = static_cast<std::uint16_t>(i);
        send(i, {MsgType::p_sum, round, timestep, k, id, {p_sum}});
        send(i, {MsgType::q_sum, round, timestep, k, id, {q_sum}});
    }
}

std::vector<RoundStats> ServerNode::run_training(const RoundObserver& on_round)
{
    const std::size_t m = endpoints_.size();
    const std::size_t total_nodes = std::accumulate(node_counts_.begin(), node_counts_.end(), std::size_t{0});
    const std::size_t rounds_per_step = collective_rounds_per_window(cfg_->model) / 2;

    auto bytes_up = [&] {
        std::uint64_t b = 0;
        for (auto* e : endpoints_) b += e->bytes_received();
        return b;
    };
    auto bytes_down = [&] {
        std::uint64_t b = 0;
        for (auto* e : endpoints_) b += e->bytes_sent();
        return b;
    };

    std::vector<RoundStats> log;
    for (std::size_t r = 0; r < cfg_->global_rounds; ++r) {
        const auto start = Clock::now();
        const auto round = static_cast<std::uint32_t>(r);
        const std::uint64_t up0 = bytes_up();
        const std::uint64_t down0 = bytes_down();
        const std::uint64_t mu0 = messages_up_;
        const std::uint64_t md0 = messages_down_;

        RoundStats stats;
        stats.round = r;
        broadcast_params(round);
        std::uint64_t param_down = bytes_down() - down0;

        std::vector<double> loss_sum(m, 0.0);
        for (std::size_t s = 0; s < cfg_->local_rounds; ++s) {
            const std::uint64_t lu = bytes_up();
            const std::uint64_t ld = bytes_down();
            for (std::size_t t = 0; t < rounds_per_step; ++t) {
                const auto timestep = static_cast<std::uint32_t>(s * cfg_->model.t_in + t);
                collective_round(round, timestep, 1);
                collective_round(round, timestep, 2);
            }
            for (std::size_t i = 0; i < m; ++i) {
                const ProtocolMessage st = expect(i, MsgType::stats, round, static_cast<std::uint32_t>(s), 0);
                if (st.tensors.size() != 1 || st.tensors[0].size() != 1) throw ProtocolError("malformed STATS");
                loss_sum[i] += st.tensors[0][0];
            }
            stats.local_bytes_up.push_back(bytes_up() - lu);
            stats.local_bytes_down.push_back(bytes_down() - ld);
        }

        const std::uint64_t before_upload = bytes_up();
        std::vector<GlobalParams> snapshots;
        for (std::size_t i = 0; i < m; ++i) {
            const ProtocolMessage up = expect(i, MsgType::param_up, round, 0, 0);
            if (up.tensors.size() != 1 || up.tensors[0].size() != params_.flat_size()) {
                throw ProtocolError("server: PARAM_UP from client " + std::to_string(i) + " has the wrong size");
            }
            GlobalParams snap = params_;
            snap.assign_flat(up.tensors[0].values());
            snapshots.push_back(std::move(snap));
        }
        stats.param_bytes_up = bytes_up() - before_upload;
        stats.param_bytes_down = param_down;
        params_ = fedavg(snapshots, node_counts_);

        if (cfg_->local_rounds > 0) {
            double loss = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                loss += static_cast<double>(node_counts_[i]) / static_cast<double>(total_nodes) * loss_sum[i] /
                        static_cast<double>(cfg_->local_rounds);
            }
            stats.train_loss = loss;
        }
        stats.bytes_up = bytes_up() - up0;
        stats.bytes_down = bytes_down() - down0;
        stats.messages_up = messages_up_ - mu0;
        stats.messages_down = messages_down_ - md0;
        stats.seconds = std::chrono::duration<double>(Clock::now() - start).count();
        if (on_round) on_round(stats);
        log.push_back(std::move(stats));
    }
    return log;
}

void ServerNode::run_prediction(std::size_t windows, std::uint32_t round)
{
    broadcast_params(round);
    const std::size_t chunks = (windows + cfg_->batch_size - 1) / cfg_->batch_size;
    const std::size_t rounds_per_step = collective_rounds_per_window(cfg_->model) / 2;
    for (std::size_t c = 0; c < chunks; ++c) {
        for (std::size_t t = 0; t < rounds_per_step; ++t) {
            const auto timestep = static_cast<std::uint32_t>(c * cfg_->model.t_in + t);
            collective_round(round, timestep, 1);
            collective_round(round, timestep, 2);
        }
    }
}

// ---------------------------------------------------------------------------

TrainResult train_federated(const TrainConfig& cfg, const SignalSeries& normalized, const WindowPlan& plan,
                            const Partition& partition, const FederatedHooks& hooks)
{
    cfg.validate();
    if (partition.size() != cfg.clients) {
        throw ConfigError("partition has " + std::to_string(partition.size()) + " clients but clients=" +
                          std::to_string(cfg.clients));
    }
    owner_of_nodes(partition, normalized.nodes());

    std::vector<std::unique_ptr<ClientNode>> clients;
    std::vector<std::size_t> counts;
    for (std::size_t i = 0; i < partition.size(); ++i) {
        clients.push_back(std::make_unique<ClientNode>(
            static_cast<std::uint16_t>(i), partition[i], cfg, normalized, plan.train.starts,
            init_node_embeddings(partition[i], cfg.model.node_dim, cfg.seed)));
        counts.push_back(partition[i].size());
    }

    GlobalParams initial = GlobalParams::init(cfg.model, normalized.features(), normalized.steps_per_day, cfg.seed);
    TrainResult result;
    run_federation(
        cfg.transport, clients.size(),
        [&](std::size_t i, Endpoint& ep) { clients[i]->run_training(ep, hooks.on_step); },
        [&](std::vector<Endpoint*> eps) {
            ServerNode server(cfg, std::move(eps), counts, initial, hooks.on_message);
            result.rounds = server.run_training(hooks.on_round);
            result.model.params = server.params();
        });
    if (cfg.global_rounds == 0) result.model.params = initial;

    result.model.node_embeddings = Tensor::zeros(normalized.nodes(), cfg.model.node_dim);
    for (const auto& c : clients) {
        for (std::size_t r = 0; r < c->nodes().size(); ++r) {
            for (std::size_t j = 0; j < cfg.model.node_dim; ++j) {
                result.model.node_embeddings.at(c->nodes()[r], j) = c->node_embeddings().at(r, j);
            }
        }
    }
    return result;
}

namespace {

Tensor scatter_rows(std::span<const Tensor> parts, const Partition& partition, std::size_t nodes)
{
    Tensor full = Tensor::zeros(nodes, parts.front().cols());
    for (std::size_t c = 0; c < parts.size(); ++c) {
        for (std::size_t r = 0; r < partition[c].size(); ++r) {
            std::copy_n(parts[c].data() + r * full.cols(), full.cols(), full.data() + partition[c][r] * full.cols());
        }
    }
    return full;
}

FederatedTrace run_federated_forward(const TrainConfig& cfg, const TrainedModel& model,
                                     const SignalSeries& normalized, std::span<const std::size_t> starts,
                                     const Partition& partition, const MessageObserver& on_message, bool keep_trace)
{
    owner_of_nodes(partition, normalized.nodes());
    std::vector<std::unique_ptr<ClientNode>> clients;
    std::vector<std::size_t> counts;
    for (std::size_t i = 0; i < partition.size(); ++i) {
        clients.push_back(std::make_unique<ClientNode>(static_cast<std::uint16_t>(i), partition[i], cfg, normalized,
                                                       std::span<const std::size_t>{},
                                                       gather_rows(model.node_embeddings, partition[i])));
        counts.push_back(partition[i].size());
    }
    const auto round = static_cast<std::uint32_t>(cfg.global_rounds);
    std::vector<std::vector<Tensor>> parts(clients.size());
    std::vector<std::vector<std::vector<StepTrace>>> traces(clients.size());
    run_federation(
        cfg.transport, clients.size(),
        [&](std::size_t i, Endpoint& ep) {
            parts[i] = clients[i]->run_prediction(ep, starts, round, keep_trace ? &traces[i] : nullptr);
        },
        [&](std::vector<Endpoint*> eps) {
            ServerNode server(cfg, std::move(eps), counts, model.params, on_message);
            server.run_prediction(starts.size(), round);
        });

    const std::size_t n = normalized.nodes();
    const std::size_t d = normalized.features();
    FederatedTrace out;
    for (std::size_t w = 0; w < starts.size(); ++w) {
        Tensor full({cfg.model.t_out, n, d});
        for (std::size_t c = 0; c < clients.size(); ++c) {
            const Tensor& local = parts[c].at(w);
            for (std::size_t h = 0; h < cfg.model.t_out; ++h) {
                for (std::size_t r = 0; r < partition[c].size(); ++r) {
                    for (std::size_t f = 0; f < d; ++f) full.at(h, partition[c][r], f) = local.at(h, r, f);
                }
            }
        }
        out.predictions.push_back(std::move(full));
        if (!keep_trace) continue;
        std::vector<StepTrace> steps(cfg.model.t_in);
        for (std::size_t t = 0; t < cfg.model.t_in; ++t) {
            auto gather = [&](Tensor StepTrace::*field) {
                std::vector<Tensor> pieces;
                for (std::size_t c = 0; c < clients.size(); ++c) pieces.push_back(traces[c].at(w).at(t).*field);
                return scatter_rows(pieces, partition, n);
            };
            steps[t] = {gather(&StepTrace::l1), gather(&StepTrace::update),    gather(&StepTrace::reset),
                        gather(&StepTrace::l2), gather(&StepTrace::candidate), gather(&StepTrace::h)};
        }
        out.steps.push_back(std::move(steps));
    }
    return out;
}

} // namespace

std::vector<Tensor> predict_federated(const TrainConfig& cfg, const TrainedModel& model, const SignalSeries& normalized,
                                      std::span<const std::size_t> starts, const Partition& partition,
                                      const MessageObserver& on_message)
{
    return run_federated_forward(cfg, model, normalized, starts, partition, on_message, false).predictions;
}

FederatedTrace trace_federated(const TrainConfig& cfg, const TrainedModel& model, const SignalSeries& normalized,
                               std::span<const std::size_t> starts, const Partition& partition)
{
    return run_federated_forward(cfg, model, normalized, starts, partition, {}, true);
}

// ---------------------------------------------------------------------------

CommPrediction comm_account(const TrainConfig& cfg, std::size_t feature_dim, std::size_t steps_per_day,
                            std::size_t train_windows)
{
    const HyperConfig& mc = cfg.model;
    const std::uint64_t m = cfg.clients;
    const std::size_t batch = std::min(cfg.batch_size, train_windows);
    const std::size_t d_in = feature_dim + mc.hidden_dim;
    const std::size_t p_rows = mc.affinity_dim;
    const std::size_t q_rows = mc.affinity_dim * mc.augmented_width();

    CommPrediction c;
    c.theta_size = GlobalParams::zeros(mc, feature_dim, steps_per_day).flat_size();
    c.p_frame_bytes = frame_bytes(std::vector<Dims>{{batch, p_rows, d_in}}) + kLengthPrefixBytes;
    c.q_frame_bytes = frame_bytes(std::vector<Dims>{{batch, q_rows, d_in}}) + kLengthPrefixBytes;
    const std::uint64_t stats_bytes = frame_bytes(std::vector<Dims>{{1}}) + kLengthPrefixBytes;
    const std::uint64_t param_bytes = frame_bytes(std::vector<Dims>{{c.theta_size}}) + kLengthPrefixBytes;

    const std::uint64_t rounds = collective_rounds_per_window(mc);
    const std::uint64_t per_pair = c.p_frame_bytes + c.q_frame_bytes;
    c.share_payload_up = m * rounds * 8 * batch * (p_rows + q_rows) * d_in;
    c.local_up = m * (rounds * per_pair + stats_bytes);
    c.local_down = m * rounds * per_pair;
    c.param_up = m * param_bytes;
    c.param_down = m * param_bytes;
    c.round_up = c.param_up + cfg.local_rounds * c.local_up;
    c.round_down = c.param_down + cfg.local_rounds * c.local_down;
    return c;
}

// ---------------------------------------------------------------------------

LocalityAudit::LocalityAudit(std::vector<std::size_t> client_sizes) : sizes_(std::move(client_sizes)) {}

void LocalityAudit::observe(const ProtocolMessage& msg)
{
    ++messages_;
    for (const Tensor& t : msg.tensors) {
        ++tensors_;
        // Stacked shares carry the batch on axis 0; the per-sample rows follow.
        const std::size_t rows = t.rank() == 1 ? t.dim(0) : t.dim(t.rank() - 2);
        if (std::find(sizes_.begin(), sizes_.end(), rows) != sizes_.end()) {
            violations_.push_back(std::string(to_string(msg.type)) + " from/to client " +
                                  std::to_string(msg.client_id) + " round " + std::to_string(msg.round) +
                                  " carries a tensor " + t.shape_string());
        }
    }
}

} // namespace fedstgd
