#include "fedstgd/properties.hpp"

#include "fedstgd/codec_fuzz.hpp"
#include "fedstgd/errors.hpp"
#include "fedstgd/federated.hpp"
#include "fedstgd/random.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <mutex>
#include <sstream>

namespace fedstgd {

namespace {

using Clock = std::chrono::steady_clock;

Tensor random_matrix(std::size_t rows, std::size_t cols, const CounterRng& rng, std::uint64_t offset, double scale)
{
    Tensor t = Tensor::zeros(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal(offset + i);
    return t;
}

struct Prepared {
    SignalSeries normalized;
    WindowPlan plan;
};

Prepared prepare(std::size_t nodes, std::size_t steps, std::size_t features, std::size_t t_in, std::size_t t_out,
                 std::uint64_t seed)
{
    SynthOptions synth;
    synth.seed = seed;
    synth.nodes = nodes;
    synth.steps = steps;
    synth.features = features;
    synth.steps_per_day = 24;
    const SignalSeries raw = synth_diffusion(synth);
    Prepared p;
    p.plan = split_and_window(raw, t_in, t_out);
    const Normalizer norm = Normalizer::fit(raw, p.plan.train.begin, p.plan.train.end);
    p.normalized = raw;
    p.normalized.values = norm.apply(raw.values);
    return p;
}

HyperConfig compact_model()
{
    HyperConfig cfg;
    cfg.node_dim = 8;
    cfg.time_dim = 8;
    cfg.hidden_dim = 8;
    return cfg;
}

/// Runs `body`, timing it and converting any exception into a failure.
template <typename Body>
PropertyResult timed(std::string name, double tolerance, Body&& body)
{
    PropertyResult r;
    r.name = std::move(name);
    r.tolerance = tolerance;
    const auto start = Clock::now();
    try {
        body(r);
    } catch (const std::exception& e) {
        r.passed = false;
        r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    return r;
}

void finish(PropertyResult& r)
{
    r.passed = r.detail.empty() && std::isfinite(r.max_error) && r.max_error <= r.tolerance;
}

} // namespace

PropertyResult check_gamma_identity(const PropertyOptions& opt, std::size_t instances)
{
    return timed("gamma_identity", opt.tolerance_or(1e-9), [&](PropertyResult& r) {
        const CounterRng dims(opt.seed, 101);
        const CounterRng values(opt.seed, 102);
        for (std::size_t k = 0; k < instances; ++k) {
            const std::size_t ni = 1 + dims.bits(4 * k) % 8;
            const std::size_t nj = 1 + dims.bits(4 * k + 1) % 8;
            const std::size_t d = 1 + dims.bits(4 * k + 2) % 5;
            const std::size_t dn = 1 + dims.bits(4 * k + 3) % 5;
            const std::uint64_t base = k * 1000;
            const Tensor wi = random_matrix(ni, d, values, base, 1.0);
            const Tensor vi = random_matrix(ni, dn, values, base + 100, 1.0);
            const Tensor wj = random_matrix(nj, d, values, base + 200, 1.0);
            const Tensor vj = random_matrix(nj, dn, values, base + 300, 1.0);
            const Tensor lhs = hadamard(matmul_nt(wi, wj), matmul_nt(vi, vj));
            const Tensor rhs = matmul_nt(gamma_map(wi, vi), gamma_map(wj, vj));
            r.max_error = std::max(r.max_error, max_abs_diff(lhs, rhs));
        }
        finish(r);
        r.detail = std::to_string(instances) + " instances";
    });
}

PropertyResult check_distributed_equivalence(const PropertyOptions& opt, const std::vector<std::size_t>& client_counts)
{
    return timed("distributed_equivalence", opt.tolerance_or(1e-9), [&](PropertyResult& r) {
        constexpr std::size_t nodes = 16;
        TrainConfig cfg;
        cfg.model.t_in = 4;
        cfg.gamma_order = opt.gamma_order;
        cfg.batch_size = 4;
        const Prepared data = prepare(nodes, 240, 2, cfg.model.t_in, cfg.model.t_out, opt.seed);
        const std::vector<std::size_t> starts(data.plan.test.starts.begin(), data.plan.test.starts.begin() + 3);
        TrainedModel model{GlobalParams::init(cfg.model, 2, 24, opt.seed + 7),
                           init_node_embeddings(nodes, cfg.model.node_dim, opt.seed + 7)};
        const CounterRng bias(opt.seed, 103);
        for (auto slot : {GlobalParams::b_update, GlobalParams::b_reset, GlobalParams::b_candidate,
                          GlobalParams::b_affinity, GlobalParams::b_augment}) {
            for (std::size_t i = 0; i < model.params[slot].size(); ++i) {
                model.params[slot][i] = 0.3 * bias.normal(slot * 100000 + i);
            }
        }

        std::vector<WindowData> windows;
        for (std::size_t t0 : starts) {
            WindowData w = make_window(data.normalized, t0, cfg.model.t_in, cfg.model.t_out);
            w.target = Tensor();
            windows.push_back(std::move(w));
        }
        Tape tape;
        const ModelBinding mono{&cfg.model, ParamVars::bind(tape, model.params, false),
                                tape.constant(model.node_embeddings)};
        DenseApproxMixer mixer(mono, std::vector<std::size_t>(nodes, 0));
        const ForwardOutput reference = run_windows(tape, mono, windows, mixer, true);

        std::ostringstream notes;
        for (std::size_t m : client_counts) {
            cfg.clients = m;
            const Partition part = partition_graph(nodes, m, PartitionScheme::contiguous_equal);
            std::vector<FederatedTrace> runs;
            for (TransportKind kind : {TransportKind::memory, TransportKind::tcp}) {
                cfg.transport = kind;
                runs.push_back(trace_federated(cfg, model, data.normalized, starts, part));
                const FederatedTrace& fed = runs.back();
                for (std::size_t w = 0; w < starts.size(); ++w) {
                    const Tensor& packed = tape.value(reference.predictions[w]);
                    for (std::size_t h = 0; h < cfg.model.t_out; ++h) {
                        for (std::size_t i = 0; i < nodes; ++i) {
                            for (std::size_t f = 0; f < 2; ++f) {
                                r.max_error = std::max(
                                    r.max_error, std::abs(packed.at(i, h * 2 + f) - fed.predictions[w].at(h, i, f)));
                            }
                        }
                    }
                    for (std::size_t t = 0; t < cfg.model.t_in; ++t) {
                        const StepTrace& a = reference.trace[w][t];
                        const StepTrace& b = fed.steps[w][t];
                        for (auto field : {&StepTrace::l1, &StepTrace::l2, &StepTrace::update, &StepTrace::reset,
                                           &StepTrace::candidate, &StepTrace::h}) {
                            r.max_error = std::max(r.max_error, max_abs_diff(a.*field, b.*field));
                        }
                    }
                }
            }
            double cross = 0.0;
            for (std::size_t w = 0; w < starts.size(); ++w) {
                cross = std::max(cross, max_abs_diff(runs[0].predictions[w], runs[1].predictions[w]));
                for (std::size_t t = 0; t < cfg.model.t_in; ++t) {
                    cross = std::max(cross, max_abs_diff(runs[0].steps[w][t].h, runs[1].steps[w][t].h));
                    cross = std::max(cross, max_abs_diff(runs[0].steps[w][t].l1, runs[1].steps[w][t].l1));
                    cross = std::max(cross, max_abs_diff(runs[0].steps[w][t].l2, runs[1].steps[w][t].l2));
                }
            }
            if (cross != 0.0) {
                r.detail = "memory and tcp traces differ for M=" + std::to_string(m);
                return;
            }
            notes << (notes.tellp() > 0 ? "," : "M=") << m;
        }
        finish(r);
        r.detail = notes.str() + " memory+tcp bit-identical";
    });
}

PropertyResult check_single_client_reduction(const PropertyOptions& opt, std::size_t global_rounds,
                                             std::size_t local_rounds)
{
    return timed("single_client_reduction", opt.tolerance_or(1e-9), [&](PropertyResult& r) {
        TrainConfig cfg;
        cfg.model = compact_model();
        cfg.clients = 1;
        cfg.global_rounds = global_rounds;
        cfg.local_rounds = local_rounds;
        cfg.seed = opt.seed;
        cfg.gamma_order = opt.gamma_order;
        const Prepared data = prepare(8, 400, 1, cfg.model.t_in, cfg.model.t_out, opt.seed);
        const Partition part = partition_graph(8, 1, PartitionScheme::contiguous_equal);

        std::vector<std::vector<double>> central;
        TrainHooks ch;
        ch.on_step = [&](std::size_t, std::size_t, const GlobalParams& p, const Tensor& e) {
            central.push_back(p.flatten());
            central.back().insert(central.back().end(), e.values().begin(), e.values().end());
        };
        train_central(cfg, data.normalized, data.plan, part, CentralAdjacency::approximated, ch);

        std::vector<std::vector<double>> federated;
        FederatedHooks fh;
        fh.on_step = [&](std::size_t, std::size_t, const GlobalParams& p, const Tensor& e) {
            federated.push_back(p.flatten());
            federated.back().insert(federated.back().end(), e.values().begin(), e.values().end());
        };
        train_federated(cfg, data.normalized, data.plan, part, fh);

        if (central.size() != global_rounds * local_rounds || federated.size() != central.size()) {
            r.detail = "step counts differ";
            return;
        }
        for (std::size_t s = 0; s < central.size(); ++s) {
            for (std::size_t i = 0; i < central[s].size(); ++i) {
                r.max_error = std::max(r.max_error, std::abs(central[s][i] - federated[s][i]));
            }
        }
        finish(r);
        r.detail = std::to_string(central.size()) + " steps compared";
    });
}

PropertyResult check_gradients(const PropertyOptions& opt)
{
    return timed("gradients", opt.tolerance_or(1e-4), [&](PropertyResult& r) {
        HyperConfig cfg;
        cfg.node_dim = 3;
        cfg.time_dim = 2;
        cfg.hidden_dim = 4;
        cfg.t_in = 3;
        cfg.t_out = 2;
        constexpr std::size_t nodes = 4;
        constexpr std::size_t d = 2;
        constexpr std::size_t slots = 5;
        const CounterRng rng(opt.seed, 104);
        GlobalParams params = GlobalParams::init(cfg, d, slots, opt.seed);
        for (auto slot : {GlobalParams::b_update, GlobalParams::b_reset, GlobalParams::b_candidate,
                          GlobalParams::b_affinity, GlobalParams::b_augment, GlobalParams::b_out}) {
            for (std::size_t i = 0; i < params[slot].size(); ++i) params[slot][i] = 0.3 * rng.normal(slot * 1000 + i);
        }
        WindowData window;
        for (std::size_t t = 0; t < cfg.t_in; ++t) window.frames.push_back(random_matrix(nodes, d, rng, 50000 + 100 * t, 1.0));
        window.start_slot = 3;
        window.target = random_matrix(nodes, cfg.t_out * d, rng, 90000, 1.0);
        const std::vector<WindowData> windows{window};

        std::vector<Tensor> leaves(params.tensors.begin(), params.tensors.end());
        leaves.push_back(init_node_embeddings(nodes, cfg.node_dim, opt.seed + 1));
        for (std::size_t group = 0; group < leaves.size(); ++group) {
            const TapeLoss loss = [&](Tape& tape, std::span<const Tape::Var> p) {
                ModelBinding model{&cfg, {}, {}};
                for (std::size_t i = 0; i < leaves.size(); ++i) {
                    const Tape::Var v = i == group ? p[0] : tape.constant(leaves[i]);
                    if (i < GlobalParams::kCount) {
                        model.params.vars[i] = v;
                    } else {
                        model.node_embeddings = v;
                    }
                }
                DenseApproxMixer mixer(model, std::vector<std::size_t>(nodes, 0));
                return run_windows(tape, model, windows, mixer).loss;
            };
            r.max_error = std::max(r.max_error, finite_diff_check(loss, {leaves[group]}, 1e-5));
        }
        finish(r);
        r.detail = std::to_string(leaves.size()) + " parameter groups";
    });
}

PropertyResult check_hidden_bound(const PropertyOptions& opt, std::size_t rollouts, std::size_t steps)
{
    return timed("hidden_bound", 1.0, [&](PropertyResult& r) {
        HyperConfig cfg = compact_model();
        cfg.t_in = steps;
        cfg.t_out = 1;
        constexpr std::size_t nodes = 5;
        constexpr std::size_t d = 2;
        constexpr std::size_t slots = 24;
        std::size_t checked = 0;
        for (std::size_t k = 0; k < rollouts; ++k) {
            const CounterRng rng(opt.seed + k, 105);
            GlobalParams params = GlobalParams::init(cfg, d, slots, opt.seed + k);
            for (auto& t : params.tensors) {
                for (double& v : t.values()) v *= 3.0;
            }
            WindowData window;
            for (std::size_t t = 0; t < steps; ++t) window.frames.push_back(random_matrix(nodes, d, rng, 100 * t, 5.0));
            window.start_slot = rng.bits(999) % slots;
            const std::vector<WindowData> windows{window};
            Tape tape;
            const ModelBinding model{&cfg, ParamVars::bind(tape, params, false),
                                     tape.constant(init_node_embeddings(nodes, cfg.node_dim, opt.seed + k))};
            DenseApproxMixer mixer(model, std::vector<std::size_t>(nodes, 0));
            const ForwardOutput out = run_windows(tape, model, windows, mixer, true);
            for (const StepTrace& s : out.trace.front()) {
                r.max_error = std::max(r.max_error, max_abs(s.h));
                checked += s.h.size();
            }
        }
        finish(r);
        r.detail = std::to_string(checked) + " coordinates";
    });
}

PropertyResult check_codec(const PropertyOptions& opt, std::size_t messages)
{
    return timed("codec", 0.0, [&](PropertyResult& r) {
        CounterRng rng(opt.seed, 106);
        std::size_t round_trip_failures = 0;
        std::size_t accepted_mutants = 0;
        std::size_t untyped = 0;
        for (std::size_t i = 0; i < messages; ++i) {
            const ProtocolMessage msg = random_message(rng);
            const std::vector<std::uint8_t> frame = encode(msg);
            try {
                const ProtocolMessage back = decode(frame);
                if (!back.identical(msg) || encode(back) != frame) ++round_trip_failures;
            } catch (const std::exception&) {
                ++round_trip_failures;
            }
        }
        for (std::size_t i = 0; i < messages; ++i) {
            const ProtocolMessage msg = random_message(rng);
            const auto kind = static_cast<Mutation>(i % 4);
            const std::vector<std::uint8_t> bad = mutate_frame(encode(msg), kind, rng);
            try {
                decode(bad);
                ++accepted_mutants;
            } catch (const DecodeError&) {
            } catch (...) {
                ++untyped;
            }
        }
        r.max_error = static_cast<double>(round_trip_failures + accepted_mutants + untyped);
        finish(r);
        r.detail = std::to_string(messages) + " round trips, " + std::to_string(messages) + " mutants; failures=" +
                   std::to_string(round_trip_failures) + " accepted=" + std::to_string(accepted_mutants) +
                   " untyped=" + std::to_string(untyped);
    });
}

PropertyResult check_fedavg_laws(const PropertyOptions& opt)
{
    return timed("fedavg_laws", opt.tolerance_or(1e-12), [&](PropertyResult& r) {
        const HyperConfig cfg = compact_model();
        const GlobalParams shape = GlobalParams::zeros(cfg, 1, 24);
        auto filled = [&](double v) {
            GlobalParams p = shape;
            for (auto& t : p.tensors) std::fill(t.values().begin(), t.values().end(), v);
            return p;
        };
        auto worst = [](const std::vector<double>& a, const std::vector<double>& b) {
            double m = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
            return m;
        };
        {
            const std::vector<GlobalParams> s{filled(2.0), filled(4.0)};
            const std::vector<std::size_t> n{1, 1};
            r.max_error = std::max(r.max_error, worst(fedavg(s, n).flatten(), filled(3.0).flatten()));
        }
        {
            const std::vector<GlobalParams> s{filled(0.0), filled(4.0)};
            const std::vector<std::size_t> n{3, 1};
            r.max_error = std::max(r.max_error, worst(fedavg(s, n).flatten(), filled(1.0).flatten()));
        }
        std::vector<GlobalParams> snaps;
        for (std::uint64_t k = 0; k < 4; ++k) snaps.push_back(GlobalParams::init(cfg, 1, 24, opt.seed + k));
        const std::vector<std::size_t> counts{3, 5, 2, 7};
        const std::vector<GlobalParams> same(4, snaps[0]);
        r.max_error = std::max(r.max_error, worst(fedavg(same, counts).flatten(), snaps[0].flatten()));

        const auto avg = fedavg(snaps, counts).flatten();
        const std::vector<GlobalParams> reversed(snaps.rbegin(), snaps.rend());
        const std::vector<std::size_t> reversed_counts(counts.rbegin(), counts.rend());
        r.max_error = std::max(r.max_error, worst(avg, fedavg(reversed, reversed_counts).flatten()));

        std::vector<std::vector<double>> flat;
        for (const auto& s : snaps) flat.push_back(s.flatten());
        for (std::size_t j = 0; j < avg.size(); ++j) {
            double lo = flat[0][j];
            double hi = flat[0][j];
            for (const auto& f : flat) {
                lo = std::min(lo, f[j]);
                hi = std::max(hi, f[j]);
            }
            r.max_error = std::max({r.max_error, lo - avg[j], avg[j] - hi});
        }
        finish(r);
        r.detail = "examples, identity, order, convex hull";
    });
}

PropertyResult check_comm_accounting(const PropertyOptions& opt, const std::vector<std::size_t>& client_counts,
                                     TransportKind transport)
{
    return timed("comm_accounting", 0.0, [&](PropertyResult& r) {
        constexpr std::size_t nodes = 16;
        TrainConfig cfg;
        cfg.global_rounds = 2;
        cfg.local_rounds = 2;
        cfg.seed = opt.seed;
        cfg.transport = transport;
        const Prepared data = prepare(nodes, 400, 1, cfg.model.t_in, cfg.model.t_out, opt.seed);
        std::size_t mismatches = 0;
        std::vector<std::pair<std::size_t, std::uint64_t>> share_up; // (M, measured share bytes per local round)
        std::ostringstream notes;
        for (std::size_t m : client_counts) {
            cfg.clients = m;
            const Partition part = partition_graph(nodes, m, PartitionScheme::contiguous_equal);
            const CommPrediction want = comm_account(cfg, 1, 24, data.plan.train.starts.size());
            const TrainResult result = train_federated(cfg, data.normalized, data.plan, part);
            for (const RoundStats& s : result.rounds) {
                mismatches += s.bytes_up != want.round_up;
                mismatches += s.bytes_down != want.round_down;
                mismatches += s.param_bytes_up != want.param_up;
                mismatches += s.param_bytes_down != want.param_down;
                for (std::uint64_t b : s.local_bytes_up) mismatches += b != want.local_up;
                for (std::uint64_t b : s.local_bytes_down) mismatches += b != want.local_down;
            }
            const std::uint64_t stats = frame_bytes(std::vector<Dims>{{1}}) + kLengthPrefixBytes;
            share_up.emplace_back(m, result.rounds.front().local_bytes_up.front() - m * stats);
            notes << "M=" << m << " round_up=" << want.round_up << " round_down=" << want.round_down << "; ";
        }
        for (const auto& [m, bytes] : share_up) {
            mismatches += bytes * share_up.front().first != share_up.front().second * m;
        }
        r.max_error = static_cast<double>(mismatches);
        finish(r);
        r.detail = notes.str() + "share bytes linear in M";
    });
}

PropertyResult check_locality(const PropertyOptions& opt, std::size_t nodes, std::size_t clients)
{
    return timed("locality_audit", 0.0, [&](PropertyResult& r) {
        TrainConfig cfg;
        cfg.clients = clients;
        cfg.global_rounds = 2;
        cfg.local_rounds = 2;
        cfg.seed = opt.seed;
        const Prepared data = prepare(nodes, 400, 1, cfg.model.t_in, cfg.model.t_out, opt.seed);
        const Partition part = partition_graph(nodes, clients, PartitionScheme::contiguous_equal);
        std::vector<std::size_t> sizes;
        for (const auto& p : part) sizes.push_back(p.size());
        LocalityAudit audit(sizes);
        std::mutex mu;
        FederatedHooks hooks;
        hooks.on_message = [&](const ProtocolMessage& m, bool) {
            const std::lock_guard lock(mu);
            audit.observe(m);
        };
        const TrainResult result = train_federated(cfg, data.normalized, data.plan, part, hooks);
        predict_federated(cfg, result.model, data.normalized, data.plan.test.starts, part, hooks.on_message);
        r.max_error = static_cast<double>(audit.violations().size());
        finish(r);
        r.detail = std::to_string(audit.messages()) + " messages, " + std::to_string(audit.tensors()) + " tensors";
        if (!audit.violations().empty()) r.detail += "; first: " + audit.violations().front();
    });
}

std::vector<PropertyResult> run_property_suite(const PropertyOptions& opt)
{
    return {
        check_gamma_identity(opt),
        check_distributed_equivalence(opt),
        check_single_client_reduction(opt),
        check_gradients(opt),
        check_hidden_bound(opt),
        check_codec(opt),
        check_fedavg_laws(opt),
        check_comm_accounting(opt),
        check_locality(opt),
    };
}

std::string format_property(const PropertyResult& r)
{
    std::ostringstream out;
    out.precision(6);
    out << "check=" << r.name << " status=" << (r.passed ? "pass" : "fail") << " max_error=" << r.max_error
        << " tolerance=" << r.tolerance << " seconds=" << r.seconds << " detail=\"" << r.detail << '"';
    return out.str();
}

} // namespace fedstgd
