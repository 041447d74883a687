#include "fedstgd/errors.hpp"
#include "fedstgd/federated.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <mutex>
#include <set>

using namespace fedstgd;

namespace {

struct Fixture {
    SignalSeries normalized;
    WindowPlan plan;
    TrainConfig cfg;
};

Fixture make_fixture(std::size_t nodes, std::size_t clients, std::size_t steps = 240)
{
    SynthOptions opt;
    opt.nodes = nodes;
    opt.steps = steps;
    opt.steps_per_day = 24;
    Fixture f;
    f.cfg.model.node_dim = 3;
    f.cfg.model.time_dim = 2;
    f.cfg.model.hidden_dim = 4;
    f.cfg.model.t_in = 3;
    f.cfg.model.t_out = 2;
    f.cfg.model.affinity_dim = 2;
    f.cfg.model.augment_dim = 2;
    f.cfg.clients = clients;
    f.cfg.global_rounds = 2;
    f.cfg.local_rounds = 2;
    f.cfg.batch_size = 4;
    f.cfg.learning_rate = 5e-3;
    f.cfg.timeout = std::chrono::seconds(30);
    const SignalSeries raw = synth_diffusion(opt);
    f.plan = split_and_window(raw, f.cfg.model.t_in, f.cfg.model.t_out);
    const Normalizer norm = Normalizer::fit(raw, f.plan.train.begin, f.plan.train.end);
    f.normalized = raw;
    f.normalized.values = norm.apply(raw.values);
    return f;
}

GlobalParams filled(const GlobalParams& shape, double v)
{
    GlobalParams out = shape;
    for (auto& t : out.tensors) std::fill(t.values().begin(), t.values().end(), v);
    return out;
}

double max_abs_diff(const GlobalParams& a, const GlobalParams& b)
{
    const auto x = a.flatten();
    const auto y = b.flatten();
    double m = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
    return m;
}

} // namespace

// ---------------------------------------------------------------------------

TEST(FedAvg, WeightedExamples)
{
    const GlobalParams shape = GlobalParams::zeros(make_fixture(4, 1).cfg.model, 1, 24);
    {
        const std::vector<GlobalParams> s{filled(shape, 2.0), filled(shape, 4.0)};
        const std::vector<std::size_t> n{1, 1};
        EXPECT_EQ(fedavg(s, n).flatten().front(), 3.0);
    }
    {
        const std::vector<GlobalParams> s{filled(shape, 0.0), filled(shape, 4.0)};
        const std::vector<std::size_t> n{3, 1};
        EXPECT_EQ(fedavg(s, n).flatten().back(), 1.0);
    }
}

TEST(FedAvg, StaysInsideTheConvexHull)
{
    const Fixture f = make_fixture(4, 1);
    std::vector<GlobalParams> s;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) s.push_back(GlobalParams::init(f.cfg.model, 1, 24, seed));
    const std::vector<std::size_t> n{5, 2, 9};
    const auto avg = fedavg(s, n).flatten();
    for (std::size_t j = 0; j < avg.size(); ++j) {
        double lo = 1e300, hi = -1e300;
        for (const auto& p : s) {
            lo = std::min(lo, p.flatten()[j]);
            hi = std::max(hi, p.flatten()[j]);
        }
        EXPECT_GE(avg[j], lo - 1e-15);
        EXPECT_LE(avg[j], hi + 1e-15);
    }
}

TEST(FedAvg, RejectsDriftAndZeroCounts)
{
    const Fixture f = make_fixture(4, 1);
    HyperConfig wider = f.cfg.model;
    wider.hidden_dim += 1;
    const std::vector<GlobalParams> drift{GlobalParams::zeros(f.cfg.model, 1, 24), GlobalParams::zeros(wider, 1, 24)};
    const std::vector<std::size_t> n{1, 1};
    EXPECT_THROW(fedavg(drift, n), ProtocolError);
    const std::vector<GlobalParams> same{drift[0], drift[0]};
    const std::vector<std::size_t> zero{1, 0};
    EXPECT_THROW(fedavg(same, zero), ConfigError);
}

// ---------------------------------------------------------------------------

TEST(Adam, FirstStepMovesByLearningRate)
{
    Tensor p({2}, {1.0, -2.0});
    const Tensor g({2}, {0.5, -4.0});
    Adam adam;
    std::vector<Tensor*> params{&p};
    std::vector<const Tensor*> grads{&g};
    adam.step(params, grads, 0.1, 0.0);
    // Bias-corrected first step is lr·g/(|g| + ε).
    EXPECT_NEAR(p[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
    EXPECT_NEAR(p[1], -2.0 + 0.1 * 4.0 / (4.0 + 1e-8), 1e-15);
}

TEST(Adam, WeightDecayActsWithoutGradient)
{
    Tensor p({1}, {2.0});
    Adam adam;
    std::vector<Tensor*> params{&p};
    std::vector<const Tensor*> grads{nullptr};
    adam.step(params, grads, 0.01, 1e-4);
    EXPECT_NEAR(p[0], 2.0 - 0.01 * 2e-4 / (2e-4 + 1e-8), 1e-15);
}

TEST(Schedule, MilestonesDecayTheRate)
{
    TrainConfig cfg;
    EXPECT_DOUBLE_EQ(cfg.learning_rate_at(0), 1e-3);
    EXPECT_DOUBLE_EQ(cfg.learning_rate_at(4), 1e-3);
    EXPECT_DOUBLE_EQ(cfg.learning_rate_at(5), 3e-4);
    EXPECT_DOUBLE_EQ(cfg.learning_rate_at(20), 1e-3 * 0.3 * 0.3);
    EXPECT_DOUBLE_EQ(cfg.learning_rate_at(100), 1e-3 * std::pow(0.3, 5));
}

TEST(Batches, DeterministicDistinctAndInPool)
{
    std::vector<std::size_t> pool(50);
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = 3 * i;
    const auto a = batch_starts(9, 4, pool, 16);
    EXPECT_EQ(a, batch_starts(9, 4, pool, 16));
    EXPECT_NE(a, batch_starts(9, 5, pool, 16));
    const std::set<std::size_t> unique(a.begin(), a.end());
    EXPECT_EQ(unique.size(), 16u);
    for (std::size_t s : a) EXPECT_EQ(s % 3, 0u);
    const std::vector<std::size_t> small{7, 8};
    EXPECT_EQ(batch_starts(9, 0, small, 16), small);
}

// ---------------------------------------------------------------------------

TEST(Training, CentralLossFallsOnSmallProblem)
{
    Fixture f = make_fixture(6, 1);
    f.cfg.global_rounds = 12;
    f.cfg.local_rounds = 4;
    f.cfg.learning_rate = 1e-2;
    f.cfg.lr_milestones = {};
    const Partition part = partition_graph(6, 1, PartitionScheme::contiguous_equal);
    const TrainResult r = train_central(f.cfg, f.normalized, f.plan, part);
    ASSERT_EQ(r.rounds.size(), 12u);
    EXPECT_LT(r.rounds.back().train_loss, 0.8 * r.rounds.front().train_loss);
}

TEST(Training, NoLocalRoundsLeavesParametersUnchanged)
{
    Fixture f = make_fixture(8, 3);
    f.cfg.local_rounds = 0;
    const Partition part = partition_graph(8, 3, PartitionScheme::contiguous_equal);
    const TrainResult r = train_federated(f.cfg, f.normalized, f.plan, part);
    const GlobalParams init = GlobalParams::init(f.cfg.model, 1, 24, f.cfg.seed);
    EXPECT_LE(max_abs_diff(r.model.params, init), 1e-15);
}

TEST(Training, SingleClientMatchesCentralTrajectory)
{
    Fixture f = make_fixture(6, 1);
    f.cfg.global_rounds = 3;
    f.cfg.local_rounds = 3;
    const Partition part = partition_graph(6, 1, PartitionScheme::contiguous_equal);

    std::vector<GlobalParams> central_steps;
    TrainHooks ch;
    ch.on_step = [&](std::size_t, std::size_t, const GlobalParams& p, const Tensor&) { central_steps.push_back(p); };
    const TrainResult central = train_central(f.cfg, f.normalized, f.plan, part, CentralAdjacency::approximated, ch);

    std::vector<GlobalParams> fed_steps;
    FederatedHooks fh;
    fh.on_step = [&](std::size_t, std::size_t, const GlobalParams& p, const Tensor&) { fed_steps.push_back(p); };
    const TrainResult fed = train_federated(f.cfg, f.normalized, f.plan, part, fh);

    ASSERT_EQ(central_steps.size(), 9u);
    ASSERT_EQ(fed_steps.size(), 9u);
    for (std::size_t s = 0; s < 9; ++s) EXPECT_LE(max_abs_diff(central_steps[s], fed_steps[s]), 1e-9) << s;
    EXPECT_LE(max_abs_diff(central.model.params, fed.model.params), 1e-9);
    EXPECT_LE(max_abs_diff(central.model.node_embeddings, fed.model.node_embeddings), 1e-9);
    for (std::size_t r = 0; r < 3; ++r) {
        EXPECT_NEAR(central.rounds[r].train_loss, fed.rounds[r].train_loss, 1e-9);
    }
}

TEST(Training, SameSeedIsBitIdenticalAcrossTransports)
{
    Fixture f = make_fixture(8, 3);
    const Partition part = partition_graph(8, 3, PartitionScheme::contiguous_skewed);
    const TrainResult a = train_federated(f.cfg, f.normalized, f.plan, part);
    f.cfg.transport = TransportKind::tcp;
    const TrainResult b = train_federated(f.cfg, f.normalized, f.plan, part);
    EXPECT_EQ(a.model.params.flatten(), b.model.params.flatten());
    EXPECT_EQ(a.model.node_embeddings.values().size(), b.model.node_embeddings.values().size());
    EXPECT_EQ(max_abs_diff(a.model.node_embeddings, b.model.node_embeddings), 0.0);
    ASSERT_EQ(a.rounds.size(), b.rounds.size());
    for (std::size_t r = 0; r < a.rounds.size(); ++r) {
        EXPECT_EQ(a.rounds[r].train_loss, b.rounds[r].train_loss);
        EXPECT_EQ(a.rounds[r].bytes_up, b.rounds[r].bytes_up);
        EXPECT_EQ(a.rounds[r].bytes_down, b.rounds[r].bytes_down);
    }
}

TEST(Training, AblationModesRunFederated)
{
    for (AblationMode mode : {AblationMode::no_spatial, AblationMode::intra_only, AblationMode::static_all}) {
        Fixture f = make_fixture(8, 2);
        f.cfg.model.mode = mode;
        f.cfg.global_rounds = 1;
        const Partition part = partition_graph(8, 2, PartitionScheme::contiguous_equal);
        const TrainResult r = train_federated(f.cfg, f.normalized, f.plan, part);
        EXPECT_TRUE(std::isfinite(r.rounds.front().train_loss));
    }
}

// ---------------------------------------------------------------------------

class StackedPrediction : public ::testing::TestWithParam<std::size_t> {};

TEST_P(StackedPrediction, MatchesMonolithicForward)
{
    const std::size_t m = GetParam();
    Fixture f = make_fixture(16, m);
    const Partition part = partition_graph(16, m, PartitionScheme::contiguous_skewed);
    TrainedModel model{GlobalParams::init(f.cfg.model, 1, 24, 3), init_node_embeddings(16, 3, 3)};
    const std::vector<std::size_t> starts(f.plan.test.starts.begin(), f.plan.test.starts.begin() + 6);
    f.cfg.batch_size = 4;
    const auto mono = predict_central(f.cfg.model, model, f.normalized, starts, part, CentralAdjacency::approximated, 4);
    const auto fed = predict_federated(f.cfg, model, f.normalized, starts, part);
    ASSERT_EQ(mono.size(), fed.size());
    for (std::size_t w = 0; w < mono.size(); ++w) {
        ASSERT_EQ(mono[w].dims(), fed[w].dims());
        EXPECT_LE(max_abs_diff(mono[w], fed[w]), 1e-9);
    }
}

INSTANTIATE_TEST_SUITE_P(Clients, StackedPrediction, ::testing::Values(2, 4, 8));

// ---------------------------------------------------------------------------

TEST(Comm, MeasuredBytesEqualPrediction)
{
    for (AblationMode mode : {AblationMode::full, AblationMode::no_spatial}) {
        Fixture f = make_fixture(10, 3);
        f.cfg.model.mode = mode;
        const Partition part = partition_graph(10, 3, PartitionScheme::contiguous_skewed);
        const TrainResult r = train_federated(f.cfg, f.normalized, f.plan, part);
        const CommPrediction want = comm_account(f.cfg, 1, 24, f.plan.train.starts.size());
        for (const RoundStats& s : r.rounds) {
            EXPECT_EQ(s.bytes_up, want.round_up);
            EXPECT_EQ(s.bytes_down, want.round_down);
            EXPECT_EQ(s.param_bytes_up, want.param_up);
            EXPECT_EQ(s.param_bytes_down, want.param_down);
            for (std::uint64_t b : s.local_bytes_up) EXPECT_EQ(b, want.local_up);
            for (std::uint64_t b : s.local_bytes_down) EXPECT_EQ(b, want.local_down);
        }
    }
}

TEST(Comm, ShareBytesIndependentOfClientSize)
{
    Fixture f = make_fixture(10, 3);
    const CommPrediction a = comm_account(f.cfg, 1, 24, 100);
    f.cfg.model.hidden_dim = 8;
    const CommPrediction b = comm_account(f.cfg, 1, 24, 100);
    EXPECT_GT(b.p_frame_bytes, a.p_frame_bytes);
    // Header, rank byte, three extents, B·d_φ·(d + h) values, CRC, length prefix.
    EXPECT_EQ(a.p_frame_bytes, 19u + 1 + 12 + 8 * 4 * 2 * 5 + 4 + 4);
}

TEST(Locality, NoPayloadCarriesClientSizedRows)
{
    Fixture f = make_fixture(20, 4);
    f.cfg.global_rounds = 1;
    const Partition part = partition_graph(20, 4, PartitionScheme::contiguous_equal);
    std::vector<std::size_t> sizes;
    for (const auto& p : part) sizes.push_back(p.size());
    LocalityAudit audit(sizes);
    std::mutex mu;
    FederatedHooks hooks;
    hooks.on_message = [&](const ProtocolMessage& m, bool) {
        std::lock_guard lock(mu);
        audit.observe(m);
    };
    train_federated(f.cfg, f.normalized, f.plan, part, hooks);
    EXPECT_GT(audit.messages(), 0u);
    EXPECT_TRUE(audit.violations().empty()) << audit.violations().front();
}

TEST(Locality, FlagsPlantedLeak)
{
    LocalityAudit audit({5, 7});
    audit.observe({MsgType::p_share, 0, 0, 1, 0, {Tensor({2, 4, 3})}});
    EXPECT_TRUE(audit.violations().empty());
    audit.observe({MsgType::p_share, 0, 0, 1, 0, {Tensor({2, 5, 3})}});
    EXPECT_EQ(audit.violations().size(), 1u);
}

// ---------------------------------------------------------------------------

TEST(Server, TimesOutOnSilentClient)
{
    Fixture f = make_fixture(6, 2);
    f.cfg.timeout = std::chrono::milliseconds(50);
    auto a = make_pair(TransportKind::memory);
    auto b = make_pair(TransportKind::memory);
    ServerNode server(f.cfg, {a.first.get(), b.first.get()}, {3, 3}, GlobalParams::init(f.cfg.model, 1, 24, 1));
    EXPECT_THROW(server.run_training({}), TimeoutError);
}

TEST(Server, RejectsOutOfOrderMessage)
{
    Fixture f = make_fixture(6, 1);
    auto a = make_pair(TransportKind::memory);
    ServerNode server(f.cfg, {a.first.get()}, {6}, GlobalParams::init(f.cfg.model, 1, 24, 1));
    a.second->send({MsgType::q_share, 0, 0, 1, 0, {Tensor({1, 2, 5})}});
    EXPECT_THROW(server.run_training({}), ProtocolError);
}

TEST(Server, ClientFailureSurfacesAsRootCause)
{
    Fixture f = make_fixture(8, 2);
    const Partition part = partition_graph(8, 2, PartitionScheme::contiguous_equal);
    FederatedHooks hooks;
    hooks.on_step = [](std::size_t party, std::size_t, const GlobalParams&, const Tensor&) {
        if (party == 1) throw NumericError("injected");
    };
    EXPECT_THROW(train_federated(f.cfg, f.normalized, f.plan, part, hooks), NumericError);
}

TEST(Server, PartitionMustMatchClientCount)
{
    Fixture f = make_fixture(8, 3);
    const Partition part = partition_graph(8, 2, PartitionScheme::contiguous_equal);
    EXPECT_THROW(train_federated(f.cfg, f.normalized, f.plan, part), ConfigError);
}
