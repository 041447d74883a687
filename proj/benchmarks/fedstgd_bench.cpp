#include "fedstgd/federated.hpp"
#include "fedstgd/random.hpp"
#include "fedstgd/transport.hpp"

#include <benchmark/benchmark.h>

using namespace fedstgd;

namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, std::uint64_t stream)
{
    const CounterRng rng(3, stream);
    Tensor t = Tensor::zeros(rows, cols);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal(i);
    return t;
}

void BM_Matmul(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    const Tensor a = random_matrix(n, n, 1);
    const Tensor b = random_matrix(n, n, 2);
    for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

void BM_GammaMap(benchmark::State& state)
{
    const auto rows = static_cast<std::size_t>(state.range(0));
    const auto width = static_cast<std::size_t>(state.range(1));
    const Tensor w = random_matrix(rows, width, 3);
    const Tensor v = random_matrix(rows, 4, 4);
    for (auto _ : state) benchmark::DoNotOptimize(gamma_map(w, v));
    state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(rows * width * 4 * sizeof(double)));
}
BENCHMARK(BM_GammaMap)->Args({4, 4})->Args({16, 64})->Args({64, 64});

ProtocolMessage share_message(std::size_t batch, std::size_t rows, std::size_t width)
{
    ProtocolMessage msg;
    msg.type = MsgType::p_share;
    msg.round = 7;
    msg.timestep = 3;
    msg.k = 1;
    msg.client_id = 2;
    msg.tensors.push_back(random_matrix(batch * rows, width, 5).reshaped({batch, rows, width}));
    return msg;
}

void BM_Encode(benchmark::State& state)
{
    const ProtocolMessage msg = share_message(16, 16, static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(encode(msg));
    state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(frame_bytes(msg)));
}
BENCHMARK(BM_Encode)->Arg(2)->Arg(64);

void BM_Decode(benchmark::State& state)
{
    const std::vector<std::uint8_t> frame = encode(share_message(16, 16, static_cast<std::size_t>(state.range(0))));
    for (auto _ : state) benchmark::DoNotOptimize(decode(frame));
    state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(frame.size()));
}
BENCHMARK(BM_Decode)->Arg(2)->Arg(64);

struct StepFixture {
    SignalSeries normalized;
    WindowPlan plan;
    Partition partition;
    TrainConfig cfg;
};

StepFixture make_step_fixture(std::size_t dim, std::size_t clients)
{
    StepFixture f;
    SynthOptions synth;
    synth.steps = 600;
    f.normalized = synth_diffusion(synth);
    f.plan = split_and_window(f.normalized, 4, 4);
    const Normalizer norm = Normalizer::fit(f.normalized, f.plan.train.begin, f.plan.train.end);
    f.normalized.values = norm.apply(f.normalized.values);
    f.cfg.model.node_dim = dim;
    f.cfg.model.time_dim = dim;
    f.cfg.model.hidden_dim = dim;
    f.cfg.clients = clients;
    f.cfg.global_rounds = 1;
    f.cfg.local_rounds = 1;
    f.partition = partition_graph(synth.nodes, clients, PartitionScheme::contiguous_equal);
    return f;
}

void BM_CentralStep(benchmark::State& state)
{
    const StepFixture f = make_step_fixture(static_cast<std::size_t>(state.range(0)), 4);
    for (auto _ : state) benchmark::DoNotOptimize(train_central(f.cfg, f.normalized, f.plan, f.partition));
}
BENCHMARK(BM_CentralStep)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_FederatedStep(benchmark::State& state)
{
    const StepFixture f =
        make_step_fixture(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
    for (auto _ : state) benchmark::DoNotOptimize(train_federated(f.cfg, f.normalized, f.plan, f.partition));
}
BENCHMARK(BM_FederatedStep)->Args({16, 4})->Args({64, 2})->Args({64, 4})->Args({64, 8})->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
