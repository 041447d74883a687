#include "fedstgd/train.hpp"

#include "fedstgd/errors.hpp"
#include "fedstgd/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace fedstgd {

void TrainConfig::validate() const
{
    model.validate();
    if (clients == 0) throw ConfigError("clients must be >= 1");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must be in (0, 1]");
    if (clients > 65535) throw ConfigError("clients must fit in a u16 client id");
    if (timeout.count() < 0) throw ConfigError("timeout must be >= 0");
}

double TrainConfig::learning_rate_at(std::size_t round) const
{
    double lr = learning_rate;
    for (std::size_t m : lr_milestones) {
        if (round >= m) lr *= lr_decay;
    }
    return lr;
}

Adam::Adam(double beta1, double beta2, double epsilon) : beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

void Adam::step(std::span<Tensor* const> params, std::span<const Tensor* const> grads, double lr, double weight_decay)
{
    if (params.size() != grads.size()) throw UsageError("Adam::step: params and grads differ in count");
    if (m_.empty()) {
        for (const Tensor* p : params) {
            m_.emplace_back(p->dims());
            v_.emplace_back(p->dims());
        }
    }
    if (m_.size() != params.size()) throw UsageError("Adam::step: parameter set changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        if (p.dims() != m_[i].dims()) throw ShapeError("Adam::step: parameter " + std::to_string(i) + " changed shape");
        const Tensor* g = grads[i];
        if (g != nullptr && g->dims() != p.dims()) throw ShapeError("Adam::step: gradient shape mismatch");
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double grad = (g != nullptr ? (*g)[j] : 0.0) + weight_decay * p[j];
            m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * grad;
            v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * grad * grad;
            p[j] -= lr * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + eps_);
        }
    }
}

std::vector<std::size_t> batch_starts(std::uint64_t seed, std::size_t step, std::span<const std::size_t> pool,
                                      std::size_t batch)
{
    if (pool.empty()) throw DataError(DataErrorKind::too_short, "no training windows");
    if (pool.size() <= batch) return {pool.begin(), pool.end()};
    const CounterRng rng(seed, CounterRng::mix(step) ^ 0xba7c4ULL);
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<std::size_t> out;
    out.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        const std::size_t j = i + rng.bits(i) % (idx.size() - i);
        std::swap(idx[i], idx[j]);
        out.push_back(pool[idx[i]]);
    }
    return out;
}

std::unique_ptr<SpatialMixer> make_central_mixer(const ModelBinding& model, std::span<const std::size_t> owner,
                                                 CentralAdjacency adjacency)
{
    if (model.cfg->mode == AblationMode::no_spatial) return std::make_unique<IdentityMixer>();
    if (adjacency == CentralAdjacency::exact) return std::make_unique<ExactMixer>(model);
    return std::make_unique<DenseApproxMixer>(model, std::vector<std::size_t>(owner.begin(), owner.end()));
}

std::string RoundStats::log_line(bool with_seconds) const
{
    std::ostringstream out;
    out.precision(10);
    out << "round=" << round << " train_loss=" << train_loss << " bytes_up=" << bytes_up
        << " bytes_down=" << bytes_down;
    if (with_seconds) out << " seconds=" << seconds;
    return out.str();
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start)
{
    return std::chrono::duration<double>(Clock::now() - start).count();
}

} // namespace

TrainResult train_central(const TrainConfig& cfg, const SignalSeries& normalized, const WindowPlan& plan,
                          const Partition& partition, CentralAdjacency adjacency, const TrainHooks& hooks)
{
    cfg.validate();
    const std::size_t n = normalized.nodes();
    const std::vector<std::size_t> owner = owner_of_nodes(partition, n);

    TrainResult result;
    result.model.params = GlobalParams::init(cfg.model, normalized.features(), normalized.steps_per_day, cfg.seed);
    result.model.node_embeddings = init_node_embeddings(n, cfg.model.node_dim, cfg.seed);
    GlobalParams& params = result.model.params;
    Tensor& embeddings = result.model.node_embeddings;
    Adam adam;

    for (std::size_t epoch = 0; epoch < cfg.global_rounds; ++epoch) {
        const auto start = Clock::now();
        const double lr = cfg.learning_rate_at(epoch);
        double loss_sum = 0.0;
        for (std::size_t s = 0; s < cfg.local_rounds; ++s) {
            const std::size_t step = epoch * cfg.local_rounds + s;
            std::vector<WindowData> windows;
            for (std::size_t t0 : batch_starts(cfg.seed, step, plan.train.starts, cfg.batch_size)) {
                windows.push_back(make_window(normalized, t0, cfg.model.t_in, cfg.model.t_out));
            }
            Tape tape;
            const ModelBinding model{&cfg.model, ParamVars::bind(tape, params, true), tape.parameter(embeddings)};
            const auto mixer = make_central_mixer(model, owner, adjacency);
            const ForwardOutput fwd = run_windows(tape, model, windows, *mixer);
            const double loss = tape.value(fwd.loss)[0];
            if (!std::isfinite(loss)) {
                throw NumericError("central training: non-finite loss at step " + std::to_string(step));
            }
            const Tape::Gradients grads = tape.backward(fwd.loss);

            std::vector<Tensor*> targets;
            std::vector<const Tensor*> g;
            for (std::size_t i = 0; i < GlobalParams::kCount; ++i) {
                targets.push_back(&params.tensors[i]);
                const auto it = grads.find(model.params.vars[i].id);
                g.push_back(it == grads.end() ? nullptr : &it->second);
            }
            targets.push_back(&embeddings);
            const auto it = grads.find(model.node_embeddings.id);
            g.push_back(it == grads.end() ? nullptr : &it->second);
            adam.step(targets, g, lr, cfg.weight_decay);
            loss_sum += loss;
            if (hooks.on_step) hooks.on_step(0, step, params, embeddings);
        }
        RoundStats stats;
        stats.round = epoch;
        stats.train_loss = cfg.local_rounds == 0 ? 0.0 : loss_sum / static_cast<double>(cfg.local_rounds);
        stats.seconds = seconds_since(start);
        if (hooks.on_round) hooks.on_round(stats);
        result.rounds.push_back(std::move(stats));
    }
    return result;
}

std::vector<Tensor> predict_central(const HyperConfig& cfg, const TrainedModel& trained, const SignalSeries& normalized,
                                    std::span<const std::size_t> starts, const Partition& partition,
                                    CentralAdjacency adjacency, std::size_t batch)
{
    const std::vector<std::size_t> owner = owner_of_nodes(partition, normalized.nodes());
    std::vector<Tensor> out;
    out.reserve(starts.size());
    for (std::size_t begin = 0; begin < starts.size(); begin += batch) {
        const std::size_t end = std::min(starts.size(), begin + batch);
        std::vector<WindowData> windows;
        for (std::size_t i = begin; i < end; ++i) {
            WindowData w = make_window(normalized, starts[i], cfg.t_in, cfg.t_out);
            w.target = Tensor();
            windows.push_back(std::move(w));
        }
        Tape tape;
        const ModelBinding model{&cfg, ParamVars::bind(tape, trained.params, false),
                                 tape.constant(trained.node_embeddings)};
        const auto mixer = make_central_mixer(model, owner, adjacency);
        const ForwardOutput fwd = run_windows(tape, model, windows, *mixer);
        for (const Tape::Var& p : fwd.predictions) {
            out.push_back(unpack_horizons(tape.value(p), cfg.t_out, normalized.features()));
        }
    }
    return out;
}

} // namespace fedstgd
