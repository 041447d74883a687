#include "fedstgd/errors.hpp"
#include "fedstgd/pipeline.hpp"
#include "fedstgd/properties.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>

using namespace fedstgd;

namespace {

constexpr int kOk = 0;
constexpr int kPropertyFailure = 1;
constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

RunConfig load_config(const std::string& file, const std::vector<std::string>& extras, RunConfig base = {})
{
    if (!file.empty()) base.apply(read_key_values(file));
    base.apply(parse_overrides(extras));
    base.validate();
    return base;
}

int cmd_synth(const RunConfig& cfg)
{
    const DatasetManifest manifest = write_synthetic_dataset(cfg, cfg.output);
    std::cout << "manifest=" << (cfg.output / "manifest.txt").string() << " nodes=" << manifest.num_nodes
              << " steps=" << cfg.synth.steps << " features=" << manifest.feature_dim
              << " clients=" << cfg.train.clients << '\n';
    return kOk;
}

int cmd_train(const RunConfig& cfg, TrainMode mode)
{
    const Experiment exp = prepare_experiment(cfg);
    std::filesystem::create_directories(cfg.output);
    std::ofstream log(cfg.output / "round_log.txt", std::ios::trunc);
    if (!log) throw DataError(DataErrorKind::io, "cannot write " + (cfg.output / "round_log.txt").string());
    TrainHooks hooks;
    hooks.on_round = [&](const RoundStats& s) {
        std::cout << s.log_line() << std::endl;
        log << s.log_line(false) << '\n';
    };
    const TrainResult result = run_training(cfg, exp, mode, hooks);
    save_checkpoint(cfg.checkpoint_dir(), make_checkpoint(cfg, exp, result.model, mode));
    std::cout << "checkpoint=" << cfg.checkpoint_dir().string() << " theta_size=" << result.model.params.flat_size()
              << '\n';
    return kOk;
}

int cmd_eval(const std::string& file, const std::vector<std::string>& extras)
{
    const RunConfig probe = load_config(file, extras);
    const Checkpoint ckpt = load_checkpoint(probe.checkpoint_dir());
    const RunConfig cfg = load_config(file, extras, config_from_checkpoint(ckpt));
    const TrainMode mode = mode_from_checkpoint(ckpt);
    const Experiment exp = prepare_experiment(cfg);
    const TrainedModel model = model_from_checkpoint(ckpt, cfg.train.model);
    if (model.node_embeddings.dim(0) != exp.raw.nodes()) {
        throw ConfigError("checkpoint has " + std::to_string(model.node_embeddings.dim(0)) + " nodes, dataset has " +
                          std::to_string(exp.raw.nodes()));
    }

    const auto& starts = exp.plan.test.starts;
    const std::size_t t_in = cfg.train.model.t_in;
    const MetricReport report = evaluate(run_prediction(cfg, exp, model, mode, starts), exp.raw, starts, t_in,
                                         exp.normalizer);
    const MetricReport baseline =
        evaluate_raw(persistence_predictions(exp.raw, starts, t_in, cfg.train.model.t_out), exp.raw, starts, t_in);
    const std::string label = mode == TrainMode::central ? "central" : "federated";
    std::cout << format_report_table(report, label) << format_report_table(baseline, "persistence");
    std::filesystem::create_directories(cfg.output);
    write_text_file(cfg.output / "eval.txt",
                    format_report_records(report, label) + format_report_records(baseline, "persistence"));
    return kOk;
}

int cmd_verify(const RunConfig& cfg)
{
    PropertyOptions opt;
    opt.seed = cfg.train.seed;
    opt.tolerance_override = cfg.tolerance;
    opt.gamma_order = cfg.fault ? GammaOrder::l_major_fault : GammaOrder::k_major;
    bool ok = true;
    for (const PropertyResult& r : run_property_suite(opt)) {
        std::cout << format_property(r) << std::endl;
        ok = ok && r.passed;
    }
    std::cout << "verify=" << (ok ? "pass" : "fail") << '\n';
    return ok ? kOk : kPropertyFailure;
}

int cmd_bench_comm(RunConfig cfg)
{
    cfg.train.global_rounds = std::min<std::size_t>(cfg.train.global_rounds, 2);
    bool ok = true;
    std::uint64_t first_share = 0;
    std::size_t first_m = 0;
    std::printf("%-4s %14s %14s %14s %14s %14s %12s %6s\n", "M", "round_up_pred", "round_up_meas", "round_dn_pred",
                "round_dn_meas", "share_up", "share_ratio", "match");
    for (std::size_t m : {2, 4, 8}) {
        cfg.train.clients = m;
        const Experiment exp = prepare_experiment(cfg);
        const CommPrediction want = comm_account(cfg.train, exp.raw.features(), exp.raw.steps_per_day,
                                                 exp.plan.train.starts.size());
        const TrainResult result = run_training(cfg, exp, TrainMode::federated);
        bool match = true;
        for (const RoundStats& s : result.rounds) {
            match = match && s.bytes_up == want.round_up && s.bytes_down == want.round_down;
            for (std::uint64_t b : s.local_bytes_up) match = match && b == want.local_up;
            for (std::uint64_t b : s.local_bytes_down) match = match && b == want.local_down;
        }
        const RoundStats& last = result.rounds.back();
        if (first_m == 0) {
            first_m = m;
            first_share = want.share_payload_up;
        }
        const double ratio = static_cast<double>(want.share_payload_up) / static_cast<double>(first_share);
        const bool linear = want.share_payload_up * first_m == first_share * m;
        ok = ok && match && linear;
        std::printf("%-4zu %14llu %14llu %14llu %14llu %14llu %12.6f %6s\n", m,
                    static_cast<unsigned long long>(want.round_up), static_cast<unsigned long long>(last.bytes_up),
                    static_cast<unsigned long long>(want.round_down), static_cast<unsigned long long>(last.bytes_down),
                    static_cast<unsigned long long>(want.share_payload_up), ratio, match && linear ? "yes" : "no");
        std::printf("M=%zu theta_size=%zu param_up=%llu param_down=%llu local_up=%llu local_down=%llu\n", m,
                    want.theta_size, static_cast<unsigned long long>(want.param_up),
                    static_cast<unsigned long long>(want.param_down), static_cast<unsigned long long>(want.local_up),
                    static_cast<unsigned long long>(want.local_down));
    }
    std::printf("bench_comm=%s\n", ok ? "pass" : "fail");
    return ok ? kOk : kPropertyFailure;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Federated spatio-temporal graph forecasting simulator"};
    app.require_subcommand(1);
    std::string config_file;
    app.add_option("-c,--config", config_file, "key=value run configuration file");

    const std::vector<std::pair<const char*, const char*>> commands = {
        {"synth", "write a synthetic dataset (manifest, signals, partition) to <output>"},
        {"train-central", "train the centralised model and write <output>/checkpoint"},
        {"train-fed", "run federated training and write <output>/checkpoint"},
        {"eval", "score a checkpoint on the test split against persistence"},
        {"verify", "run the property suite"},
        {"bench-comm", "compare measured and predicted bytes for M in 2,4,8"},
    };
    std::map<std::string, CLI::App*> subs;
    for (const auto& [name, help] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->allow_extras();
        sub->footer("Any config key may be given as --key=value.");
        subs[name] = sub;
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        for (const auto& [name, sub] : subs) {
            if (!sub->parsed()) continue;
            const std::vector<std::string> extras = sub->remaining();
            if (name == "eval") return cmd_eval(config_file, extras);
            const RunConfig cfg = load_config(config_file, extras);
            if (name == "synth") return cmd_synth(cfg);
            if (name == "train-central") return cmd_train(cfg, TrainMode::central);
            if (name == "train-fed") return cmd_train(cfg, TrainMode::federated);
            if (name == "verify") return cmd_verify(cfg);
            if (name == "bench-comm") return cmd_bench_comm(cfg);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntimeError;
    }
    return kConfigError;
}
