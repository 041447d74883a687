#include "fedstgd/run_config.hpp"

#include "fedstgd/errors.hpp"

#include <functional>

namespace fedstgd {

namespace {

struct Field {
    std::string_view key;
    std::function<void(RunConfig&, std::string_view)> set;
    std::function<std::string(const RunConfig&)> get;
};

bool parse_bool(std::string_view text, std::string_view what)
{
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError(std::string(what) + ": expected true or false, got '" + std::string(text) + "'");
}

std::vector<std::size_t> parse_size_list(std::string_view text, std::string_view what)
{
    std::vector<std::size_t> out;
    while (!text.empty()) {
        const std::size_t comma = text.find(',');
        out.push_back(parse_size(text.substr(0, comma), what));
        if (comma == std::string_view::npos) break;
        text.remove_prefix(comma + 1);
    }
    return out;
}

std::string join(const std::vector<std::size_t>& v)
{
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

std::string_view partition_name(PartitionScheme s)
{
    return s == PartitionScheme::contiguous_skewed ? "contiguous-skewed" : "contiguous-equal";
}

CentralAdjacency parse_adjacency(std::string_view name)
{
    if (name == "approximated") return CentralAdjacency::approximated;
    if (name == "exact") return CentralAdjacency::exact;
    throw ConfigError("unknown adjacency '" + std::string(name) + "' (expected approximated or exact)");
}

#define SIZE_FIELD(name, member)                                                                   \
    Field{name, [](RunConfig& c, std::string_view v) { c.member = parse_size(v, name); },          \
          [](const RunConfig& c) { return std::to_string(c.member); }}
#define U64_FIELD(name, member)                                                                    \
    Field{name, [](RunConfig& c, std::string_view v) { c.member = parse_u64(v, name); },           \
          [](const RunConfig& c) { return std::to_string(c.member); }}
#define DOUBLE_FIELD(name, member)                                                                 \
    Field{name, [](RunConfig& c, std::string_view v) { c.member = parse_double(v, name); },        \
          [](const RunConfig& c) { return format_double(c.member); }}
#define PATH_FIELD(name, member)                                                                   \
    Field{name, [](RunConfig& c, std::string_view v) { c.member = std::filesystem::path(v); },     \
          [](const RunConfig& c) { return c.member.string(); }}

const std::vector<Field>& fields()
{
    static const std::vector<Field> table = {
        DOUBLE_FIELD("alpha", train.model.alpha),
        SIZE_FIELD("node_dim", train.model.node_dim),
        SIZE_FIELD("time_dim", train.model.time_dim),
        SIZE_FIELD("hidden_dim", train.model.hidden_dim),
        SIZE_FIELD("t_in", train.model.t_in),
        SIZE_FIELD("t_out", train.model.t_out),
        SIZE_FIELD("affinity_dim", train.model.affinity_dim),
        SIZE_FIELD("augment_dim", train.model.augment_dim),
        Field{"activation", [](RunConfig& c, std::string_view v) { c.train.model.activation = std::string(v); },
              [](const RunConfig& c) { return c.train.model.activation; }},
        Field{"mode", [](RunConfig& c, std::string_view v) { c.train.model.mode = parse_ablation(v); },
              [](const RunConfig& c) { return std::string(to_string(c.train.model.mode)); }},
        SIZE_FIELD("clients", train.clients),
        SIZE_FIELD("global_rounds", train.global_rounds),
        SIZE_FIELD("local_rounds", train.local_rounds),
        SIZE_FIELD("batch_size", train.batch_size),
        DOUBLE_FIELD("learning_rate", train.learning_rate),
        DOUBLE_FIELD("weight_decay", train.weight_decay),
        DOUBLE_FIELD("lr_decay", train.lr_decay),
        Field{"lr_milestones",
              [](RunConfig& c, std::string_view v) { c.train.lr_milestones = parse_size_list(v, "lr_milestones"); },
              [](const RunConfig& c) { return join(c.train.lr_milestones); }},
        U64_FIELD("seed", train.seed),
        Field{"transport", [](RunConfig& c, std::string_view v) { c.train.transport = parse_transport(v); },
              [](const RunConfig& c) { return std::string(to_string(c.train.transport)); }},
        Field{"timeout_ms",
              [](RunConfig& c, std::string_view v) {
                  c.train.timeout = std::chrono::milliseconds(parse_u64(v, "timeout_ms"));
              },
              [](const RunConfig& c) { return std::to_string(c.train.timeout.count()); }},
        PATH_FIELD("dataset", dataset),
        PATH_FIELD("output", output),
        PATH_FIELD("checkpoint", checkpoint),
        Field{"partition", [](RunConfig& c, std::string_view v) { c.partition = parse_partition_scheme(v); },
              [](const RunConfig& c) { return std::string(partition_name(c.partition)); }},
        DOUBLE_FIELD("skew", skew),
        DOUBLE_FIELD("split_train", split.train),
        DOUBLE_FIELD("split_val", split.val),
        DOUBLE_FIELD("split_test", split.test),
        Field{"adjacency", [](RunConfig& c, std::string_view v) { c.adjacency = parse_adjacency(v); },
              [](const RunConfig& c) {
                  return std::string(c.adjacency == CentralAdjacency::exact ? "exact" : "approximated");
              }},
        U64_FIELD("synth_seed", synth.seed),
        SIZE_FIELD("synth_nodes", synth.nodes),
        SIZE_FIELD("synth_steps", synth.steps),
        SIZE_FIELD("synth_features", synth.features),
        SIZE_FIELD("synth_steps_per_day", synth.steps_per_day),
        DOUBLE_FIELD("synth_noise", synth.noise),
        DOUBLE_FIELD("synth_retention", synth.retention),
        DOUBLE_FIELD("synth_advection", synth.advection),
        DOUBLE_FIELD("synth_level", synth.level),
        DOUBLE_FIELD("synth_amplitude", synth.amplitude),
        DOUBLE_FIELD("tolerance", tolerance),
        Field{"fault", [](RunConfig& c, std::string_view v) { c.fault = parse_bool(v, "fault"); },
              [](const RunConfig& c) { return std::string(c.fault ? "true" : "false"); }},
    };
    return table;
}

#undef SIZE_FIELD
#undef U64_FIELD
#undef DOUBLE_FIELD
#undef PATH_FIELD

} // namespace

void RunConfig::set(std::string_view key, std::string_view value)
{
    for (const Field& f : fields()) {
        if (f.key == key) {
            f.set(*this, value);
            return;
        }
    }
    throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void RunConfig::apply(const KeyValues& entries)
{
    for (const auto& [k, v] : entries) set(k, v);
}

KeyValues RunConfig::to_key_values() const
{
    KeyValues out;
    for (const Field& f : fields()) out.emplace_back(std::string(f.key), f.get(*this));
    return out;
}

void RunConfig::validate() const
{
    train.validate();
    if (!(skew > 0.0 && skew <= 1.0)) throw ConfigError("skew must be in (0, 1]");
    for (double r : {split.train, split.val, split.test}) {
        if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("split ratios must be in [0, 1]");
    }
    if (synth.nodes == 0 || synth.steps == 0 || synth.features == 0 || synth.steps_per_day == 0) {
        throw ConfigError("synth sizes must be positive");
    }
}

KeyValues parse_overrides(std::span<const std::string> args)
{
    KeyValues out;
    for (const std::string& arg : args) {
        const std::size_t eq = arg.find('=');
        if (arg.rfind("--", 0) != 0 || eq == std::string::npos || eq == 2) {
            throw ConfigError("expected --key=value, got '" + arg + "'");
        }
        out.emplace_back(arg.substr(2, eq - 2), arg.substr(eq + 1));
    }
    return out;
}

} // namespace fedstgd
