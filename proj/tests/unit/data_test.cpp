#include "fedstgd/data.hpp"
#include "fedstgd/errors.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

using namespace fedstgd;
namespace fs = std::filesystem;

namespace {

class TempDir {
public:
    TempDir()
    {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        path_ = fs::temp_directory_path() / (std::string("fedstgd_") + info->test_suite_name() + "_" + info->name());
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path& path() const { return path_; }
    fs::path file(const std::string& name, std::string_view text) const
    {
        write_text_file(path_ / name, text);
        return path_ / name;
    }

private:
    fs::path path_;
};

DataErrorKind load_error(const fs::path& p, std::size_t nodes, std::size_t d)
{
    try {
        load_signals(p, nodes, d);
    } catch (const DataError& e) {
        return e.kind();
    }
    ADD_FAILURE() << "expected a DataError";
    return DataErrorKind::io;
}

SignalSeries ramp_series(std::size_t steps, std::size_t nodes, std::size_t d)
{
    SignalSeries s;
    s.steps_per_day = 24;
    s.values = Tensor({steps, nodes, d});
    for (std::size_t i = 0; i < s.values.size(); ++i) s.values[i] = static_cast<double>(i);
    return s;
}

} // namespace

TEST(KeyValue, ParsesTrimsAndSkipsComments)
{
    const auto kv = parse_key_values("# comment\n a = 1 \n\nb=two=2\r\n");
    ASSERT_EQ(kv.size(), 2u);
    EXPECT_EQ(kv[0], (std::pair<std::string, std::string>{"a", "1"}));
    EXPECT_EQ(kv[1], (std::pair<std::string, std::string>{"b", "two=2"}));
    EXPECT_THROW(parse_key_values("novalue\n"), ConfigError);
    EXPECT_THROW(parse_key_values("=3\n"), ConfigError);
}

TEST(KeyValue, StrictScalars)
{
    EXPECT_EQ(parse_double("0.25", "x"), 0.25);
    EXPECT_THROW(parse_double("0.25x", "x"), ConfigError);
    EXPECT_EQ(parse_size("12", "n"), 12u);
    EXPECT_THROW(parse_size("-1", "n"), ConfigError);
    EXPECT_THROW(parse_size("", "n"), ConfigError);
    for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.125}) {
        EXPECT_EQ(parse_double(format_double(v), "v"), v);
    }
}

TEST(Signals, TinyFileShape)
{
    TempDir dir;
    const auto p = dir.file("s.csv", "t,node,v0\n0,0,1.5\n1,0,2.5\n");
    const SignalSeries s = load_signals(p, 1, 1);
    EXPECT_EQ(s.values.dims(), (Dims{2, 1, 1}));
    EXPECT_EQ(s.values[1], 2.5);
}

TEST(Signals, DistinctErrorKinds)
{
    TempDir dir;
    EXPECT_EQ(load_error(dir.file("a.csv", "t,node,v0\n0,1,1\n0,0,1\n1,0,1\n1,1,1\n"), 2, 1), DataErrorKind::ordering);
    EXPECT_EQ(load_error(dir.file("b.csv", "t,node,v0\n0,0,1\n0,0,1\n"), 2, 1), DataErrorKind::duplicate);
    EXPECT_EQ(load_error(dir.file("c.csv", "t,node,v0\n0,0,1\n1,0,1\n1,1,1\n"), 2, 1), DataErrorKind::missing_cell);
    EXPECT_EQ(load_error(dir.file("d.csv", "t,node,v0\n0,0,1\n0,1,1\n1,0,1\n"), 2, 1), DataErrorKind::missing_cell);
    EXPECT_EQ(load_error(dir.file("e.csv", "t,node,v0\n0,0,nan\n"), 1, 1), DataErrorKind::non_finite);
    EXPECT_EQ(load_error(dir.file("f.csv", "t,node,v0\n0,0,abc\n"), 1, 1), DataErrorKind::parse);
    EXPECT_EQ(load_error(dir.file("g.csv", "time,node,v0\n0,0,1\n"), 1, 1), DataErrorKind::parse);
    EXPECT_EQ(load_error(dir.file("h.csv", "t,node,v0\n0,3,1\n"), 2, 1), DataErrorKind::parse);
    EXPECT_EQ(load_error(dir.path() / "missing.csv", 1, 1), DataErrorKind::io);
}

TEST(Signals, WriteThenLoadIsExact)
{
    TempDir dir;
    SynthOptions o;
    o.nodes = 3;
    o.steps = 20;
    o.features = 2;
    const SignalSeries s = synth_diffusion(o);
    write_signals(dir.path() / "s.csv", s);
    const SignalSeries back = load_signals(dir.path() / "s.csv", 3, 2);
    EXPECT_TRUE(back.values.identical(s.values));
}

TEST(Manifest, RoundTripAndHzMetroShape)
{
    TempDir dir;
    DatasetManifest m;
    m.name = "hzmetro-shaped";
    m.num_nodes = 80;
    m.steps_per_day = 24 * 60 / 15;
    m.signal_file = dir.path() / "signals.csv";
    m.partition_file = dir.path() / "partition.csv";
    write_manifest(dir.path() / "m.txt", m);
    const DatasetManifest back = read_manifest(dir.path() / "m.txt");
    EXPECT_EQ(back.num_nodes, 80u);
    EXPECT_EQ(back.steps_per_day, 96u);
    EXPECT_EQ(back.signal_file, m.signal_file);
    EXPECT_EQ(back.partition_file, m.partition_file);

    dir.file("bad.txt", "num_nodes=2\nsignal_file=x\nbogus=1\n");
    EXPECT_THROW(read_manifest(dir.path() / "bad.txt"), ConfigError);
    dir.file("zero.txt", "num_nodes=0\nsignal_file=x\n");
    EXPECT_THROW(read_manifest(dir.path() / "zero.txt"), ConfigError);
}

TEST(Synth, DeterministicPerSeed)
{
    SynthOptions o;
    o.steps = 300;
    EXPECT_TRUE(synth_diffusion(o).values.identical(synth_diffusion(o).values));
    SynthOptions other = o;
    other.seed = 8;
    EXPECT_FALSE(synth_diffusion(other).values.identical(synth_diffusion(o).values));
}

TEST(Synth, NoiselessSeriesIsDailyPeriodic)
{
    SynthOptions o;
    o.noise = 0.0;
    o.steps = 500;
    o.features = 2;
    const SignalSeries s = synth_diffusion(o);
    const std::size_t per = o.steps_per_day;
    double worst = 0.0;
    for (std::size_t t = 0; t + per < o.steps; ++t) {
        for (std::size_t n = 0; n < o.nodes; ++n) {
            for (std::size_t f = 0; f < 2; ++f) {
                worst = std::max(worst, std::abs(s.values.at(t + per, n, f) - s.values.at(t, n, f)));
            }
        }
    }
    EXPECT_LE(worst, 1e-12);
    EXPECT_GT(max_abs(s.values), 1.0);
}

TEST(Synth, LagOneAutocorrelationIsHigh)
{
    const SignalSeries s = synth_diffusion(SynthOptions{});
    for (std::size_t n = 0; n < s.nodes(); ++n) {
        double mean = 0.0;
        for (std::size_t t = 0; t < s.steps(); ++t) mean += s.values.at(t, n, 0);
        mean /= static_cast<double>(s.steps());
        double num = 0.0;
        double den = 0.0;
        for (std::size_t t = 0; t < s.steps(); ++t) {
            const double c = s.values.at(t, n, 0) - mean;
            den += c * c;
            if (t + 1 < s.steps()) num += c * (s.values.at(t + 1, n, 0) - mean);
        }
        EXPECT_GT(num / den, 0.5) << "node " << n;
    }
}

TEST(NormalizerTest, RoundTripAndZeroVariance)
{
    SignalSeries s = ramp_series(10, 3, 2);
    for (std::size_t t = 0; t < 10; ++t) {
        for (std::size_t n = 0; n < 3; ++n) s.values.at(t, n, 1) = 4.0;
    }
    const Normalizer norm = Normalizer::fit(s, 0, 7);
    EXPECT_EQ(norm.std()[1], 1.0);
    EXPECT_EQ(norm.mean()[1], 4.0);
    EXPECT_LE(max_abs_diff(norm.invert(norm.apply(s.values)), s.values), 1e-12);

    const Tensor z = norm.apply(s.values);
    double m = 0.0;
    for (std::size_t t = 0; t < 7; ++t) {
        for (std::size_t n = 0; n < 3; ++n) m += z.at(t, n, 0);
    }
    EXPECT_NEAR(m / 21.0, 0.0, 1e-12);
}

TEST(NormalizerTest, IgnoresValuesOutsideFitRange)
{
    SignalSeries a = ramp_series(10, 2, 1);
    SignalSeries b = a;
    for (std::size_t t = 7; t < 10; ++t) {
        for (std::size_t n = 0; n < 2; ++n) b.values.at(t, n, 0) = 1e6 * static_cast<double>(t);
    }
    const Normalizer na = Normalizer::fit(a, 0, 7);
    const Normalizer nb = Normalizer::fit(b, 0, 7);
    EXPECT_EQ(na.mean(), nb.mean());
    EXPECT_EQ(na.std(), nb.std());
}

TEST(Windows, CountsPerSplit)
{
    const WindowPlan whole = split_and_window(100, 4, 4, {1.0, 0.0, 0.0});
    EXPECT_EQ(whole.train.starts.size(), 93u);
    EXPECT_TRUE(whole.val.starts.empty());

    const WindowPlan plan = split_and_window(2000, 4, 4);
    EXPECT_EQ(plan.train.end, 1400u);
    EXPECT_EQ(plan.val.end, 1600u);
    EXPECT_EQ(plan.test.end, 2000u);
    EXPECT_EQ(plan.train.starts.size(), 1400u - 8 + 1);
    EXPECT_EQ(plan.val.starts.size(), 200u - 8 + 1);
    EXPECT_EQ(plan.test.starts.size(), 400u - 8 + 1);
    EXPECT_EQ(plan.test.starts.front(), 1600u);
    EXPECT_EQ(plan.test.starts.back() + 8, 2000u);
}

TEST(Windows, TooShortIsAnError)
{
    try {
        split_and_window(7, 4, 4);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_EQ(e.kind(), DataErrorKind::too_short);
    }
    EXPECT_THROW(split_and_window(40, 4, 4), DataError); // val split of 4 steps
    EXPECT_THROW(split_and_window(100, 4, 4, {0.5, 0.1, 0.1}), ConfigError);
}

TEST(Windows, ContentAndOverlap)
{
    const SignalSeries s = ramp_series(30, 3, 2);
    const WindowData a = make_window(s, 5, 4, 2);
    const WindowData b = make_window(s, 6, 4, 2);
    for (std::size_t t = 1; t < 4; ++t) EXPECT_TRUE(a.frames[t].identical(b.frames[t - 1]));
    EXPECT_TRUE(a.frames[0].identical(s.frame(5)));
    EXPECT_EQ(a.start_slot, 5u);
    EXPECT_EQ(make_window(s, 25, 2, 2).start_slot, 1u);
    for (std::size_t h = 0; h < 2; ++h) {
        for (std::size_t n = 0; n < 3; ++n) {
            for (std::size_t f = 0; f < 2; ++f) EXPECT_EQ(a.target.at(n, h * 2 + f), s.values.at(9 + h, n, f));
        }
    }
    const std::vector<std::size_t> ids{2, 0};
    const WindowData sub = make_window(s, 5, 4, 2, ids);
    EXPECT_EQ(sub.frames[0].at(0, 1), s.values.at(5, 2, 1));
    EXPECT_EQ(sub.target.at(1, 3), s.values.at(10, 0, 1));
}

TEST(Windows, TrainWindowsReassembleTheSlice)
{
    const SignalSeries s = ramp_series(60, 2, 1);
    const WindowPlan plan = split_and_window(s, 3, 2);
    Tensor rebuilt({plan.train.end, 2, 1});
    for (std::size_t start : plan.train.starts) {
        const WindowData w = make_window(s, start, 3, 2);
        for (std::size_t t = 0; t < 3; ++t) {
            for (std::size_t n = 0; n < 2; ++n) rebuilt.at(start + t, n, 0) = w.frames[t].at(n, 0);
        }
        for (std::size_t h = 0; h < 2; ++h) {
            for (std::size_t n = 0; n < 2; ++n) rebuilt.at(start + 3 + h, n, 0) = w.target.at(n, h);
        }
    }
    for (std::size_t i = 0; i < rebuilt.size(); ++i) EXPECT_EQ(rebuilt[i], s.values[i]);
}

TEST(PartitionGraph, EqualSizes)
{
    auto sizes = [](const Partition& p) {
        std::vector<std::size_t> out;
        for (const auto& c : p) out.push_back(c.size());
        return out;
    };
    EXPECT_EQ(sizes(partition_graph(80, 4, PartitionScheme::contiguous_equal)), (std::vector<std::size_t>{20, 20, 20, 20}));
    EXPECT_EQ(sizes(partition_graph(10, 3, PartitionScheme::contiguous_equal)), (std::vector<std::size_t>{4, 3, 3}));
    const Partition one = partition_graph(7, 1, PartitionScheme::contiguous_equal);
    ASSERT_EQ(one.size(), 1u);
    EXPECT_EQ(one[0].front(), 0u);
    EXPECT_EQ(one[0].back(), 6u);
    EXPECT_THROW(partition_graph(3, 4, PartitionScheme::contiguous_equal), ConfigError);
    EXPECT_THROW(partition_graph(3, 0, PartitionScheme::contiguous_equal), ConfigError);
}

TEST(PartitionGraph, SkewedIsCoveringAndDecreasing)
{
    for (double skew : {0.3, 0.5, 0.9, 1.0}) {
        const Partition p = partition_graph(40, 5, PartitionScheme::contiguous_skewed, skew);
        std::size_t next = 0;
        for (std::size_t c = 0; c < p.size(); ++c) {
            ASSERT_FALSE(p[c].empty());
            for (std::size_t n : p[c]) EXPECT_EQ(n, next++);
            if (c > 0) EXPECT_LE(p[c].size(), p[c - 1].size());
        }
        EXPECT_EQ(next, 40u);
    }
    EXPECT_EQ(partition_graph(40, 5, PartitionScheme::contiguous_skewed, 1.0),
              partition_graph(40, 5, PartitionScheme::contiguous_equal));
    EXPECT_GT(partition_graph(40, 4, PartitionScheme::contiguous_skewed, 0.5)[0].size(), 15u);
}

TEST(PartitionFile, LoadsAndValidates)
{
    TempDir dir;
    const Partition p = load_partition(dir.file("p.csv", "node,client\n0,0\n1,0\n2,1\n3,1\n"), 4);
    ASSERT_EQ(p.size(), 2u);
    EXPECT_EQ(p[0].size(), 2u);
    EXPECT_EQ(p[1], (std::vector<std::size_t>{2, 3}));

    auto kind = [&](std::string_view text, std::size_t nodes) {
        try {
            load_partition(dir.file("x.csv", text), nodes);
        } catch (const DataError& e) {
            return e.kind();
        }
        return DataErrorKind::io;
    };
    EXPECT_EQ(kind("node,client\n0,0\n0,1\n1,1\n", 2), DataErrorKind::duplicate);
    EXPECT_EQ(kind("node,client\n0,0\n", 2), DataErrorKind::unassigned);
    EXPECT_EQ(kind("node,client\n0,0\n1,2\n", 2), DataErrorKind::client_gap);

    const Partition eq = partition_graph(10, 3, PartitionScheme::contiguous_equal);
    write_partition(dir.path() / "w.csv", eq);
    EXPECT_EQ(load_partition(dir.path() / "w.csv", 10), eq);
    EXPECT_EQ(owner_of_nodes(eq, 10)[4], 1u);
}

TEST(CheckpointTest, RoundTripIsBitExact)
{
    TempDir dir;
    Checkpoint c;
    c.meta = {{"hidden_dim", "8"}, {"mode", "full"}};
    c.tensors.emplace_back("W", Tensor({2, 3, 2}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 0.1}));
    c.tensors.emplace_back("b", Tensor::row({-0.0, 1e-300}));
    save_checkpoint(dir.path() / "ck", c);
    EXPECT_EQ(fs::file_size(dir.path() / "ck" / "checkpoint.bin"), 14u * 8);
    const Checkpoint back = load_checkpoint(dir.path() / "ck");
    EXPECT_EQ(back.meta, c.meta);
    EXPECT_TRUE(back.tensor("W").identical(c.tensor("W")));
    EXPECT_TRUE(back.tensor("b").identical(c.tensor("b")));
    EXPECT_EQ(back.meta_value("mode"), "full");
    EXPECT_THROW(back.tensor("nope"), DataError);

    write_text_file(dir.path() / "ck" / "checkpoint.bin", "short");
    EXPECT_THROW(load_checkpoint(dir.path() / "ck"), DataError);
}
