#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#include "wsbcn/config.hpp"
#include "wsbcn/data.hpp"
#include "wsbcn/errors.hpp"
#include "wsbcn/metrics.hpp"

using namespace wsbcn;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name)
{
	const fs::path p = fs::temp_directory_path() / ("wsbcn_cli_io_" + name + "_" + std::to_string(::getpid()));
	fs::remove_all(p);
	fs::create_directories(p);
	return p;
}

std::vector<std::uint8_t> fake_cifar(int records, std::uint64_t seed, int bad_label_at = -1)
{
	std::mt19937_64 rng(seed);
	std::vector<std::uint8_t> bytes;
	for (int r = 0; r < records; ++r) {
		bytes.push_back(r == bad_label_at ? 10 : static_cast<std::uint8_t>(r % 10));
		for (int k = 0; k < 3072; ++k) bytes.push_back(static_cast<std::uint8_t>(rng()));
	}
	return bytes;
}

void write_bytes(const fs::path& file, const std::vector<std::uint8_t>& bytes)
{
	std::ofstream out(file, std::ios::binary);
	out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

int run_cli(const std::string& args)
{
	const std::string cmd = std::string(WSBCN_CLI_PATH) + " " + args + " >/dev/null 2>&1";
	const int status = std::system(cmd.c_str());
	return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

// --- metrics ---------------------------------------------------------------

TEST(Metrics, CsvAndJsonCarryTheSameRows)
{
	const fs::path dir = scratch("metrics");
	MetricsSink sink(dir);
	std::mt19937_64 rng(3);
	std::normal_distribution<double> normal;
	for (int e = 1; e <= 3; ++e) {
		sink.add({"run-a", e, 10 * e, "train_loss", "", normal(rng)});
		sink.add({"run-a", e, 10 * e, "ws_fraction", "conv2", 1e-300 * normal(rng)});
		sink.add({"run-a", e, 10 * e, "statdiff", "conv1/g3", 0.1 + normal(rng) / 3.0});
		sink.flush();
	}
	const auto csv = read_metrics_csv(dir / "metrics.csv");
	const auto json = read_metrics_json(dir / "metrics.json");
	ASSERT_EQ(csv.size(), 9u);
	EXPECT_EQ(csv, json);
	EXPECT_EQ(csv, sink.rows());
}

TEST(Metrics, FlushAppendsOnlyNewRows)
{
	const fs::path dir = scratch("append");
	MetricsSink sink(dir);
	sink.add({"r", 1, 1, "lr", "", 0.1});
	sink.flush();
	sink.flush();
	sink.add({"r", 2, 2, "lr", "", 0.01});
	sink.flush();
	EXPECT_EQ(read_metrics_csv(dir / "metrics.csv").size(), 2u);
}

TEST(Metrics, NonFiniteValuesRoundTrip)
{
	const std::vector<MetricsRow> rows{{"r", 1, 1, "loss", "", std::numeric_limits<double>::infinity()},
	                                   {"r", 1, 1, "loss2", "", -std::numeric_limits<double>::infinity()}};
	EXPECT_EQ(parse_metrics_json(metrics_to_json(rows)), rows);
	std::string csv = metrics_csv_header() + "\n";
	for (const auto& r : rows) csv += to_csv_line(r) + "\n";
	EXPECT_EQ(parse_metrics_csv(csv), rows);
	const auto nan = parse_metrics_json(metrics_to_json({{"r", 0, 0, "x", "", std::nan("")}}));
	EXPECT_TRUE(std::isnan(nan.at(0).value));
}

TEST(Metrics, RejectsReservedCharactersAndBadInput)
{
	EXPECT_THROW(to_csv_line({"a,b", 0, 0, "m", "", 1.0}), DomainError);
	EXPECT_THROW(to_csv_line({"a", 0, 0, "m", "x\ny", 1.0}), DomainError);
	EXPECT_THROW(parse_metrics_csv("nope\n"), FormatError);
	EXPECT_THROW(parse_metrics_csv(metrics_csv_header() + "\nr,1,1,m,\n"), FormatError);
	EXPECT_THROW(parse_metrics_csv(metrics_csv_header() + "\nr,x,1,m,,1\n"), FormatError);
	EXPECT_THROW(parse_metrics_json("{"), FormatError);
}

// --- data --------------------------------------------------------------------

TEST(Data, SyntheticTaskIsDeterministic)
{
	const Dataset a = synth_blobs(1, 100, 10);
	const Dataset b = synth_blobs(1, 100, 10);
	ASSERT_EQ(a.images.size(), b.images.size());
	EXPECT_EQ(0, std::memcmp(a.images.data(), b.images.data(), a.images.size() * sizeof(float)));
	EXPECT_EQ(a.labels, b.labels);
	const Dataset c = synth_blobs(2, 100, 10);
	EXPECT_NE(a.images, c.images);
	for (int l : a.labels) {
		EXPECT_GE(l, 0);
		EXPECT_LT(l, 10);
	}
}

TEST(Data, StandardizedChannelsHaveZeroMeanUnitStd)
{
	Dataset d = synth_blobs(4, 200, 10);
	standardize(d, channel_stats(d));
	const ChannelStats after = channel_stats(d);
	for (Index c = 0; c < d.channels; ++c) {
		EXPECT_LT(std::abs(after.mean[static_cast<std::size_t>(c)]), 1e-6);
		EXPECT_NEAR(after.stddev[static_cast<std::size_t>(c)], 1.0, 1e-6);
	}
}

TEST(Data, StandardizeRejectsConstantChannel)
{
	Dataset d = synth_blobs(4, 10, 10);
	std::fill(d.images.begin(), d.images.end(), 0.5f);
	EXPECT_THROW(standardize(d, channel_stats(d)), DomainError);
}

TEST(Data, ParsesCifarRecords)
{
	const auto bytes = fake_cifar(25, 9);
	const Dataset d = parse_cifar10(bytes);
	EXPECT_EQ(d.size(), 25);
	EXPECT_EQ(d.channels, 3);
	EXPECT_EQ(d.height, 32);
	EXPECT_EQ(d.labels[13], 3);
	EXPECT_FLOAT_EQ(d.images[3072], static_cast<float>(bytes[3073 + 1]) / 255.0f);
	for (float v : d.images) {
		EXPECT_GE(v, 0.0f);
		EXPECT_LE(v, 1.0f);
	}
}

TEST(Data, CanonicalBatchHasTenThousandRecords)
{
	const fs::path dir = scratch("cifar");
	write_bytes(dir / "test_batch.bin", fake_cifar(10000, 1));
	const Dataset d = load_cifar10(dir, false);
	EXPECT_EQ(d.size(), 10000);
	EXPECT_EQ(load_cifar10(dir, false, 100).size(), 100);
}

TEST(Data, RejectsMalformedCifar)
{
	auto bytes = fake_cifar(3, 2);
	bytes.pop_back();
	EXPECT_THROW(parse_cifar10(bytes), FormatError);
	EXPECT_THROW(parse_cifar10(fake_cifar(3, 2, 1)), FormatError);
	EXPECT_THROW(load_cifar10(scratch("empty"), true), IoError);
}

TEST(Data, AugmentKeepsShapeAndZeroFill)
{
	Tensor<double> x({2, 1, 4, 4});
	x.data().setOnes();
	std::mt19937_64 rng(5);
	augment_batch(x, rng, 4);
	for (Index i = 0; i < x.size(); ++i) EXPECT_TRUE(x[i] == 0.0 || x[i] == 1.0);
	Tensor<double> y({1, 1, 4, 4});
	for (Index i = 0; i < 16; ++i) y[i] = static_cast<double>(i);
	std::mt19937_64 r0(5);
	augment_batch(y, r0, 0);
	// With no shift the only change is an optional mirror.
	EXPECT_TRUE(y[0] == 0.0 || y[0] == 3.0);
}

// --- config --------------------------------------------------------------------

TEST(ConfigFile, RoundTripsThroughText)
{
	const Config c = Config::parse("seed = 3\n# comment\n[model]\nnorm = gn\nwidth=16\n[train]\nlr = 0.05\n"
	                               "lr_decay_epochs = 5, 8\naugment = true\n");
	EXPECT_EQ(c.get_int("seed", 0), 3);
	EXPECT_EQ(c.get("model.norm"), "gn");
	EXPECT_EQ(c.get_int("model.width", 0), 16);
	EXPECT_DOUBLE_EQ(c.get_double("train.lr", 0), 0.05);
	EXPECT_EQ(c.get_doubles("train.lr_decay_epochs", {}), (std::vector<double>{5, 8}));
	EXPECT_TRUE(c.get_bool("train.augment", false));
	EXPECT_EQ(c.get_int("train.batch", 32), 32);
	EXPECT_EQ(Config::parse(c.to_string()), c);
}

TEST(ConfigFile, RejectsMalformedInput)
{
	EXPECT_THROW(Config::parse("[model\nx = 1\n"), FormatError);
	EXPECT_THROW(Config::parse("just words\n"), FormatError);
	EXPECT_THROW(Config::parse("a = 1\na = 2\n"), FormatError);
	EXPECT_THROW(Config::parse("x = abc\n").get_double("x", 0), DomainError);
}

// --- command line -------------------------------------------------------------

TEST(Cli, ExitCodes)
{
	const fs::path dir = scratch("cli");
	EXPECT_EQ(run_cli("--help"), 0);
	EXPECT_EQ(run_cli("train --no-such-flag"), 2);
	EXPECT_EQ(run_cli(""), 2);
	EXPECT_EQ(run_cli("train --data cifar10 --data-path " + (dir / "none").string() + " --out " + (dir / "io").string()), 3);
	EXPECT_TRUE(fs::exists(dir / "io" / "error.json"));
	EXPECT_EQ(run_cli("train --norm bn --batch 1 --train-size 64 --val-size 32 --epochs 1 --out " +
	                  (dir / "contract").string()),
	          5);
	write_bytes(dir / "bad.ckpt", {1, 2, 3});
	EXPECT_EQ(run_cli("export --checkpoint " + (dir / "bad.ckpt").string()), 6);
}

TEST(Cli, TrainWritesMetricsAndCheckpoint)
{
	const fs::path dir = scratch("cli_train") / "run";
	ASSERT_EQ(run_cli("train --norm gn --ws --batch 8 --train-size 64 --val-size 32 --width 8 --epochs 2 --seed 4 --out " +
	                  dir.string()),
	          0);
	EXPECT_TRUE(fs::exists(dir / "config.ini"));
	EXPECT_TRUE(fs::exists(dir / "checkpoints" / "last.ckpt"));
	const auto rows = read_metrics_csv(dir / "metrics.csv");
	EXPECT_EQ(rows, read_metrics_json(dir / "metrics.json"));
	EXPECT_FALSE(rows.empty());
	const Config saved = Config::load(dir / "config.ini");
	EXPECT_EQ(saved.get("model.norm"), "gn");
}
