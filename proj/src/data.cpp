#include "wsbcn/data.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <string>

#include "wsbcn/errors.hpp"

namespace wsbcn {

namespace {

constexpr Index kCifarSide = 32;
constexpr Index kCifarPixels = 3 * kCifarSide * kCifarSide;
constexpr Index kCifarRecord = 1 + kCifarPixels;

void append(Dataset& into, const Dataset& from)
{
	into.images.insert(into.images.end(), from.images.begin(), from.images.end());
	into.labels.insert(into.labels.end(), from.labels.begin(), from.labels.end());
}

} // namespace

Dataset Dataset::slice(Index begin, Index count) const
{
	if (begin < 0 || count < 0 || begin + count > size())
		throw ShapeError("dataset slice [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
		                 ") outside " + std::to_string(size()) + " samples");
	Dataset out = *this;
	out.images.assign(images.begin() + begin * image_size(), images.begin() + (begin + count) * image_size());
	out.labels.assign(labels.begin() + begin, labels.begin() + begin + count);
	return out;
}

ChannelStats channel_stats(const Dataset& d)
{
	if (d.size() == 0) throw ShapeError("channel statistics of an empty dataset");
	ChannelStats s;
	const Index plane = d.height * d.width;
	const double n = static_cast<double>(d.size() * plane);
	for (Index c = 0; c < d.channels; ++c) {
		double sum = 0.0;
		for (Index i = 0; i < d.size(); ++i) {
			const float* p = d.image(i) + c * plane;
			for (Index k = 0; k < plane; ++k) sum += p[k];
		}
		const double mean = sum / n;
		double ss = 0.0;
		for (Index i = 0; i < d.size(); ++i) {
			const float* p = d.image(i) + c * plane;
			for (Index k = 0; k < plane; ++k) ss += (p[k] - mean) * (p[k] - mean);
		}
		s.mean.push_back(mean);
		s.stddev.push_back(std::sqrt(ss / n));
	}
	return s;
}

void standardize(Dataset& d, const ChannelStats& stats)
{
	if (static_cast<Index>(stats.mean.size()) != d.channels || static_cast<Index>(stats.stddev.size()) != d.channels)
		throw ShapeError("standardize: statistics for " + std::to_string(stats.mean.size()) + " channels, data has " +
		                 std::to_string(d.channels));
	const Index plane = d.height * d.width;
	for (Index c = 0; c < d.channels; ++c) {
		const double sd = stats.stddev[static_cast<std::size_t>(c)];
		if (!(sd > 0.0)) throw DomainError("standardize: channel " + std::to_string(c) + " has zero spread");
		const double m = stats.mean[static_cast<std::size_t>(c)];
		for (Index i = 0; i < d.size(); ++i) {
			float* p = d.images.data() + i * d.image_size() + c * plane;
			for (Index k = 0; k < plane; ++k) p[k] = static_cast<float>((p[k] - m) / sd);
		}
	}
}

Dataset parse_cifar10(std::span<const std::uint8_t> bytes)
{
	const Index n = static_cast<Index>(bytes.size());
	if (n == 0 || n % kCifarRecord != 0)
		throw FormatError("CIFAR-10 data of " + std::to_string(n) + " bytes is not a whole number of " +
		                  std::to_string(kCifarRecord) + "-byte records");
	Dataset d;
	d.channels = 3;
	d.height = d.width = kCifarSide;
	d.num_classes = 10;
	const Index records = n / kCifarRecord;
	d.images.resize(static_cast<std::size_t>(records * kCifarPixels));
	d.labels.resize(static_cast<std::size_t>(records));
	for (Index r = 0; r < records; ++r) {
		const std::uint8_t* rec = bytes.data() + r * kCifarRecord;
		if (rec[0] > 9) throw FormatError("CIFAR-10 record " + std::to_string(r) + " has label " + std::to_string(rec[0]));
		d.labels[static_cast<std::size_t>(r)] = rec[0];
		for (Index k = 0; k < kCifarPixels; ++k)
			d.images[static_cast<std::size_t>(r * kCifarPixels + k)] = static_cast<float>(rec[1 + k]) / 255.0f;
	}
	return d;
}

Dataset read_cifar10_file(const std::filesystem::path& file)
{
	std::ifstream in(file, std::ios::binary);
	if (!in) throw IoError("cannot open CIFAR-10 file " + file.string());
	const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
	return parse_cifar10(bytes);
}

Dataset load_cifar10(const std::filesystem::path& dir, bool train, Index limit)
{
	std::vector<std::filesystem::path> files;
	if (train)
		for (int i = 1; i <= 5; ++i) files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
	else
		files.push_back(dir / "test_batch.bin");
	Dataset out;
	out.height = out.width = kCifarSide;
	for (const auto& f : files) {
		if (!std::filesystem::exists(f)) throw IoError("missing CIFAR-10 file " + f.string());
		append(out, read_cifar10_file(f));
		if (limit > 0 && out.size() >= limit) break;
	}
	if (limit > 0 && out.size() > limit) out = out.slice(0, limit);
	return out;
}

Dataset synth_blobs(std::uint64_t seed, Index n, int classes, const BlobOptions& opt)
{
	if (n < 1 || classes < 2 || opt.channels < 1 || opt.size < 4 || opt.blobs_per_class < 1)
		throw DomainError("synth_blobs: invalid size parameters");
	if (opt.noise < 0 || opt.shift < 0 || opt.amplitude < 0) throw DomainError("synth_blobs: negative spread");
	std::mt19937_64 rng(seed);
	std::normal_distribution<double> normal(0.0, 1.0);
	std::uniform_real_distribution<double> unit(0.0, 1.0);
	const Index S = opt.size, C = opt.channels;

	// Prototypes: sums of Gaussian bumps with per-channel signed colours.
	std::vector<std::vector<double>> proto(static_cast<std::size_t>(classes), std::vector<double>(C * S * S, 0.0));
	for (auto& p : proto)
		for (int b = 0; b < opt.blobs_per_class; ++b) {
			const double cy = unit(rng) * (S - 1), cx = unit(rng) * (S - 1);
			const double radius = 1.5 + unit(rng) * S / 5.0;
			std::vector<double> colour(static_cast<std::size_t>(C));
			for (double& v : colour) v = normal(rng);
			const double theta = unit(rng) * std::numbers::pi, phase = unit(rng) * 2.0 * std::numbers::pi;
			for (Index c = 0; c < C; ++c)
				for (Index i = 0; i < S; ++i)
					for (Index j = 0; j < S; ++j) {
						const double r2 = ((i - cy) * (i - cy) + (j - cx) * (j - cx)) / (2 * radius * radius);
						double v = colour[static_cast<std::size_t>(c)] * std::exp(-r2);
						if (opt.texture > 0)
							v *= std::cos(2.0 * std::numbers::pi * opt.texture *
							                  ((j - cx) * std::cos(theta) + (i - cy) * std::sin(theta)) +
							              phase);
						p[static_cast<std::size_t>((c * S + i) * S + j)] += v;
					}
		}

	Dataset d;
	d.channels = C;
	d.height = d.width = S;
	d.num_classes = classes;
	d.images.resize(static_cast<std::size_t>(n * C * S * S));
	d.labels.resize(static_cast<std::size_t>(n));
	const auto max_shift = static_cast<Index>(opt.shift);
	std::uniform_int_distribution<Index> shift(-max_shift, max_shift);
	std::uniform_int_distribution<int> label(0, classes - 1);
	for (Index s = 0; s < n; ++s) {
		const int y = label(rng);
		d.labels[static_cast<std::size_t>(s)] = y;
		const Index dy = shift(rng), dx = shift(rng);
		const double gain = 1.0 + opt.amplitude * normal(rng);
		const auto& p = proto[static_cast<std::size_t>(y)];
		float* out = d.images.data() + s * C * S * S;
		for (Index c = 0; c < C; ++c)
			for (Index i = 0; i < S; ++i)
				for (Index j = 0; j < S; ++j) {
					const Index si = (i - dy + S) % S, sj = (j - dx + S) % S;
					const double v = gain * p[static_cast<std::size_t>((c * S + si) * S + sj)] + opt.noise * normal(rng);
					out[(c * S + i) * S + j] = static_cast<float>(v);
				}
	}
	return d;
}

} // namespace wsbcn
