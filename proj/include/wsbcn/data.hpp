#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "wsbcn/tensor.hpp"

namespace wsbcn {

/// Images in NCHW order stored as float, with integer labels.
struct Dataset {
	Index channels = 3, height = 32, width = 32;
	int num_classes = 10;
	std::vector<float> images;
	std::vector<int> labels;

	Index size() const { return static_cast<Index>(labels.size()); }
	Index image_size() const { return channels * height * width; }
	const float* image(Index i) const { return images.data() + i * image_size(); }

	/// Copies the given samples into a [B, C, H, W] tensor.
	template <typename Scalar>
	Tensor<Scalar> batch(std::span<const Index> indices) const
	{
		Tensor<Scalar> t({static_cast<Index>(indices.size()), channels, height, width});
		const Index n = image_size();
		for (std::size_t b = 0; b < indices.size(); ++b) {
			const float* src = image(indices[b]);
			for (Index k = 0; k < n; ++k) t[static_cast<Index>(b) * n + k] = static_cast<Scalar>(src[k]);
		}
		return t;
	}

	std::vector<int> batch_labels(std::span<const Index> indices) const
	{
		std::vector<int> out;
		out.reserve(indices.size());
		for (Index i : indices) out.push_back(labels[static_cast<std::size_t>(i)]);
		return out;
	}

	/// Samples [begin, begin + count).
	Dataset slice(Index begin, Index count) const;
};

struct ChannelStats {
	std::vector<double> mean, stddev;  // population std
};

ChannelStats channel_stats(const Dataset& d);

/// Subtracts the given per-channel mean and divides by the std, in place.
void standardize(Dataset& d, const ChannelStats& stats);

/// Parses the binary CIFAR-10 batch format: records of one label byte and
/// 3072 CHW pixel bytes. Pixels are scaled to [0, 1].
Dataset parse_cifar10(std::span<const std::uint8_t> bytes);

/// Reads one batch file.
Dataset read_cifar10_file(const std::filesystem::path& file);

/// Reads data_batch_1..5.bin (train) or test_batch.bin from `dir`. A limit
/// of 0 keeps everything.
Dataset load_cifar10(const std::filesystem::path& dir, bool train, Index limit = 0);

/// Deterministic 10-class style task: each class owns a prototype made of a
/// few coloured Gaussian blobs; samples are shifted, rescaled, noisy copies.
struct BlobOptions {
	Index channels = 3;
	Index size = 16;
	double shift = 3.0;      // max translation in pixels
	double noise = 2.0;      // additive pixel noise std
	double amplitude = 0.4;  // relative std of the per-sample contrast factor
	int blobs_per_class = 3;
	// Spatial frequency (cycles per pixel) of an oriented grating under each
	// blob. 0 gives plain blobs; above 0 the class signal lives in edges and
	// orientation rather than in mean colour.
	double texture = 0.15;
};

Dataset synth_blobs(std::uint64_t seed, Index n, int classes, const BlobOptions& opt = {});

/// Horizontal flip with probability 1/2 and a random translation of up to
/// `pad` pixels with zero fill, applied per sample of a [B, C, H, W] batch.
template <typename Scalar>
void augment_batch(Tensor<Scalar>& x, std::mt19937_64& rng, Index pad = 4)
{
	const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
	std::vector<Scalar> buf(static_cast<std::size_t>(C * H * W));
	std::uniform_int_distribution<Index> shift(-pad, pad);
	std::bernoulli_distribution flip(0.5);
	for (Index b = 0; b < B; ++b) {
		const bool f = flip(rng);
		const Index dy = shift(rng), dx = shift(rng);
		Scalar* img = x.ptr() + b * C * H * W;
		for (Index c = 0; c < C; ++c)
			for (Index i = 0; i < H; ++i)
				for (Index j = 0; j < W; ++j) {
					const Index si = i + dy;
					Index sj = j + dx;
					if (si < 0 || si >= H || sj < 0 || sj >= W) {
						buf[static_cast<std::size_t>((c * H + i) * W + j)] = Scalar(0);
						continue;
					}
					if (f) sj = W - 1 - sj;
					buf[static_cast<std::size_t>((c * H + i) * W + j)] = img[(c * H + si) * W + sj];
				}
		std::copy(buf.begin(), buf.end(), img);
	}
}

} // namespace wsbcn
