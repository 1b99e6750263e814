#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "wsbcn/norm.hpp"
#include "wsbcn/weight_reparam.hpp"

namespace wsbcn {

enum class Arch { ConvNet4, MiniResNet };

inline const char* to_string(Arch a) { return a == Arch::ConvNet4 ? "convnet4" : "miniresnet"; }

/// Normalization choice by name, as used in configs: kind plus group count
/// (0 means the default min(32, C/4)).
struct NormChoice {
	NormKind kind = NormKind::BN;
	Index groups = 0;
	bool layer_norm = false;     // one group per sample
	bool instance_norm = false;  // one channel per group

	Index groups_for(Index channels) const
	{
		if (layer_norm) return 1;
		if (instance_norm) return channels;
		return groups > 0 ? groups : default_group_count(channels);
	}
};

/// bn, gn, ln, in, bcn, bcn-micro, fixed, none.
inline NormChoice parse_norm(const std::string& name, Index groups = 0)
{
	NormChoice n;
	n.groups = groups;
	if (name == "bn") n.kind = NormKind::BN;
	else if (name == "gn") n.kind = NormKind::CN;
	else if (name == "ln") n = {NormKind::CN, 1, true, false};
	else if (name == "in") n = {NormKind::CN, 0, false, true};
	else if (name == "bcn") n.kind = NormKind::BCNLarge;
	else if (name == "bcn-micro") n.kind = NormKind::BCNMicro;
	else if (name == "fixed") n.kind = NormKind::FixedStats;
	else if (name == "none") n.kind = NormKind::None;
	else throw DomainError("unknown normalization '" + name + "'");
	return n;
}

inline std::string norm_name(const NormChoice& n)
{
	switch (n.kind) {
	case NormKind::BN: return "bn";
	case NormKind::CN: return n.layer_norm ? "ln" : n.instance_norm ? "in" : "gn";
	case NormKind::BCNLarge: return "bcn";
	case NormKind::BCNMicro: return "bcn-micro";
	case NormKind::FixedStats: return "fixed";
	case NormKind::None: return "none";
	}
	return "?";
}

inline Reparam parse_reparam(const std::string& name)
{
	if (name == "none") return Reparam::None;
	if (name == "ws") return Reparam::WS;
	if (name == "wn") return Reparam::WN;
	if (name == "cwn") return Reparam::CWN;
	throw DomainError("unknown weight reparameterization '" + name + "'");
}

struct ModelSpec {
	Arch arch = Arch::ConvNet4;
	Index depth = 8;          // MiniResNet: 6n + 2
	NormChoice norm;
	Reparam reparam = Reparam::None;
	Index width = 32;         // ConvNet4 channels; MiniResNet first-stage channels
	Index in_channels = 3;
	Index num_classes = 10;
	double ws_eps = -1.0;     // negative: 1e-5 for float, 1e-10 for double
	double bcn_rate = 0.1;    // initial micro-batch BCN update rate

	std::string describe() const
	{
		std::string s = std::string(to_string(arch));
		if (arch == Arch::MiniResNet) s += std::to_string(depth);
		s += "/" + norm_name(norm) + "/" + to_string(reparam) + "/w" + std::to_string(width) + "/c" +
		     std::to_string(in_channels) + "/k" + std::to_string(num_classes);
		if (norm.groups > 0) s += "/g" + std::to_string(norm.groups);
		return s;
	}
};

template <typename Scalar>
double default_ws_eps()
{
	return sizeof(Scalar) >= 8 ? 1e-10 : 1e-5;
}

/// Bias-free convolution with an optional weight reparameterization. The
/// trainable tensor is always the raw weight (plus gains for WN/CWN).
template <typename Scalar>
struct ConvLayer {
	std::string name;
	Tensor<Scalar> weight;  // [O, Cin, k, k]
	Tensor<Scalar> gain;    // [O], WN/CWN only
	Reparam reparam = Reparam::None;
	double ws_eps = 1e-5;
	Index stride = 1;
	Index pad = 1;

	/// The weight the convolution sees, recorded on the tape.
	Var<Scalar> effective(Tape<Scalar>& tape, Var<Scalar>* raw_out = nullptr)
	{
		const Var<Scalar> raw = tape.leaf(weight);
		if (raw_out) *raw_out = raw;
		switch (reparam) {
		case Reparam::None: return raw;
		case Reparam::WS: return ws_forward(raw, ws_eps);
		case Reparam::WN: return wn_forward(raw, tape.leaf(gain));
		case Reparam::CWN: return cwn_forward(raw, tape.leaf(gain));
		}
		throw StateError("unknown reparameterization");
	}

	/// Effective weight computed off-tape.
	Tensor<Scalar> effective_value() const
	{
		Tape<Scalar> tape(false);
		ConvLayer copy = *this;
		return copy.effective(tape).value();
	}
};

/// What a forward pass exposes to diagnostics. Entries are per conv layer in
/// construction order; norm entries are empty Vars for layers without a norm.
template <typename Scalar>
struct ForwardTrace {
	std::vector<Var<Scalar>> raw_weight;
	std::vector<Var<Scalar>> effective_weight;
	std::vector<Var<Scalar>> conv_out;
	std::vector<Var<Scalar>> norm_out;
};

struct ParamInfo {
	std::string name;
	bool decay = false;
};

template <typename Scalar>
class Model {
public:
	ModelSpec spec;
	std::vector<ConvLayer<Scalar>> convs;
	std::vector<NormState<Scalar>> norms;  // one per conv
	Tensor<Scalar> fc_weight, fc_bias;

	struct Block {
		std::size_t conv1, conv2;
		std::optional<std::size_t> shortcut;
	};
	std::size_t stem = 0;
	std::vector<Block> blocks;

	/// Builds the architecture and initializes parameters from `seed`.
	static Model build(const ModelSpec& spec, std::uint64_t seed)
	{
		if (spec.in_channels < 1 || spec.num_classes < 2 || spec.width < 1)
			throw ShapeError("model spec: invalid channel or class count");
		Model m;
		m.spec = spec;
		if (m.spec.ws_eps < 0) m.spec.ws_eps = default_ws_eps<Scalar>();
		std::mt19937_64 rng(seed);
		if (spec.arch == Arch::ConvNet4) {
			Index cin = spec.in_channels;
			for (int i = 0; i < 4; ++i) {
				m.add_conv("conv" + std::to_string(i + 1), cin, spec.width, 3, 1, 1, rng);
				cin = spec.width;
			}
		} else {
			if (spec.depth < 8 || (spec.depth - 2) % 6 != 0)
				throw ShapeError("MiniResNet depth must be 6n + 2 with n >= 1, got " + std::to_string(spec.depth));
			const Index n = (spec.depth - 2) / 6;
			m.stem = m.add_conv("stem", spec.in_channels, spec.width, 3, 1, 1, rng);
			Index cin = spec.width;
			for (Index stage = 0; stage < 3; ++stage) {
				const Index cout = spec.width << stage;
				for (Index b = 0; b < n; ++b) {
					const Index stride = (stage > 0 && b == 0) ? 2 : 1;
					const std::string p = "s" + std::to_string(stage + 1) + "b" + std::to_string(b + 1);
					Block blk{};
					blk.conv1 = m.add_conv(p + ".conv1", cin, cout, 3, stride, 1, rng);
					blk.conv2 = m.add_conv(p + ".conv2", cout, cout, 3, 1, 1, rng);
					if (stride != 1 || cin != cout) blk.shortcut = m.add_conv(p + ".shortcut", cin, cout, 1, stride, 0, rng);
					m.blocks.push_back(blk);
					cin = cout;
				}
			}
		}
		const Index features = m.convs.back().weight.dim(0);
		const double bound = std::sqrt(6.0 / static_cast<double>(features + spec.num_classes));
		m.fc_weight = uniform({spec.num_classes, features}, bound, rng);
		m.fc_bias = Tensor<Scalar>::zeros({spec.num_classes});
		m.fc_weight.set_requires_grad(true);
		m.fc_bias.set_requires_grad(true);
		return m;
	}

	void set_mode(NormMode mode)
	{
		for (auto& n : norms) n.mode = mode;
	}

	void set_affine_trainable(bool on)
	{
		for (auto& n : norms) n.set_affine_trainable(on);
	}

	/// Logits [B, classes] for input [B, Cin, H, W].
	Var<Scalar> forward(Tape<Scalar>& tape, const Tensor<Scalar>& input, ForwardTrace<Scalar>* trace = nullptr)
	{
		detail::require_rank(input.shape(), 4, "model", "input");
		if (input.dim(1) != spec.in_channels)
			throw ShapeError("model: input has " + std::to_string(input.dim(1)) + " channels, expected " +
			                 std::to_string(spec.in_channels));
		if (trace) *trace = ForwardTrace<Scalar>{};
		Var<Scalar> x = tape.constant(input);
		if (spec.arch == Arch::ConvNet4) {
			for (std::size_t i = 0; i < convs.size(); ++i) x = avg_pool2(relu(conv_norm(tape, x, i, trace)));
		} else {
			x = relu(conv_norm(tape, x, stem, trace));
			for (const Block& b : blocks) {
				const Var<Scalar> h = relu(conv_norm(tape, x, b.conv1, trace));
				const Var<Scalar> out = conv_norm(tape, h, b.conv2, trace);
				const Var<Scalar> skip = b.shortcut ? conv_norm(tape, x, *b.shortcut, trace) : x;
				x = relu(add(out, skip));
			}
		}
		const Var<Scalar> pooled = global_avg_pool(x);
		return add_bias(linear(pooled, tape.leaf(fc_weight)), tape.leaf(fc_bias));
	}

	/// Trainable tensors in a fixed order, with names and decay flags.
	std::vector<std::pair<ParamInfo, Tensor<Scalar>*>> parameters()
	{
		std::vector<std::pair<ParamInfo, Tensor<Scalar>*>> out;
		for (std::size_t i = 0; i < convs.size(); ++i) {
			out.push_back({{convs[i].name + ".weight", true}, &convs[i].weight});
			if (!convs[i].gain.empty()) out.push_back({{convs[i].name + ".gain", false}, &convs[i].gain});
			for (auto& [n, t] : norms[i].parameters()) out.push_back({{convs[i].name + ".norm." + n, false}, t});
		}
		out.push_back({{"fc.weight", true}, &fc_weight});
		out.push_back({{"fc.bias", false}, &fc_bias});
		return out;
	}

	std::vector<std::pair<std::string, Eigen::ArrayXd*>> buffers()
	{
		std::vector<std::pair<std::string, Eigen::ArrayXd*>> out;
		for (std::size_t i = 0; i < convs.size(); ++i)
			for (auto& [n, b] : norms[i].buffers()) out.emplace_back(convs[i].name + ".norm." + n, b);
		return out;
	}

	void zero_grad()
	{
		for (auto& [info, t] : parameters()) t->clear_grad();
	}

private:
	static Tensor<Scalar> uniform(Shape shape, double bound, std::mt19937_64& rng)
	{
		std::uniform_real_distribution<double> u(-bound, bound);
		Tensor<Scalar> t(std::move(shape));
		for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(u(rng));
		return t;
	}

	std::size_t add_conv(std::string name, Index cin, Index cout, Index k, Index stride, Index pad, std::mt19937_64& rng)
	{
		ConvLayer<Scalar> c;
		c.name = std::move(name);
		const Index fan_in = cin * k * k;
		// Kaiming uniform for ReLU: U(-sqrt(6 / fan_in), sqrt(6 / fan_in)).
		c.weight = uniform({cout, cin, k, k}, std::sqrt(6.0 / static_cast<double>(fan_in)), rng);
		c.weight.set_requires_grad(true);
		c.reparam = spec.reparam;
		c.ws_eps = spec.ws_eps;
		c.stride = stride;
		c.pad = pad;
		if (c.reparam == Reparam::WN || c.reparam == Reparam::CWN) {
			c.gain = initial_gain(c.weight, c.reparam);
			c.gain.set_requires_grad(true);
		}
		convs.push_back(std::move(c));
		norms.push_back(make_norm(cout));
		return convs.size() - 1;
	}

	NormState<Scalar> make_norm(Index channels) const
	{
		const NormChoice& n = spec.norm;
		switch (n.kind) {
		case NormKind::None: return NormState<Scalar>::make(NormKind::None, channels);
		case NormKind::BN: return NormState<Scalar>::bn(channels);
		case NormKind::CN: return NormState<Scalar>::cn(channels, n.groups_for(channels));
		case NormKind::BCNLarge: return NormState<Scalar>::bcn_large(channels, n.groups_for(channels));
		case NormKind::BCNMicro: return NormState<Scalar>::bcn_micro(channels, n.groups_for(channels), spec.bcn_rate);
		case NormKind::FixedStats:
			return NormState<Scalar>::fixed_stats(channels, Eigen::ArrayXd::Zero(channels), Eigen::ArrayXd::Ones(channels));
		}
		throw StateError("unknown normalization kind");
	}

	Var<Scalar> conv_norm(Tape<Scalar>& tape, const Var<Scalar>& x, std::size_t i, ForwardTrace<Scalar>* trace)
	{
		ConvLayer<Scalar>& c = convs[i];
		Var<Scalar> raw;
		const Var<Scalar> w = c.effective(tape, &raw);
		const Var<Scalar> y = conv2d(x, w, c.stride, c.pad);
		const Var<Scalar> n = norm_forward(y, norms[i]);
		if (trace) {
			trace->raw_weight.push_back(raw);
			trace->effective_weight.push_back(w);
			trace->conv_out.push_back(y);
			trace->norm_out.push_back(n);
		}
		return n;
	}
};

/// Samples per-channel (mu_hat, sigma_hat) for every fixed-statistics layer:
/// mu_hat ~ N(0, sigma_mu), sigma_hat = exp(N(0, sigma_sigma)). Zero spreads
/// give (0, 1), i.e. plain batch normalization.
template <typename Scalar>
void sample_fixed_stats(Model<Scalar>& model, double sigma_mu, double sigma_sigma, std::uint64_t seed)
{
	if (sigma_mu < 0 || sigma_sigma < 0) throw DomainError("fixed statistics spreads must be non-negative");
	std::mt19937_64 rng(seed);
	std::normal_distribution<double> n01(0.0, 1.0);
	for (auto& n : model.norms) {
		if (n.kind != NormKind::FixedStats) continue;
		for (Index c = 0; c < n.channels; ++c) {
			n.fixed_mu[c] = sigma_mu * n01(rng);
			n.fixed_sigma[c] = std::exp(sigma_sigma * n01(rng));
		}
	}
}

} // namespace wsbcn
