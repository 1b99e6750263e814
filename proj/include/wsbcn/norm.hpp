#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "wsbcn/standardize.hpp"

namespace wsbcn {

enum class NormKind { None, BN, CN, BCNLarge, BCNMicro, FixedStats };
enum class NormMode { Train, Eval };

inline const char* to_string(NormKind k)
{
	switch (k) {
	case NormKind::None: return "none";
	case NormKind::BN: return "bn";
	case NormKind::CN: return "cn";
	case NormKind::BCNLarge: return "bcn_large";
	case NormKind::BCNMicro: return "bcn_micro";
	case NormKind::FixedStats: return "fixed_stats";
	}
	return "?";
}

/// Group count min(32, C/4), reduced to a divisor of C.
inline Index default_group_count(Index channels)
{
	Index g = std::max<Index>(1, std::min<Index>(32, channels / 4));
	while (channels % g != 0) --g;
	return g;
}

/// Parameters and running statistics of one normalization layer.
///
/// BCN layers carry two affine pairs: `gamma`/`beta` after the batch part and
/// `gamma_c`/`beta_c` after the channel part. `running_mean`/`running_var`
/// are BN running statistics, or the micro-batch estimates mu_hat/sigma_hat^2
/// for BCNMicro (initialized to 0 and 1).
template <typename Scalar>
struct NormState {
	NormKind kind = NormKind::None;
	Index channels = 0;
	Index groups = 1;
	double eps = 1e-5;
	double momentum = 0.1;
	double update_rate = 0.1;
	bool conventional_variance = false;
	NormMode mode = NormMode::Train;

	Tensor<Scalar> gamma, beta;
	Tensor<Scalar> gamma_c, beta_c;
	Eigen::ArrayXd running_mean, running_var;
	Eigen::ArrayXd fixed_mu, fixed_sigma;

	static NormState make(NormKind kind, Index channels, Index groups = 1)
	{
		if (channels < 1) throw ShapeError("normalization needs at least one channel");
		NormState s;
		s.kind = kind;
		s.channels = channels;
		s.groups = groups;
		if ((kind == NormKind::CN || kind == NormKind::BCNLarge || kind == NormKind::BCNMicro) &&
		    (groups < 1 || channels % groups != 0))
			throw ShapeError("group count " + std::to_string(groups) + " does not divide " + std::to_string(channels) +
			                 " channels");
		s.gamma = Tensor<Scalar>::ones({channels});
		s.beta = Tensor<Scalar>::zeros({channels});
		s.gamma.set_requires_grad(true);
		s.beta.set_requires_grad(true);
		if (kind == NormKind::BCNLarge || kind == NormKind::BCNMicro) {
			s.gamma_c = Tensor<Scalar>::ones({channels});
			s.beta_c = Tensor<Scalar>::zeros({channels});
			s.gamma_c.set_requires_grad(true);
			s.beta_c.set_requires_grad(true);
		}
		s.running_mean = Eigen::ArrayXd::Zero(channels);
		s.running_var = Eigen::ArrayXd::Ones(channels);
		if (kind == NormKind::FixedStats) {
			s.fixed_mu = Eigen::ArrayXd::Zero(channels);
			s.fixed_sigma = Eigen::ArrayXd::Ones(channels);
		}
		return s;
	}

	static NormState bn(Index c) { return make(NormKind::BN, c); }
	static NormState cn(Index c, Index g) { return make(NormKind::CN, c, g); }
	static NormState layer_norm(Index c) { return make(NormKind::CN, c, 1); }
	static NormState instance_norm(Index c) { return make(NormKind::CN, c, c); }
	static NormState bcn_large(Index c, Index g) { return make(NormKind::BCNLarge, c, g); }
	static NormState bcn_micro(Index c, Index g, double rate)
	{
		NormState s = make(NormKind::BCNMicro, c, g);
		s.update_rate = rate;
		return s;
	}
	static NormState fixed_stats(Index c, Eigen::ArrayXd mu, Eigen::ArrayXd sigma)
	{
		if (mu.size() != c || sigma.size() != c) throw ShapeError("fixed statistics must have one entry per channel");
		if (!(sigma > 0.0).all()) throw DomainError("fixed sigma must be positive");
		NormState s = make(NormKind::FixedStats, c);
		s.fixed_mu = std::move(mu);
		s.fixed_sigma = std::move(sigma);
		return s;
	}

	void set_affine_trainable(bool on)
	{
		for (Tensor<Scalar>* t : {&gamma, &beta, &gamma_c, &beta_c})
			if (!t->empty()) t->set_requires_grad(on);
	}

	/// Trainable tensors with stable names relative to the layer.
	std::vector<std::pair<std::string, Tensor<Scalar>*>> parameters()
	{
		std::vector<std::pair<std::string, Tensor<Scalar>*>> out;
		if (kind == NormKind::None) return out;
		out.emplace_back("gamma", &gamma);
		out.emplace_back("beta", &beta);
		if (!gamma_c.empty()) {
			out.emplace_back("gamma_c", &gamma_c);
			out.emplace_back("beta_c", &beta_c);
		}
		return out;
	}

	/// Non-trainable state, serialized with checkpoints.
	std::vector<std::pair<std::string, Eigen::ArrayXd*>> buffers()
	{
		std::vector<std::pair<std::string, Eigen::ArrayXd*>> out;
		if (kind == NormKind::None || kind == NormKind::CN) return out;
		out.emplace_back("running_mean", &running_mean);
		out.emplace_back("running_var", &running_var);
		if (kind == NormKind::FixedStats) {
			out.emplace_back("fixed_mu", &fixed_mu);
			out.emplace_back("fixed_sigma", &fixed_sigma);
		}
		return out;
	}
};

namespace detail {

template <typename Scalar>
void require_channels(const Var<Scalar>& x, const NormState<Scalar>& st, const char* op)
{
	detail::require_rank(x.shape(), 4, op, "input");
	if (x.dim(1) != st.channels)
		throw ShapeError(std::string(op) + ": input has " + std::to_string(x.dim(1)) + " channels, layer expects " +
		                 std::to_string(st.channels));
}

template <typename Scalar>
Var<Scalar> constant_vector(Tape<Scalar>& t, const Eigen::ArrayXd& v)
{
	return t.constant(Tensor<Scalar>({v.size()}, v.template cast<Scalar>().eval()));
}

/// x * scale[c] + shift[c] with constant (non-trainable) per-channel vectors.
template <typename Scalar>
Var<Scalar> fixed_channel_affine(const Var<Scalar>& x, const Eigen::ArrayXd& scale, const Eigen::ArrayXd& shift)
{
	auto& t = x.tape();
	return channel_affine(x, constant_vector(t, scale), constant_vector(t, shift));
}

template <typename Scalar>
Var<Scalar> affine(const Var<Scalar>& x, Tensor<Scalar>& gamma, Tensor<Scalar>& beta)
{
	auto& t = x.tape();
	return channel_affine(x, t.leaf(gamma), t.leaf(beta));
}

/// Batch-statistics standardization; updates running statistics in train mode.
template <typename Scalar>
Var<Scalar> batch_standardize(const Var<Scalar>& x, NormState<Scalar>& st, const char* op)
{
	require_channels(x, st, op);
	if (st.mode == NormMode::Eval) {
		const Eigen::ArrayXd scale = (st.running_var + st.eps).rsqrt();
		return fixed_channel_affine(x, scale, Eigen::ArrayXd(-st.running_mean * scale));
	}
	const Index per_channel = x.dim(0) * x.dim(2) * x.dim(3);
	if (per_channel < 2)
		throw ContractError(std::string(op) +
		                    ": batch statistics need at least 2 values per channel in train mode (got 1); "
		                    "use a channel-based or micro-batch BCN normalization for batch size 1");
	auto r = standardize(x, GroupLayout::per_channel(x.shape()), st.eps);
	const Eigen::Map<const Eigen::ArrayXd> mu(r.stats.mean.data(), st.channels);
	const Eigen::Map<const Eigen::ArrayXd> var(r.stats.var.data(), st.channels);
	st.running_mean = (1.0 - st.momentum) * st.running_mean + st.momentum * mu;
	st.running_var = (1.0 - st.momentum) * st.running_var + st.momentum * var;
	return r.out;
}

template <typename Scalar>
Var<Scalar> group_standardize(const Var<Scalar>& x, const NormState<Scalar>& st, const char* op)
{
	require_channels(x, st, op);
	return standardize(x, GroupLayout::per_sample_group(x.shape(), st.groups), st.eps).out;
}

} // namespace detail

/// Batch normalization followed by the per-channel affine transform.
template <typename Scalar>
Var<Scalar> bn_forward(const Var<Scalar>& x, NormState<Scalar>& st)
{
	return detail::affine(detail::batch_standardize(x, st, "bn_forward"), st.gamma, st.beta);
}

/// Channel-based normalization over G groups per sample, then affine.
template <typename Scalar>
Var<Scalar> cn_forward(const Var<Scalar>& x, NormState<Scalar>& st)
{
	return detail::affine(detail::group_standardize(x, st, "cn_forward"), st.gamma, st.beta);
}

/// Batch-normalize, then move each channel to a prescribed mean mu_hat and
/// scale sigma_hat before the trainable affine:
///   Y = gamma * (sigma_hat * (X - mu) / sigma + mu_hat) + beta.
template <typename Scalar>
Var<Scalar> fixed_stats_forward(const Var<Scalar>& x, NormState<Scalar>& st)
{
	if (st.fixed_mu.size() != st.channels || st.fixed_sigma.size() != st.channels)
		throw StateError("fixed_stats_forward: layer has no fixed statistics");
	const Var<Scalar> y = detail::batch_standardize(x, st, "fixed_stats_forward");
	return detail::affine(detail::fixed_channel_affine(y, st.fixed_sigma, st.fixed_mu), st.gamma, st.beta);
}

/// Large-batch BCN: BN (gamma/beta) followed by CN (gamma_c/beta_c).
template <typename Scalar>
Var<Scalar> bcn_large_forward(const Var<Scalar>& x, NormState<Scalar>& st)
{
	const Var<Scalar> b = detail::affine(detail::batch_standardize(x, st, "bcn_large_forward"), st.gamma, st.beta);
	return detail::affine(detail::group_standardize(b, st, "bcn_large_forward"), st.gamma_c, st.beta_c);
}

/// Micro-batch BCN. In train mode the estimates are first moved towards the
/// current batch statistics at rate r, then used to normalize; the estimate
/// update is not part of the gradient tape. The second moment is taken about
/// the running estimate mu_hat unless `conventional_variance` is set.
template <typename Scalar>
Var<Scalar> bcn_micro_forward(const Var<Scalar>& x, NormState<Scalar>& st)
{
	detail::require_channels(x, st, "bcn_micro_forward");
	if (st.mode == NormMode::Train) {
		const auto layout = GroupLayout::per_channel(x.shape());
		const double n = static_cast<double>(layout.group_size());
		const Scalar* p = x.value().ptr();
		for (Index c = 0; c < st.channels; ++c) {
			double s = 0.0;
			for (Index b = 0; b < layout.blocks; ++b) {
				const Scalar* run = p + layout.start(c, b);
				for (Index k = 0; k < layout.block_len; ++k) s += static_cast<double>(run[k]);
			}
			const double batch_mean = s / n;
			const double center = st.conventional_variance ? batch_mean : st.running_mean[c];
			double ss = 0.0;
			for (Index b = 0; b < layout.blocks; ++b) {
				const Scalar* run = p + layout.start(c, b);
				for (Index k = 0; k < layout.block_len; ++k) {
					const double d = static_cast<double>(run[k]) - center;
					ss += d * d;
				}
			}
			const double batch_second = ss / n;
			st.running_mean[c] += st.update_rate * (batch_mean - st.running_mean[c]);
			st.running_var[c] += st.update_rate * (batch_second - st.running_var[c]);
		}
	}
	const Eigen::ArrayXd scale = (st.running_var + st.eps).rsqrt();
	const Var<Scalar> normalized = detail::fixed_channel_affine(x, scale, Eigen::ArrayXd(-st.running_mean * scale));
	const Var<Scalar> b = detail::affine(normalized, st.gamma, st.beta);
	return detail::affine(detail::group_standardize(b, st, "bcn_micro_forward"), st.gamma_c, st.beta_c);
}

template <typename Scalar>
Var<Scalar> norm_forward(const Var<Scalar>& x, NormState<Scalar>& st)
{
	switch (st.kind) {
	case NormKind::None: return x;
	case NormKind::BN: return bn_forward(x, st);
	case NormKind::CN: return cn_forward(x, st);
	case NormKind::BCNLarge: return bcn_large_forward(x, st);
	case NormKind::BCNMicro: return bcn_micro_forward(x, st);
	case NormKind::FixedStats: return fixed_stats_forward(x, st);
	}
	throw StateError("unknown normalization kind");
}

} // namespace wsbcn
