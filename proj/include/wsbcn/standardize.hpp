#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "wsbcn/ops.hpp"

namespace wsbcn {

/// Which elements of a [B,C,H,W] tensor share normalization statistics.
///
/// A group is `blocks` contiguous runs of `block_len` elements, starting at
/// block * block_stride + group * group_stride.
struct GroupLayout {
	Index groups = 0;
	Index blocks = 0;
	Index block_len = 0;
	Index block_stride = 0;
	Index group_stride = 0;

	Index group_size() const { return blocks * block_len; }
	Index start(Index group, Index block) const { return block * block_stride + group * group_stride; }

	/// One group per channel spanning batch and space (BN).
	static GroupLayout per_channel(const Shape& s)
	{
		detail::require_rank(s, 4, "normalization", "input");
		const Index HW = s[2] * s[3];
		return {s[1], s[0], HW, s[1] * HW, HW};
	}

	/// G groups of C/G channels per sample (GN; LN for G=1, IN for G=C).
	static GroupLayout per_sample_group(const Shape& s, Index G)
	{
		detail::require_rank(s, 4, "normalization", "input");
		if (G < 1 || s[1] % G != 0)
			throw ShapeError("group count " + std::to_string(G) + " does not divide " + std::to_string(s[1]) +
			                 " channels");
		const Index len = (s[1] / G) * s[2] * s[3];
		return {s[0] * G, 1, len, 0, len};
	}
};

/// Per-group mean and population variance, accumulated in double in a fixed
/// order.
struct GroupStats {
	std::vector<double> mean;
	std::vector<double> var;
};

template <typename Scalar>
GroupStats group_stats(const Tensor<Scalar>& x, const GroupLayout& layout)
{
	GroupStats st{std::vector<double>(static_cast<std::size_t>(layout.groups)),
	              std::vector<double>(static_cast<std::size_t>(layout.groups))};
	const Scalar* p = x.ptr();
	const double n = static_cast<double>(layout.group_size());
	for (Index g = 0; g < layout.groups; ++g) {
		double s = 0.0;
		for (Index b = 0; b < layout.blocks; ++b) {
			const Scalar* run = p + layout.start(g, b);
			for (Index k = 0; k < layout.block_len; ++k) s += static_cast<double>(run[k]);
		}
		const double mu = s / n;
		double ss = 0.0;
		for (Index b = 0; b < layout.blocks; ++b) {
			const Scalar* run = p + layout.start(g, b);
			for (Index k = 0; k < layout.block_len; ++k) {
				const double d = static_cast<double>(run[k]) - mu;
				ss += d * d;
			}
		}
		st.mean[static_cast<std::size_t>(g)] = mu;
		st.var[static_cast<std::size_t>(g)] = ss / n;
	}
	return st;
}

template <typename Scalar>
struct Standardized {
	Var<Scalar> out;
	GroupStats stats;
};

/// (x - mean_g) / sqrt(var_g + eps) with statistics from the data itself;
/// gradients flow through the statistics.
template <typename Scalar>
Standardized<Scalar> standardize(const Var<Scalar>& x, const GroupLayout& layout, double eps)
{
	if (layout.group_size() < 2 && eps <= 0.0)
		throw ContractError("standardize: a group of one element has undefined variance");
	GroupStats st = group_stats(x.value(), layout);
	std::vector<double> inv_std(st.var.size());
	for (std::size_t g = 0; g < st.var.size(); ++g) inv_std[g] = 1.0 / std::sqrt(st.var[g] + eps);

	Tensor<Scalar> out(x.shape());
	const Scalar* xp = x.value().ptr();
	for (Index g = 0; g < layout.groups; ++g) {
		const double mu = st.mean[static_cast<std::size_t>(g)], is = inv_std[static_cast<std::size_t>(g)];
		for (Index b = 0; b < layout.blocks; ++b) {
			const Index s = layout.start(g, b);
			for (Index k = 0; k < layout.block_len; ++k)
				out[s + k] = static_cast<Scalar>((static_cast<double>(xp[s + k]) - mu) * is);
		}
	}
	typename Tensor<Scalar>::Storage xhat = out.data();
	const auto ix = x.id();
	Var<Scalar> v = x.tape().record(
	    "standardize", std::move(out), {ix},
	    [ix, layout, inv_std = std::move(inv_std), xhat = std::move(xhat)](Tape<Scalar>& tp, const auto& g) {
		    auto& gx = tp.grad_acc(ix);
		    const double n = static_cast<double>(layout.group_size());
		    for (Index grp = 0; grp < layout.groups; ++grp) {
			    double sg = 0.0, sgx = 0.0;
			    for (Index b = 0; b < layout.blocks; ++b) {
				    const Index s = layout.start(grp, b);
				    for (Index k = 0; k < layout.block_len; ++k) {
					    sg += static_cast<double>(g[s + k]);
					    sgx += static_cast<double>(g[s + k]) * static_cast<double>(xhat[s + k]);
				    }
			    }
			    const double mg = sg / n, mgx = sgx / n, is = inv_std[static_cast<std::size_t>(grp)];
			    for (Index b = 0; b < layout.blocks; ++b) {
				    const Index s = layout.start(grp, b);
				    for (Index k = 0; k < layout.block_len; ++k)
					    gx[s + k] += static_cast<Scalar>(
					        is * (static_cast<double>(g[s + k]) - mg - static_cast<double>(xhat[s + k]) * mgx));
			    }
		    }
	    });
	return {v, std::move(st)};
}

/// out[:, c] = gamma[c] * x[:, c] + beta[c] for x [B,C,H,W].
template <typename Scalar>
Var<Scalar> channel_affine(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta)
{
	auto& t = detail::common_tape(x, gamma);
	detail::common_tape(x, beta);
	detail::require_rank(x.shape(), 4, "channel_affine", "input");
	const Index B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
	if (gamma.shape() != Shape{C} || beta.shape() != Shape{C})
		throw ShapeError("channel_affine: expected per-channel vectors of length " + std::to_string(C));
	Tensor<Scalar> out(x.shape());
	for (Index b = 0; b < B; ++b)
		for (Index c = 0; c < C; ++c) {
			const Index s = (b * C + c) * HW;
			out.data().segment(s, HW) = x.value().data().segment(s, HW) * gamma.value()[c] + beta.value()[c];
		}
	const auto ix = x.id(), ig = gamma.id(), ib = beta.id();
	return t.record("channel_affine", std::move(out), {ix, ig, ib}, [ix, ig, ib, B, C, HW](Tape<Scalar>& tp, const auto& g) {
		if (tp.needs_grad(ix)) {
			auto& gx = tp.grad_acc(ix);
			const auto& gam = tp.value(ig).data();
			for (Index b = 0; b < B; ++b)
				for (Index c = 0; c < C; ++c) {
					const Index s = (b * C + c) * HW;
					gx.segment(s, HW) += g.segment(s, HW) * gam[c];
				}
		}
		if (tp.needs_grad(ig)) {
			auto& gg = tp.grad_acc(ig);
			const auto& xv = tp.value(ix).data();
			for (Index c = 0; c < C; ++c) {
				double acc = 0.0;
				for (Index b = 0; b < B; ++b) {
					const Index s = (b * C + c) * HW;
					for (Index k = 0; k < HW; ++k) acc += static_cast<double>(g[s + k]) * static_cast<double>(xv[s + k]);
				}
				gg[c] += static_cast<Scalar>(acc);
			}
		}
		if (tp.needs_grad(ib)) {
			auto& gb = tp.grad_acc(ib);
			for (Index c = 0; c < C; ++c) {
				double acc = 0.0;
				for (Index b = 0; b < B; ++b) {
					const Index s = (b * C + c) * HW;
					for (Index k = 0; k < HW; ++k) acc += static_cast<double>(g[s + k]);
				}
				gb[c] += static_cast<Scalar>(acc);
			}
		}
	});
}

} // namespace wsbcn
