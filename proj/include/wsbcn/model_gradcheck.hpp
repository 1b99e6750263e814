#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "wsbcn/finite_diff.hpp"
#include "wsbcn/model.hpp"

namespace wsbcn {

struct TensorGradCheck {
	std::string name;
	double coord_error = 0.0;      // norm-wise over the sampled coordinates
	double direction_error = 0.0;  // one random unit direction, relative to the gradient norm

	double worst() const { return std::max(coord_error, direction_error); }
};

/// Compares autodiff parameter gradients of the cross-entropy loss with
/// central differences. Every parameter tensor is checked on `coords`
/// random entries (all of them when smaller) and along one random direction
/// covering all of its entries. Norm states must give deterministic outputs
/// across repeated forwards (any kind in train mode except micro-batch BCN,
/// whose estimates move on every forward).
template <typename Scalar>
std::vector<TensorGradCheck> model_gradcheck(Model<Scalar>& model, const Tensor<Scalar>& input,
                                             const std::vector<int>& labels, std::uint64_t seed, Index coords = 6,
                                             Scalar h = Scalar(1e-6))
{
	auto loss_at = [&]() {
		Tape<Scalar> tape;
		return static_cast<double>(
		    softmax_cross_entropy(model.forward(tape, input), std::span<const int>(labels)).value()[0]);
	};
	model.zero_grad();
	{
		Tape<Scalar> tape;
		tape.backward(softmax_cross_entropy(model.forward(tape, input), std::span<const int>(labels)));
	}
	// A ReLU kink inside [w - h, w + h] spoils the central difference. Such
	// points show up as disagreement with the quarter step, which is then used.
	auto central = [&](const auto& set) {
		auto diff = [&](double step) {
			set(step);
			const double up = loss_at();
			set(-step);
			const double down = loss_at();
			set(0.0);
			return (up - down) / (2.0 * step);
		};
		const double full = diff(static_cast<double>(h));
		const double quarter = diff(0.25 * static_cast<double>(h));
		return std::abs(full - quarter) > 1e-7 * std::max(std::abs(full), 1e-3) ? quarter : full;
	};
	std::mt19937_64 rng(seed);
	std::vector<TensorGradCheck> out;
	for (auto& [info, t] : model.parameters()) {
		if (!t->requires_grad()) continue;
		const typename Tensor<Scalar>::Storage analytic =
		    t->has_grad() ? t->grad() : Tensor<Scalar>::Storage::Zero(t->size()).eval();
		TensorGradCheck r;
		r.name = info.name;

		std::vector<Index> idx(static_cast<std::size_t>(t->size()));
		for (Index i = 0; i < t->size(); ++i) idx[static_cast<std::size_t>(i)] = i;
		std::shuffle(idx.begin(), idx.end(), rng);
		idx.resize(static_cast<std::size_t>(std::min(coords, t->size())));
		Eigen::ArrayXd a(static_cast<Index>(idx.size())), n(static_cast<Index>(idx.size()));
		for (std::size_t k = 0; k < idx.size(); ++k) {
			Scalar& w = (*t)[idx[k]];
			const Scalar orig = w;
			a[static_cast<Index>(k)] = static_cast<double>(analytic[idx[k]]);
			n[static_cast<Index>(k)] = central([&](double step) { w = static_cast<Scalar>(orig + step); });
		}
		r.coord_error = relative_error(a, n);

		std::normal_distribution<double> normal(0.0, 1.0);
		Eigen::ArrayXd d(t->size());
		for (Index i = 0; i < d.size(); ++i) d[i] = normal(rng);
		d /= std::sqrt(d.square().sum());
		const typename Tensor<Scalar>::Storage orig = t->data();
		const double dir_numeric = central([&](double step) {
			t->data() = (orig.template cast<double>() + step * d).template cast<Scalar>();
		});
		t->data() = orig;
		const double dir_analytic = (analytic.template cast<double>() * d).sum();
		// Relative to the gradient norm, the largest any unit direction can see.
		const double gnorm = std::sqrt(analytic.template cast<double>().square().sum());
		r.direction_error = std::abs(dir_analytic - dir_numeric) / std::max({gnorm, std::abs(dir_numeric), 1e-12});
		out.push_back(r);
	}
	model.zero_grad();
	return out;
}

} // namespace wsbcn
