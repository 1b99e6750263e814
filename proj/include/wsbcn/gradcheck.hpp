#pragma once

#include <functional>
#include <random>
#include <vector>

#include "wsbcn/finite_diff.hpp"
#include "wsbcn/ops.hpp"

namespace wsbcn {

template <typename Scalar>
Tensor<Scalar> random_tensor(Shape shape, std::mt19937_64& rng, double stddev = 1.0, double mean = 0.0)
{
	std::normal_distribution<double> dist(mean, stddev);
	Tensor<Scalar> t(std::move(shape));
	for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(dist(rng));
	return t;
}

template <typename Scalar>
Tensor<Scalar> random_uniform(Shape shape, std::mt19937_64& rng, double lo, double hi)
{
	std::uniform_real_distribution<double> dist(lo, hi);
	Tensor<Scalar> t(std::move(shape));
	for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(dist(rng));
	return t;
}

/// Builds an output on a tape from leaves wrapping the inputs.
template <typename Scalar>
using GraphFn = std::function<Var<Scalar>(const std::vector<Var<Scalar>>&)>;

/// Projects a non-scalar output onto fixed random weights so every output
/// element contributes a distinct, non-degenerate gradient.
template <typename Scalar>
class ScalarProbe {
public:
	explicit ScalarProbe(std::uint64_t seed) : seed_(seed) {}

	Var<Scalar> operator()(const Var<Scalar>& out) const
	{
		if (out.size() == 1) return out;
		// Seeded through seed_seq so the probe never replays a data stream
		// drawn from the same integer seed.
		std::seed_seq seq{seed_, std::uint64_t{0x9e3779b9}};
		std::mt19937_64 rng(seq);
		Tensor<Scalar> w = random_tensor<Scalar>(out.shape(), rng);
		return sum(mul(out, out.tape().constant(std::move(w))));
	}

private:
	std::uint64_t seed_;
};

/// Largest norm-wise relative error between autodiff and central differences
/// over all inputs of `fn`.
template <typename Scalar>
double check_gradients(const std::vector<Tensor<Scalar>>& inputs, const GraphFn<Scalar>& fn, std::uint64_t probe_seed,
                       Scalar h = Scalar(1e-5))
{
	const ScalarProbe<Scalar> probe(probe_seed);
	std::vector<Tensor<Scalar>> leaves = inputs;
	for (auto& t : leaves) {
		t.set_requires_grad(true);
		t.clear_grad();
	}
	{
		Tape<Scalar> tape;
		std::vector<Var<Scalar>> vars;
		for (auto& t : leaves) vars.push_back(tape.leaf(t));
		backward(probe(fn(vars)));
	}
	double worst = 0.0;
	for (std::size_t k = 0; k < inputs.size(); ++k) {
		auto f = [&](const Tensor<Scalar>& probe_value) {
			std::vector<Tensor<Scalar>> local = inputs;
			local[k] = probe_value;
			Tape<Scalar> tape;
			std::vector<Var<Scalar>> vars;
			for (auto& t : local) vars.push_back(tape.leaf(t));
			return probe(fn(vars)).value()[0];
		};
		const Tensor<Scalar> numeric = finite_diff_grad<Scalar>(f, inputs[k], h);
		const auto analytic = leaves[k].has_grad() ? leaves[k].grad() : Tensor<Scalar>::Storage::Zero(inputs[k].size()).eval();
		worst = std::max(worst, relative_error(analytic, numeric.data()));
	}
	return worst;
}

} // namespace wsbcn
