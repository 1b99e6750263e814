#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "wsbcn/tensor.hpp"

namespace wsbcn {

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every element.
template <typename Scalar>
Tensor<Scalar> finite_diff_grad(const std::function<Scalar(const Tensor<Scalar>&)>& f, const Tensor<Scalar>& x,
                                Scalar h = Scalar(1e-5))
{
	if (!(h > Scalar(0))) throw DomainError("finite_diff_grad: step must be positive");
	Tensor<Scalar> probe(x.shape(), x.data());
	Tensor<Scalar> grad(x.shape());
	for (Index i = 0; i < x.size(); ++i) {
		const Scalar orig = probe[i];
		probe[i] = orig + h;
		const Scalar up = f(probe);
		probe[i] = orig - h;
		const Scalar down = f(probe);
		probe[i] = orig;
		grad[i] = (up - down) / (Scalar(2) * h);
	}
	return grad;
}

/// max|a - b| / max(max|b|, floor): norm-wise relative error, robust to
/// individual near-zero entries.
template <typename Derived1, typename Derived2>
double relative_error(const Eigen::ArrayBase<Derived1>& a, const Eigen::ArrayBase<Derived2>& b, double floor = 1e-12)
{
	if (a.size() == 0) return 0.0;
	const double num = (a.template cast<double>() - b.template cast<double>()).abs().maxCoeff();
	const double den = std::max({b.template cast<double>().abs().maxCoeff(), a.template cast<double>().abs().maxCoeff(), floor});
	return num / den;
}

} // namespace wsbcn
