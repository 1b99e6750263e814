#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "wsbcn/ops.hpp"

namespace wsbcn {

enum class Reparam { None, WS, WN, CWN };

inline const char* to_string(Reparam r)
{
	switch (r) {
	case Reparam::None: return "none";
	case Reparam::WS: return "ws";
	case Reparam::WN: return "wn";
	case Reparam::CWN: return "cwn";
	}
	return "?";
}

/// A convolution weight viewed as O rows of length I = Cin*kh*kw, with its
/// reparameterized form and cached row statistics.
template <typename Scalar>
struct StandardizedWeight {
	Tensor<Scalar> raw;
	Eigen::ArrayXd row_mean;
	Eigen::ArrayXd row_std;
	double eps = 0.0;
	Tensor<Scalar> standardized;
	Reparam kind = Reparam::WS;
	std::optional<Tensor<Scalar>> wn_gain;

	Index out_channels() const { return raw.rows(); }
	Index fan_in() const { return raw.cols(); }
};

namespace detail {

template <typename Scalar>
void require_fan_in(const Tensor<Scalar>& w, const char* op)
{
	if (w.rank() < 2 || w.cols() < 2)
		throw ShapeError(std::string(op) + ": rows need at least 2 elements, got shape " + shape_str(w.shape()));
}

} // namespace detail

/// Row statistics and standardized rows, computed directly (no tape).
/// sigma = sqrt(mean(W^2) - mean(W)^2 + eps).
template <typename Scalar>
StandardizedWeight<Scalar> standardize_weight(const Tensor<Scalar>& raw, double eps)
{
	detail::require_fan_in(raw, "ws_forward");
	if (eps < 0) throw DomainError("ws_forward: eps must be non-negative");
	StandardizedWeight<Scalar> sw;
	sw.raw = raw;
	sw.eps = eps;
	sw.kind = Reparam::WS;
	const Eigen::ArrayXXd w = raw.matrix().template cast<double>().array();
	sw.row_mean = w.rowwise().mean();
	const Eigen::ArrayXd var = w.square().rowwise().mean() - sw.row_mean.square();
	sw.row_std = (var + eps).sqrt();
	if (!(sw.row_std > 0.0).all() || !sw.row_std.isFinite().all())
		throw DomainError("ws_forward: degenerate row (zero variance with eps = 0)");
	RowMajorMatrix<double> hat = (w.colwise() - sw.row_mean).colwise() / sw.row_std;
	sw.standardized = Tensor<Scalar>(raw.shape());
	sw.standardized.matrix() = hat.template cast<Scalar>();
	return sw;
}

/// Weight Standardization on the tape. Built from elementary ops so that
/// gradients reach W through both the mean and the standard deviation.
template <typename Scalar>
Var<Scalar> ws_forward(const Var<Scalar>& raw, double eps)
{
	detail::require_fan_in(raw.value(), "ws_forward");
	if (eps < 0) throw DomainError("ws_forward: eps must be non-negative");
	const Var<Scalar> mu = row_mean(raw);
	const Var<Scalar> second = row_mean(mul(raw, raw));
	const Var<Scalar> var = sub(second, mul(mu, mu));
	if (((var.value().data() + static_cast<Scalar>(eps)) <= Scalar(0)).any())
		throw DomainError("ws_forward: degenerate row (zero variance with eps = 0)");
	const Var<Scalar> sigma = sqrt(add_scalar(var, static_cast<Scalar>(eps)));
	return div_rows(sub_rows(raw, mu), sigma);
}

template <typename Scalar>
Tensor<Scalar> ws_forward(const Tensor<Scalar>& raw, double eps)
{
	return standardize_weight(raw, eps).standardized;
}

/// grad wrt the centered weight W_dot from grad wrt W_hat:
/// (g - <W_hat, g> W_hat / I) / sigma, row by row.
template <typename Scalar>
Tensor<Scalar> ws_backward_centered(const Tensor<Scalar>& w_hat, const Tensor<Scalar>& grad_w_hat,
                                    const Eigen::ArrayXd& row_std)
{
	if (w_hat.shape() != grad_w_hat.shape())
		throw ShapeError("ws_backward: W_hat " + shape_str(w_hat.shape()) + " vs grad " + shape_str(grad_w_hat.shape()));
	if (row_std.size() != w_hat.rows()) throw ShapeError("ws_backward: row_std length does not match O");
	const Eigen::ArrayXXd hat = w_hat.matrix().template cast<double>().array();
	const Eigen::ArrayXXd g = grad_w_hat.matrix().template cast<double>().array();
	const double I = static_cast<double>(w_hat.cols());
	const Eigen::ArrayXd proj = (hat * g).rowwise().sum() / I;
	const Eigen::ArrayXXd centered = ((g - hat.colwise() * proj).colwise()) / row_std;
	Tensor<Scalar> out(w_hat.shape());
	out.matrix() = centered.matrix().template cast<Scalar>();
	return out;
}

/// Analytic gradient of the loss wrt the raw weight W, composed from the
/// normalization step followed by row-mean removal.
template <typename Scalar>
Tensor<Scalar> ws_backward_analytic(const Tensor<Scalar>& w_hat, const Tensor<Scalar>& grad_w_hat,
                                    const Eigen::ArrayXd& row_std)
{
	Tensor<Scalar> g_dot = ws_backward_centered(w_hat, grad_w_hat, row_std);
	Eigen::ArrayXXd d = g_dot.matrix().template cast<double>().array();
	const Eigen::ArrayXd m = d.rowwise().mean();
	d.colwise() -= m;
	Tensor<Scalar> out(w_hat.shape());
	out.matrix() = d.matrix().template cast<Scalar>();
	return out;
}

/// g_c * W_c / ||W_c||
template <typename Scalar>
Var<Scalar> wn_forward(const Var<Scalar>& raw, const Var<Scalar>& gain)
{
	detail::require_row_vector(raw.shape(), gain.shape(), "wn_forward");
	const Var<Scalar> norm = sqrt(row_sum(mul(raw, raw)));
	if ((norm.value().data() == Scalar(0)).any()) throw DomainError("wn_forward: zero row");
	return mul_rows(div_rows(raw, norm), gain);
}

/// g_c * (W_c - mean) / ||W_c - mean||
template <typename Scalar>
Var<Scalar> cwn_forward(const Var<Scalar>& raw, const Var<Scalar>& gain)
{
	detail::require_row_vector(raw.shape(), gain.shape(), "cwn_forward");
	const Var<Scalar> centered = sub_rows(raw, row_mean(raw));
	const Var<Scalar> norm = sqrt(row_sum(mul(centered, centered)));
	if ((norm.value().data() == Scalar(0)).any()) throw DomainError("cwn_forward: constant row");
	return mul_rows(div_rows(centered, norm), gain);
}

/// Row norms (WN) or centered row norms (CWN); used to initialize gains so
/// the initial forward pass matches the unreparameterized weight.
template <typename Scalar>
Tensor<Scalar> initial_gain(const Tensor<Scalar>& raw, Reparam kind)
{
	Eigen::ArrayXXd w = raw.matrix().template cast<double>().array();
	if (kind == Reparam::CWN) w.colwise() -= w.rowwise().mean().eval();
	const Eigen::ArrayXd n = w.square().rowwise().sum().sqrt();
	return Tensor<Scalar>({raw.rows()}, n.template cast<Scalar>().eval());
}

// ---------------------------------------------------------------------------
// Projected gradient descent on the constraint set
//   sum_j W_hat[c,j] = 0,  sum_j W_hat[c,j]^2 = I.

enum class PgdVariant { ExactProject, Lagrangian };

/// Standardize each row with population variance and no eps.
template <typename Scalar>
Tensor<Scalar> project_rows(const Tensor<Scalar>& w)
{
	Eigen::ArrayXXd a = w.matrix().template cast<double>().array();
	a.colwise() -= a.rowwise().mean().eval();
	const Eigen::ArrayXd sd = a.square().rowwise().mean().sqrt();
	if (!(sd > 0.0).all()) throw DomainError("pgd_step: degenerate row after step");
	a.colwise() /= sd;
	Tensor<Scalar> out(w.shape());
	out.matrix() = a.matrix().template cast<Scalar>();
	return out;
}

template <typename Scalar>
Tensor<Scalar> pgd_step(const Tensor<Scalar>& w_hat, const Tensor<Scalar>& grad, double lr, PgdVariant variant)
{
	if (w_hat.shape() != grad.shape()) throw ShapeError("pgd_step: weight/gradient shape mismatch");
	detail::require_fan_in(w_hat, "pgd_step");
	const double I = static_cast<double>(w_hat.cols());
	const Eigen::ArrayXXd hat = w_hat.matrix().template cast<double>().array();
	const Eigen::ArrayXXd g = grad.matrix().template cast<double>().array();
	const double tol = 1e-8 * std::max(1.0, I);
	if ((hat.rowwise().sum().abs() > tol).any() || ((hat.square().rowwise().sum() - I).abs() > tol).any())
		throw DomainError("pgd_step: rows violate the zero-mean / sum-of-squares = I constraint");

	if (variant == PgdVariant::ExactProject) {
		Tensor<Scalar> stepped(w_hat.shape());
		stepped.matrix() = (hat - lr * g).matrix().template cast<Scalar>();
		return project_rows(stepped);
	}
	// First-order expansion of the projection: remove the components of the
	// gradient along W_hat and along the all-ones direction.
	const Eigen::ArrayXd along_w = (hat * g).rowwise().sum() / I;
	const Eigen::ArrayXd along_one = g.rowwise().sum() / I;
	Eigen::ArrayXXd tangent = g - hat.colwise() * along_w;
	tangent.colwise() -= along_one;
	Tensor<Scalar> out(w_hat.shape());
	out.matrix() = (hat - lr * tangent).matrix().template cast<Scalar>();
	return out;
}

} // namespace wsbcn
