#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "wsbcn/standardize.hpp"
#include "wsbcn/weight_reparam.hpp"

namespace wsbcn {

// ---------------------------------------------------------------------------
// StatDiff

/// Per group: population std of the channel means divided by the mean of the
/// channel stds. Channels are split into `groups` contiguous equal groups.
inline std::vector<double> statdiff(const Eigen::ArrayXd& channel_means, const Eigen::ArrayXd& channel_stds,
                                    Index groups)
{
	const Index C = channel_means.size();
	if (channel_stds.size() != C) throw ShapeError("statdiff: means and stds differ in length");
	if (C == 0 || groups < 1 || C % groups != 0)
		throw ShapeError("statdiff: " + std::to_string(groups) + " groups do not divide " + std::to_string(C) +
		                 " channels");
	if ((channel_stds < 0.0).any()) throw DomainError("statdiff: negative channel std");
	const Index per = C / groups;
	std::vector<double> out(static_cast<std::size_t>(groups));
	for (Index g = 0; g < groups; ++g) {
		const auto m = channel_means.segment(g * per, per);
		const double denom = channel_stds.segment(g * per, per).mean();
		if (!(denom > 0.0)) throw DomainError("statdiff: mean of channel stds is zero");
		out[static_cast<std::size_t>(g)] = std::sqrt((m - m.mean()).square().mean()) / denom;
	}
	return out;
}

/// Per-channel mean and std of a [B,C,H,W] tensor over batch and space.
template <typename Scalar>
std::pair<Eigen::ArrayXd, Eigen::ArrayXd> channel_moments(const Tensor<Scalar>& x)
{
	const auto st = group_stats(x, GroupLayout::per_channel(x.shape()));
	const Index C = x.dim(1);
	Eigen::ArrayXd m(C), s(C);
	for (Index c = 0; c < C; ++c) {
		m[c] = st.mean[static_cast<std::size_t>(c)];
		s[c] = std::sqrt(st.var[static_cast<std::size_t>(c)]);
	}
	return {m, s};
}

/// Running per-channel means and stds (EMA), read out once per epoch.
struct ChannelStatTracker {
	double momentum = 0.1;
	Eigen::ArrayXd mean, stddev;
	bool initialized = false;

	void update(const Eigen::ArrayXd& m, const Eigen::ArrayXd& s)
	{
		if (!initialized) {
			mean = m;
			stddev = s;
			initialized = true;
			return;
		}
		mean = (1.0 - momentum) * mean + momentum * m;
		stddev = (1.0 - momentum) * stddev + momentum * s;
	}
};

// ---------------------------------------------------------------------------
// Gradient-reduction terms

/// One layer at one step. Terms are averaged over output channels; residuals
/// are the largest per-row residual relative to the row's ||grad_w_hat||^2.
struct DiagnosticsRecord {
	std::string layer;
	long step = 0;
	double term_ws = 0.0;
	double term_mean = 0.0;
	double term_total = 0.0;
	double residual_r1 = 0.0;
	double residual_r2 = 0.0;
	std::vector<double> statdiff;
	double underrep_rate = 0.0;

	/// term_ws / (term_ws + term_mean + term_total), 0 for a zero gradient.
	double ws_fraction() const
	{
		const double total = term_ws + term_mean + term_total;
		return total > 0.0 ? term_ws / total : 0.0;
	}
};

/// The three quantities whose sum is ||grad_w_hat||^2 per row, with the two
/// identity residuals (r2 is reported times sigma^2, in the units of r1)
///   r1 = |sigma^2 ||g_dot||^2 + <W_hat, g>^2 / I - ||g||^2|
///   r2 = |||g_w||^2 - ||g_dot||^2 + <1, g>^2 / (I sigma^2)|
/// where g = grad wrt W_hat, g_dot from the normalization step and g_w the
/// gradient wrt the raw weight (as produced by autodiff in training).
template <typename Scalar>
DiagnosticsRecord grad_reduction_terms(const StandardizedWeight<Scalar>& sw, const Tensor<Scalar>& grad_w_hat,
                                       const Tensor<Scalar>& grad_w)
{
	if (grad_w_hat.shape() != sw.standardized.shape() || grad_w.shape() != sw.raw.shape())
		throw ShapeError("grad_reduction_terms: gradient shapes do not match the weight");
	const Index O = sw.out_channels();
	const double I = static_cast<double>(sw.fan_in());
	const Eigen::ArrayXXd hat = sw.standardized.matrix().template cast<double>().array();
	const Eigen::ArrayXXd g = grad_w_hat.matrix().template cast<double>().array();
	const Eigen::ArrayXXd gw = grad_w.matrix().template cast<double>().array();
	const Eigen::ArrayXXd gdot =
	    ws_backward_centered(sw.standardized, grad_w_hat, sw.row_std).matrix().template cast<double>().array();
	const Eigen::ArrayXd var = sw.row_std.square();

	const Eigen::ArrayXd dot_w = (hat * g).rowwise().sum();
	const Eigen::ArrayXd dot_1 = g.rowwise().sum();
	const Eigen::ArrayXd g2 = g.square().rowwise().sum();
	const Eigen::ArrayXd gdot2 = gdot.square().rowwise().sum();
	const Eigen::ArrayXd gw2 = gw.square().rowwise().sum();

	DiagnosticsRecord r;
	r.term_ws = (dot_w.square() / I).mean();
	r.term_mean = (dot_1.square() / I).mean();
	r.term_total = (var * gw2).mean();
	for (Index c = 0; c < O; ++c) {
		const double scale = std::max(g2[c], 1e-300);
		if (g2[c] == 0.0) continue;
		const double r1 = std::abs(var[c] * gdot2[c] + dot_w[c] * dot_w[c] / I - g2[c]);
		const double r2 = std::abs(gw2[c] - gdot2[c] + dot_1[c] * dot_1[c] / (I * var[c])) * var[c];
		r.residual_r1 = std::max(r.residual_r1, r1 / scale);
		r.residual_r2 = std::max(r.residual_r2, r2 / scale);
	}
	return r;
}

/// Same, with the raw-weight gradient from the analytic formula.
template <typename Scalar>
DiagnosticsRecord grad_reduction_terms(const StandardizedWeight<Scalar>& sw, const Tensor<Scalar>& grad_w_hat)
{
	return grad_reduction_terms(sw, grad_w_hat, ws_backward_analytic(sw.standardized, grad_w_hat, sw.row_std));
}

// ---------------------------------------------------------------------------
// Hessian checks

/// Central differences of a gradient function: column j is
/// (grad(x + h e_j) - grad(x - h e_j)) / 2h.
inline Eigen::MatrixXd hessian_fd(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad,
                                  const Eigen::VectorXd& x, double h = 1e-4)
{
	if (!(h > 0.0)) throw DomainError("hessian_fd: step must be positive");
	const Index n = x.size();
	Eigen::MatrixXd H(n, n);
	Eigen::VectorXd probe = x;
	for (Index j = 0; j < n; ++j) {
		probe[j] = x[j] + h;
		const Eigen::VectorXd up = grad(probe);
		probe[j] = x[j] - h;
		const Eigen::VectorXd down = grad(probe);
		probe[j] = x[j];
		if (!up.allFinite() || !down.allFinite()) throw NumericalError("hessian_fd: non-finite gradient");
		H.col(j) = (up - down) / (2.0 * h);
	}
	return H;
}

/// H = P H_dot P with P = I - 11^T / n: the Hessian after row centering.
inline Eigen::MatrixXd centered_hessian(const Eigen::MatrixXd& h_dot)
{
	const Index n = h_dot.rows();
	const Eigen::MatrixXd P = Eigen::MatrixXd::Identity(n, n) - Eigen::MatrixXd::Constant(n, n, 1.0 / n);
	return P * h_dot * P;
}

struct HessianReport {
	Index fan_in = 0;
	double max_row_sum = 0.0;  // max |sum_j H_ij|
	double max_col_sum = 0.0;
	double total_sum = 0.0;    // sum_ij H_ij
	double frob2_h = 0.0;      // ||H||_F^2
	double frob2_h_dot = 0.0;
	double total_sum_h_dot = 0.0;
	double bound = 0.0;        // ||H_dot||_F^2 - (sum H_dot)^2 / I^2
	double relation_residual = 0.0;  // max |H - P H_dot P|

	double inequality_slack() const { return bound - frob2_h; }
};

inline HessianReport hessian_report(const Eigen::MatrixXd& h, const Eigen::MatrixXd& h_dot)
{
	if (h.rows() != h.cols() || h.rows() != h_dot.rows() || h_dot.rows() != h_dot.cols())
		throw ShapeError("hessian_report: expected two square matrices of equal size");
	HessianReport r;
	r.fan_in = h.rows();
	const double I = static_cast<double>(r.fan_in);
	r.max_row_sum = h.rowwise().sum().cwiseAbs().maxCoeff();
	r.max_col_sum = h.colwise().sum().cwiseAbs().maxCoeff();
	r.total_sum = h.sum();
	r.frob2_h = h.squaredNorm();
	r.frob2_h_dot = h_dot.squaredNorm();
	r.total_sum_h_dot = h_dot.sum();
	r.bound = r.frob2_h_dot - r.total_sum_h_dot * r.total_sum_h_dot / (I * I);
	r.relation_residual = (h - centered_hessian(h_dot)).cwiseAbs().maxCoeff();
	return r;
}

/// L(W_dot) = ||W_dot||^2 / 2 seen through the centering map: H_dot = identity
/// and H = I - 11^T / I, both in closed form.
inline HessianReport quadratic_toy_hessian(Index fan_in)
{
	if (fan_in < 2) throw ShapeError("quadratic_toy_hessian: need at least 2 weights");
	const Eigen::MatrixXd h_dot = Eigen::MatrixXd::Identity(fan_in, fan_in);
	const Eigen::MatrixXd h = h_dot - Eigen::MatrixXd::Constant(fan_in, fan_in, 1.0 / static_cast<double>(fan_in));
	return hessian_report(h, h_dot);
}

/// A smooth conv -> layer norm -> pooled linear -> cross-entropy network,
/// small enough for finite-difference Hessians. One output-channel row of
/// the conv weight is the variable; the rest is fixed.
struct TinyConvNet {
	Tensord input;       // [B, Cin, H, W]
	Tensord weight;      // [O, Cin, k, k]
	Tensord probe;       // [B, O, H, W] fixed multiplier after the norm
	Tensord fc;          // [classes, O]
	std::vector<int> labels;
	Index row = 0;

	static TinyConvNet make(std::uint64_t seed, Index in_channels = 1, Index kernel = 3, Index out_channels = 3)
	{
		std::mt19937_64 rng(seed);
		std::normal_distribution<double> n01(0.0, 1.0);
		auto fill = [&](Shape s) {
			Tensord t(std::move(s));
			for (Index i = 0; i < t.size(); ++i) t[i] = n01(rng);
			return t;
		};
		TinyConvNet net;
		const Index B = 2, H = 5, W = 5, classes = 3;
		net.input = fill({B, in_channels, H, W});
		net.weight = fill({out_channels, in_channels, kernel, kernel});
		net.probe = fill({B, out_channels, H, W});
		net.fc = fill({classes, out_channels});
		for (Index b = 0; b < B; ++b) net.labels.push_back(static_cast<int>(rng() % classes));
		net.row = static_cast<Index>(rng() % static_cast<std::uint64_t>(out_channels));
		return net;
	}

	Index fan_in() const { return weight.cols(); }

	Eigen::VectorXd row_values() const { return weight.matrix().row(row).transpose(); }

	/// Loss as a function of the chosen row. With `center` the row enters the
	/// conv as row - mean(row) (a function of W); without it the row is used
	/// as given (a function of W_dot).
	double loss(const Eigen::VectorXd& values, bool center) const
	{
		Tensord r = row_tensor(values);
		Tape<double> tape;
		return build(tape, tape.leaf(r), center).value()[0];
	}

	Eigen::VectorXd row_gradient(const Eigen::VectorXd& values, bool center) const
	{
		Tensord r = row_tensor(values);
		r.set_requires_grad(true);
		Tape<double> tape;
		backward(build(tape, tape.leaf(r), center));
		return Eigen::Map<const Eigen::VectorXd>(r.grad().data(), fan_in());
	}

private:
	Tensord row_tensor(const Eigen::VectorXd& values) const
	{
		if (values.size() != fan_in()) throw ShapeError("TinyConvNet: row has wrong length");
		Tensord r({1, fan_in()});
		for (Index j = 0; j < fan_in(); ++j) r[j] = values[j];
		return r;
	}

	Var<double> build(Tape<double>& tape, Var<double> row_var, bool center) const
	{
		const Index I = fan_in(), O = weight.rows();
		if (center) row_var = sub_rows(row_var, row_mean(row_var));
		// Splice the variable row into the fixed weight: others + select * tile(row).
		Tensord others = weight.reshaped({O, I});
		Tensord select = Tensord::zeros({O, I});
		for (Index j = 0; j < I; ++j) {
			others.matrix()(row, j) = 0.0;
			select.matrix()(row, j) = 1.0;
		}
		const Var<double> tiled = linear(tape.constant(Tensord::ones({O, 1})), reshape(row_var, {I, 1}));
		const Var<double> w =
		    reshape(add(tape.constant(std::move(others)), mul(tape.constant(std::move(select)), tiled)), weight.shape());
		const Var<double> y = conv2d(tape.constant(input), w, 1, 1);
		const Var<double> n = standardize(y, GroupLayout::per_sample_group(y.shape(), 1), 1e-5).out;
		const Var<double> pooled = global_avg_pool(mul(n, tape.constant(probe)));
		return softmax_cross_entropy(linear(pooled, tape.constant(fc)), labels);
	}
};

/// Finite-difference Hessians of a tiny network wrt one weight row, through
/// the centering map (H) and directly (H_dot), at W_dot = W - mean(W).
inline HessianReport hessian_checks(const TinyConvNet& net, double h = 1e-4)
{
	Eigen::VectorXd w = net.row_values();
	const Eigen::VectorXd w_dot = w.array() - w.mean();
	const Eigen::MatrixXd H =
	    hessian_fd([&](const Eigen::VectorXd& v) { return net.row_gradient(v, true); }, w, h);
	const Eigen::MatrixXd H_dot =
	    hessian_fd([&](const Eigen::VectorXd& v) { return net.row_gradient(v, false); }, w_dot, h);
	return hessian_report(H, H_dot);
}

// ---------------------------------------------------------------------------
// Statistics propagation and underrepresentation

struct PropagationReport {
	double statdiff_ws = 0.0;
	double statdiff_raw = 0.0;
	double mean_spread_ws = 0.0;   // std of output channel means
	double mean_spread_raw = 0.0;
	double std_spread_ws = 0.0;    // std of output channel stds
	double std_spread_raw = 0.0;
};

/// Convolves an input whose channels share statistics with the raw weight and
/// with its standardized version, and compares how much the output channels'
/// statistics differ (one group spanning all output channels).
template <typename Scalar>
PropagationReport channel_stat_propagation(const Tensor<Scalar>& raw_weight, const Tensor<Scalar>& input, double eps,
                                           Index stride = 1, Index pad = 1)
{
	Tape<Scalar> tape;
	const auto x = tape.constant(input);
	const auto y_raw = conv2d(x, tape.constant(raw_weight), stride, pad).value();
	const auto y_ws = conv2d(x, tape.constant(ws_forward(raw_weight, eps)), stride, pad).value();
	auto spread = [](const Eigen::ArrayXd& a) { return std::sqrt((a - a.mean()).square().mean()); };
	PropagationReport r;
	const auto [m_raw, s_raw] = channel_moments(y_raw);
	const auto [m_ws, s_ws] = channel_moments(y_ws);
	r.statdiff_raw = statdiff(m_raw, s_raw, 1)[0];
	r.statdiff_ws = statdiff(m_ws, s_ws, 1)[0];
	r.mean_spread_raw = spread(m_raw);
	r.mean_spread_ws = spread(m_ws);
	r.std_spread_raw = spread(s_raw);
	r.std_spread_ws = spread(s_ws);
	return r;
}

/// Fraction of channels whose `percentile` activation (over batch and space)
/// is at or below `threshold`: channels that are (almost) always switched off
/// by a following ReLU.
template <typename Scalar>
double underrep_rate(const Tensor<Scalar>& pre_relu, double percentile = 0.95, double threshold = 0.0)
{
	detail::require_rank(pre_relu.shape(), 4, "underrep_rate", "activations");
	if (!(percentile >= 0.0 && percentile <= 1.0)) throw DomainError("underrep_rate: percentile outside [0, 1]");
	const Index B = pre_relu.dim(0), C = pre_relu.dim(1), HW = pre_relu.dim(2) * pre_relu.dim(3);
	if (B * HW == 0) throw DomainError("underrep_rate: empty sample");
	std::vector<double> v(static_cast<std::size_t>(B * HW));
	Index counted = 0;
	for (Index c = 0; c < C; ++c) {
		std::size_t k = 0;
		for (Index b = 0; b < B; ++b)
			for (Index i = 0; i < HW; ++i) v[k++] = static_cast<double>(pre_relu[(b * C + c) * HW + i]);
		const auto rank = static_cast<std::size_t>(std::ceil(percentile * static_cast<double>(v.size() - 1)));
		std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(rank), v.end());
		if (v[rank] <= threshold) ++counted;
	}
	return static_cast<double>(counted) / static_cast<double>(C);
}

/// Mean over layers of min row L1 norm / mean row L1 norm of each weight.
template <typename Scalar>
double weight_singularity_ratio(const std::vector<const Tensor<Scalar>*>& weights)
{
	if (weights.empty()) throw DomainError("weight_singularity_ratio: no layers");
	double acc = 0.0;
	for (const auto* w : weights) {
		const Eigen::ArrayXd l1 = w->matrix().template cast<double>().array().abs().rowwise().sum();
		const double avg = l1.mean();
		if (!(avg > 0.0)) throw DomainError("weight_singularity_ratio: all-zero weight");
		acc += l1.minCoeff() / avg;
	}
	return acc / static_cast<double>(weights.size());
}

// ---------------------------------------------------------------------------
// Singularity grid

/// Final accuracies over a grid of (sigma_mu, sigma_sigma). Cell (0, 0) is
/// the batch-norm baseline.
struct SingularityGrid {
	std::vector<double> sigma_mu;
	std::vector<double> sigma_sigma;
	std::vector<double> accuracy;   // row-major [mu][sigma]
	std::vector<char> failed;
	std::vector<long> abort_step;   // -1 when training completed
	double failure_threshold = 0.0;

	std::size_t index(std::size_t i, std::size_t j) const { return i * sigma_sigma.size() + j; }
	double at(std::size_t i, std::size_t j) const { return accuracy.at(index(i, j)); }
};

} // namespace wsbcn
