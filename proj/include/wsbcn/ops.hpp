#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "wsbcn/errors.hpp"
#include "wsbcn/tape.hpp"
#include "wsbcn/tensor.hpp"

namespace wsbcn {

namespace detail {

template <typename Scalar>
Tape<Scalar>& common_tape(const Var<Scalar>& a, const Var<Scalar>& b)
{
	if (&a.tape() != &b.tape()) throw StateError("operands live on different tapes");
	return a.tape();
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* op)
{
	if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

inline void require_rank(const Shape& s, std::size_t rank, const char* op, const char* what)
{
	if (s.size() != rank)
		throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
		                 shape_str(s));
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b)
{
	auto& t = detail::common_tape(a, b);
	detail::require_same_shape(a.shape(), b.shape(), "add");
	Tensor<Scalar> out(a.shape(), (a.value().data() + b.value().data()).eval());
	const auto ia = a.id(), ib = b.id();
	return t.record("add", std::move(out), {ia, ib}, [ia, ib](Tape<Scalar>& tp, const auto& g) {
		if (tp.needs_grad(ia)) tp.grad_acc(ia) += g;
		if (tp.needs_grad(ib)) tp.grad_acc(ib) += g;
	});
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b)
{
	auto& t = detail::common_tape(a, b);
	detail::require_same_shape(a.shape(), b.shape(), "sub");
	Tensor<Scalar> out(a.shape(), (a.value().data() - b.value().data()).eval());
	const auto ia = a.id(), ib = b.id();
	return t.record("sub", std::move(out), {ia, ib}, [ia, ib](Tape<Scalar>& tp, const auto& g) {
		if (tp.needs_grad(ia)) tp.grad_acc(ia) += g;
		if (tp.needs_grad(ib)) tp.grad_acc(ib) -= g;
	});
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b)
{
	auto& t = detail::common_tape(a, b);
	detail::require_same_shape(a.shape(), b.shape(), "mul");
	Tensor<Scalar> out(a.shape(), (a.value().data() * b.value().data()).eval());
	const auto ia = a.id(), ib = b.id();
	return t.record("mul", std::move(out), {ia, ib}, [ia, ib](Tape<Scalar>& tp, const auto& g) {
		if (tp.needs_grad(ia)) tp.grad_acc(ia) += g * tp.value(ib).data();
		if (tp.needs_grad(ib)) tp.grad_acc(ib) += g * tp.value(ia).data();
	});
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s)
{
	Tensor<Scalar> out(a.shape(), (a.value().data() * s).eval());
	const auto ia = a.id();
	return a.tape().record("scale", std::move(out), {ia},
	                       [ia, s](Tape<Scalar>& tp, const auto& g) { tp.grad_acc(ia) += g * s; });
}

template <typename Scalar>
Var<Scalar> add_scalar(const Var<Scalar>& a, Scalar s)
{
	Tensor<Scalar> out(a.shape(), (a.value().data() + s).eval());
	const auto ia = a.id();
	return a.tape().record("add_scalar", std::move(out), {ia},
	                       [ia](Tape<Scalar>& tp, const auto& g) { tp.grad_acc(ia) += g; });
}

template <typename Scalar>
Var<Scalar> sqrt(const Var<Scalar>& a)
{
	if ((a.value().data() < Scalar(0)).any()) throw DomainError("sqrt of negative value");
	Tensor<Scalar> out(a.shape(), a.value().data().sqrt().eval());
	const auto ia = a.id();
	typename Tensor<Scalar>::Storage root = out.data();
	return a.tape().record("sqrt", std::move(out), {ia}, [ia, root = std::move(root)](Tape<Scalar>& tp, const auto& g) {
		tp.grad_acc(ia) += g / (Scalar(2) * root);
	});
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& a)
{
	Tensor<Scalar> out(a.shape(), a.value().data().max(Scalar(0)).eval());
	const auto ia = a.id();
	return a.tape().record("relu", std::move(out), {ia}, [ia](Tape<Scalar>& tp, const auto& g) {
		tp.grad_acc(ia) += (tp.value(ia).data() > Scalar(0)).select(g, Scalar(0));
	});
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& a, Shape shape)
{
	Tensor<Scalar> out = a.value().reshaped(std::move(shape));
	const auto ia = a.id();
	return a.tape().record("reshape", std::move(out), {ia},
	                       [ia](Tape<Scalar>& tp, const auto& g) { tp.grad_acc(ia) += g; });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a)
{
	double acc = 0.0;
	const auto& d = a.value().data();
	for (Index i = 0; i < d.size(); ++i) acc += static_cast<double>(d[i]);
	Tensor<Scalar> out({1}, {static_cast<Scalar>(acc)});
	const auto ia = a.id();
	return a.tape().record("sum", std::move(out), {ia},
	                       [ia](Tape<Scalar>& tp, const auto& g) { tp.grad_acc(ia) += g[0]; });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a)
{
	return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.size()));
}

/// Per-row sums of `a` viewed as rows x cols (leading dimension = rows).
template <typename Scalar>
Var<Scalar> row_sum(const Var<Scalar>& a)
{
	const Index rows = a.value().rows(), cols = a.value().cols();
	Tensor<Scalar> out({rows});
	const Scalar* p = a.value().ptr();
	for (Index r = 0; r < rows; ++r) {
		double acc = 0.0;
		for (Index c = 0; c < cols; ++c) acc += static_cast<double>(p[r * cols + c]);
		out[r] = static_cast<Scalar>(acc);
	}
	const auto ia = a.id();
	return a.tape().record("row_sum", std::move(out), {ia}, [ia, rows, cols](Tape<Scalar>& tp, const auto& g) {
		auto& ga = tp.grad_acc(ia);
		for (Index r = 0; r < rows; ++r) ga.segment(r * cols, cols) += g[r];
	});
}

template <typename Scalar>
Var<Scalar> row_mean(const Var<Scalar>& a)
{
	return scale(row_sum(a), Scalar(1) / static_cast<Scalar>(a.value().cols()));
}

namespace detail {

inline void require_row_vector(const Shape& a, const Shape& v, const char* op)
{
	if (v.size() != 1 || a.empty() || v[0] != a[0])
		throw ShapeError(std::string(op) + ": expected a length-" + (a.empty() ? "?" : std::to_string(a[0])) +
		                 " vector, got " + shape_str(v));
}

} // namespace detail

/// out[r, :] = a[r, :] - v[r]
template <typename Scalar>
Var<Scalar> sub_rows(const Var<Scalar>& a, const Var<Scalar>& v)
{
	auto& t = detail::common_tape(a, v);
	detail::require_row_vector(a.shape(), v.shape(), "sub_rows");
	const Index rows = a.value().rows(), cols = a.value().cols();
	Tensor<Scalar> out = a.value();
	out.clear_grad();
	out.set_requires_grad(false);
	for (Index r = 0; r < rows; ++r) out.data().segment(r * cols, cols) -= v.value()[r];
	const auto ia = a.id(), iv = v.id();
	return t.record("sub_rows", std::move(out), {ia, iv}, [ia, iv, rows, cols](Tape<Scalar>& tp, const auto& g) {
		if (tp.needs_grad(ia)) tp.grad_acc(ia) += g;
		if (tp.needs_grad(iv)) {
			auto& gv = tp.grad_acc(iv);
			for (Index r = 0; r < rows; ++r) gv[r] -= g.segment(r * cols, cols).sum();
		}
	});
}

/// out[r, :] = a[r, :] * v[r]
template <typename Scalar>
Var<Scalar> mul_rows(const Var<Scalar>& a, const Var<Scalar>& v)
{
	auto& t = detail::common_tape(a, v);
	detail::require_row_vector(a.shape(), v.shape(), "mul_rows");
	const Index rows = a.value().rows(), cols = a.value().cols();
	Tensor<Scalar> out(a.shape());
	for (Index r = 0; r < rows; ++r)
		out.data().segment(r * cols, cols) = a.value().data().segment(r * cols, cols) * v.value()[r];
	const auto ia = a.id(), iv = v.id();
	return t.record("mul_rows", std::move(out), {ia, iv}, [ia, iv, rows, cols](Tape<Scalar>& tp, const auto& g) {
		const auto& av = tp.value(ia).data();
		const auto& vv = tp.value(iv).data();
		if (tp.needs_grad(ia)) {
			auto& ga = tp.grad_acc(ia);
			for (Index r = 0; r < rows; ++r) ga.segment(r * cols, cols) += g.segment(r * cols, cols) * vv[r];
		}
		if (tp.needs_grad(iv)) {
			auto& gv = tp.grad_acc(iv);
			for (Index r = 0; r < rows; ++r)
				gv[r] += (g.segment(r * cols, cols) * av.segment(r * cols, cols)).sum();
		}
	});
}

/// out[r, :] = a[r, :] / v[r]
template <typename Scalar>
Var<Scalar> div_rows(const Var<Scalar>& a, const Var<Scalar>& v)
{
	auto& t = detail::common_tape(a, v);
	detail::require_row_vector(a.shape(), v.shape(), "div_rows");
	if ((v.value().data() == Scalar(0)).any()) throw DomainError("div_rows: division by zero");
	const Index rows = a.value().rows(), cols = a.value().cols();
	Tensor<Scalar> out(a.shape());
	for (Index r = 0; r < rows; ++r)
		out.data().segment(r * cols, cols) = a.value().data().segment(r * cols, cols) / v.value()[r];
	const auto ia = a.id(), iv = v.id();
	return t.record("div_rows", std::move(out), {ia, iv}, [ia, iv, rows, cols](Tape<Scalar>& tp, const auto& g) {
		const auto& av = tp.value(ia).data();
		const auto& vv = tp.value(iv).data();
		if (tp.needs_grad(ia)) {
			auto& ga = tp.grad_acc(ia);
			for (Index r = 0; r < rows; ++r) ga.segment(r * cols, cols) += g.segment(r * cols, cols) / vv[r];
		}
		if (tp.needs_grad(iv)) {
			auto& gv = tp.grad_acc(iv);
			for (Index r = 0; r < rows; ++r)
				gv[r] -= (g.segment(r * cols, cols) * av.segment(r * cols, cols)).sum() / (vv[r] * vv[r]);
		}
	});
}

// ---------------------------------------------------------------------------
// Convolution

struct ConvGeometry {
	Index batch, in_channels, height, width;
	Index out_channels, kernel_h, kernel_w;
	Index stride, pad;
	Index out_h, out_w;

	Index patch() const { return in_channels * kernel_h * kernel_w; }
	Index positions() const { return out_h * out_w; }
};

inline ConvGeometry conv_geometry(const Shape& x, const Shape& w, Index stride, Index pad)
{
	detail::require_rank(x, 4, "conv2d", "input");
	detail::require_rank(w, 4, "conv2d", "weight");
	if (x[1] != w[1])
		throw ShapeError("conv2d: input has " + std::to_string(x[1]) + " channels but weight expects " +
		                 std::to_string(w[1]));
	if (stride < 1 || pad < 0) throw ShapeError("conv2d: stride must be >= 1 and pad >= 0");
	if (w[2] > x[2] + 2 * pad || w[3] > x[3] + 2 * pad)
		throw ShapeError("conv2d: kernel " + std::to_string(w[2]) + "x" + std::to_string(w[3]) +
		                 " larger than padded input " + std::to_string(x[2] + 2 * pad) + "x" +
		                 std::to_string(x[3] + 2 * pad));
	ConvGeometry g{x[0], x[1], x[2], x[3], w[0], w[2], w[3], stride, pad, 0, 0};
	g.out_h = (g.height + 2 * pad - g.kernel_h) / stride + 1;
	g.out_w = (g.width + 2 * pad - g.kernel_w) / stride + 1;
	return g;
}

namespace detail {

/// cols is K x P (K = Cin*kh*kw, P = out_h*out_w) for one sample.
template <typename Scalar>
void im2col(const ConvGeometry& g, const Scalar* x, Scalar* cols)
{
	const Index P = g.positions();
	Index k = 0;
	for (Index c = 0; c < g.in_channels; ++c)
		for (Index i = 0; i < g.kernel_h; ++i)
			for (Index j = 0; j < g.kernel_w; ++j, ++k) {
				Scalar* row = cols + k * P;
				const Scalar* plane = x + c * g.height * g.width;
				for (Index oh = 0; oh < g.out_h; ++oh) {
					const Index ih = oh * g.stride - g.pad + i;
					for (Index ow = 0; ow < g.out_w; ++ow) {
						const Index iw = ow * g.stride - g.pad + j;
						row[oh * g.out_w + ow] =
						    (ih >= 0 && ih < g.height && iw >= 0 && iw < g.width) ? plane[ih * g.width + iw] : Scalar(0);
					}
				}
			}
}

template <typename Scalar>
void col2im_add(const ConvGeometry& g, const Scalar* cols, Scalar* dx)
{
	const Index P = g.positions();
	Index k = 0;
	for (Index c = 0; c < g.in_channels; ++c)
		for (Index i = 0; i < g.kernel_h; ++i)
			for (Index j = 0; j < g.kernel_w; ++j, ++k) {
				const Scalar* row = cols + k * P;
				Scalar* plane = dx + c * g.height * g.width;
				for (Index oh = 0; oh < g.out_h; ++oh) {
					const Index ih = oh * g.stride - g.pad + i;
					if (ih < 0 || ih >= g.height) continue;
					for (Index ow = 0; ow < g.out_w; ++ow) {
						const Index iw = ow * g.stride - g.pad + j;
						if (iw >= 0 && iw < g.width) plane[ih * g.width + iw] += row[oh * g.out_w + ow];
					}
				}
			}
}

} // namespace detail

/// Bias-free cross-correlation via im2col and a fixed-order matrix product:
/// every output accumulates over (cin, kh, kw) in row-major order.
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& w, Index stride = 1, Index pad = 0)
{
	auto& t = detail::common_tape(x, w);
	const ConvGeometry g = conv_geometry(x.shape(), w.shape(), stride, pad);
	const Index K = g.patch(), P = g.positions(), O = g.out_channels;
	const Index in_sample = g.in_channels * g.height * g.width;

	typename Tensor<Scalar>::Storage cols(g.batch * K * P);
	Tensor<Scalar> out({g.batch, O, g.out_h, g.out_w});
	const Scalar* wp = w.value().ptr();
	for (Index b = 0; b < g.batch; ++b) {
		Scalar* cb = cols.data() + b * K * P;
		detail::im2col(g, x.value().ptr() + b * in_sample, cb);
		Scalar* ob = out.ptr() + b * O * P;
		for (Index o = 0; o < O; ++o) {
			Scalar* row = ob + o * P;
			for (Index k = 0; k < K; ++k) {
				const Scalar wv = wp[o * K + k];
				const Scalar* crow = cb + k * P;
				for (Index p = 0; p < P; ++p) row[p] += wv * crow[p];
			}
		}
	}

	const auto ix = x.id(), iw = w.id();
	return t.record("conv2d", std::move(out), {ix, iw},
	                [ix, iw, g, cols = std::move(cols)](Tape<Scalar>& tp, const auto& grad) {
		                const Index K = g.patch(), P = g.positions(), O = g.out_channels;
		                const Index in_sample = g.in_channels * g.height * g.width;
		                if (tp.needs_grad(ix)) {
			                auto& gx = tp.grad_acc(ix);
			                const Scalar* wp = tp.value(iw).ptr();
			                std::vector<Scalar> dcols(static_cast<std::size_t>(K * P));
			                for (Index b = 0; b < g.batch; ++b) {
				                std::fill(dcols.begin(), dcols.end(), Scalar(0));
				                const Scalar* gb = grad.data() + b * O * P;
				                for (Index o = 0; o < O; ++o) {
					                const Scalar* grow = gb + o * P;
					                for (Index k = 0; k < K; ++k) {
						                const Scalar wv = wp[o * K + k];
						                Scalar* drow = dcols.data() + k * P;
						                for (Index p = 0; p < P; ++p) drow[p] += wv * grow[p];
					                }
				                }
				                detail::col2im_add(g, dcols.data(), gx.data() + b * in_sample);
			                }
		                }
		                if (tp.needs_grad(iw)) {
			                std::vector<double> dw(static_cast<std::size_t>(O * K), 0.0);
			                std::vector<Scalar> cols_t(static_cast<std::size_t>(P * K));
			                for (Index b = 0; b < g.batch; ++b) {
				                const Scalar* cb = cols.data() + b * K * P;
				                for (Index k = 0; k < K; ++k)
					                for (Index p = 0; p < P; ++p) cols_t[p * K + k] = cb[k * P + p];
				                const Scalar* gb = grad.data() + b * O * P;
				                for (Index o = 0; o < O; ++o) {
					                double* drow = dw.data() + o * K;
					                for (Index p = 0; p < P; ++p) {
						                const double a = gb[o * P + p];
						                const Scalar* crow = cols_t.data() + p * K;
						                for (Index k = 0; k < K; ++k) drow[k] += a * static_cast<double>(crow[k]);
					                }
				                }
			                }
			                auto& gw = tp.grad_acc(iw);
			                for (Index i = 0; i < O * K; ++i) gw[i] += static_cast<Scalar>(dw[static_cast<std::size_t>(i)]);
		                }
	                });
}

// ---------------------------------------------------------------------------
// Pooling, dense, loss

template <typename Scalar>
Var<Scalar> avg_pool2(const Var<Scalar>& x)
{
	detail::require_rank(x.shape(), 4, "avg_pool2", "input");
	const Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
	if (H % 2 || W % 2) throw ShapeError("avg_pool2: spatial dims must be even, got " + shape_str(x.shape()));
	const Index Ho = H / 2, Wo = W / 2;
	Tensor<Scalar> out({B, C, Ho, Wo});
	const Scalar* xp = x.value().ptr();
	for (Index bc = 0; bc < B * C; ++bc)
		for (Index i = 0; i < Ho; ++i)
			for (Index j = 0; j < Wo; ++j) {
				const Scalar* base = xp + bc * H * W + 2 * i * W + 2 * j;
				out[bc * Ho * Wo + i * Wo + j] = (base[0] + base[1] + base[W] + base[W + 1]) * Scalar(0.25);
			}
	const auto ix = x.id();
	return x.tape().record("avg_pool2", std::move(out), {ix}, [ix, B, C, H, W](Tape<Scalar>& tp, const auto& g) {
		auto& gx = tp.grad_acc(ix);
		const Index Ho = H / 2, Wo = W / 2;
		for (Index bc = 0; bc < B * C; ++bc)
			for (Index i = 0; i < Ho; ++i)
				for (Index j = 0; j < Wo; ++j) {
					const Scalar v = g[bc * Ho * Wo + i * Wo + j] * Scalar(0.25);
					const Index base = bc * H * W + 2 * i * W + 2 * j;
					gx[base] += v;
					gx[base + 1] += v;
					gx[base + W] += v;
					gx[base + W + 1] += v;
				}
	});
}

/// [B,C,H,W] -> [B,C]
template <typename Scalar>
Var<Scalar> global_avg_pool(const Var<Scalar>& x)
{
	detail::require_rank(x.shape(), 4, "global_avg_pool", "input");
	const Index B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
	Tensor<Scalar> out({B, C});
	for (Index bc = 0; bc < B * C; ++bc) {
		double acc = 0.0;
		for (Index k = 0; k < HW; ++k) acc += static_cast<double>(x.value()[bc * HW + k]);
		out[bc] = static_cast<Scalar>(acc / static_cast<double>(HW));
	}
	const auto ix = x.id();
	return x.tape().record("global_avg_pool", std::move(out), {ix}, [ix, B, C, HW](Tape<Scalar>& tp, const auto& g) {
		auto& gx = tp.grad_acc(ix);
		const Scalar inv = Scalar(1) / static_cast<Scalar>(HW);
		for (Index bc = 0; bc < B * C; ++bc) gx.segment(bc * HW, HW) += g[bc] * inv;
	});
}

/// x [B,F], w [O,F] -> x w^T [B,O]
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& w)
{
	auto& t = detail::common_tape(x, w);
	detail::require_rank(x.shape(), 2, "linear", "input");
	detail::require_rank(w.shape(), 2, "linear", "weight");
	if (x.dim(1) != w.dim(1))
		throw ShapeError("linear: input features " + std::to_string(x.dim(1)) + " vs weight " + shape_str(w.shape()));
	const Index B = x.dim(0), F = x.dim(1), O = w.dim(0);
	Tensor<Scalar> out({B, O});
	out.matrix().noalias() = x.value().matrix() * w.value().matrix().transpose();
	const auto ix = x.id(), iw = w.id();
	return t.record("linear", std::move(out), {ix, iw}, [ix, iw, B, F, O](Tape<Scalar>& tp, const auto& g) {
		Eigen::Map<const RowMajorMatrix<Scalar>> gm(g.data(), B, O);
		if (tp.needs_grad(ix)) {
			Eigen::Map<RowMajorMatrix<Scalar>> gx(tp.grad_acc(ix).data(), B, F);
			gx.noalias() += gm * tp.value(iw).matrix();
		}
		if (tp.needs_grad(iw)) {
			Eigen::Map<RowMajorMatrix<Scalar>> gw(tp.grad_acc(iw).data(), O, F);
			gw.noalias() += gm.transpose() * tp.value(ix).matrix();
		}
	});
}

/// x [B,O] + b [O]
template <typename Scalar>
Var<Scalar> add_bias(const Var<Scalar>& x, const Var<Scalar>& bias)
{
	auto& t = detail::common_tape(x, bias);
	detail::require_rank(x.shape(), 2, "add_bias", "input");
	if (bias.shape() != Shape{x.dim(1)}) throw ShapeError("add_bias: bias shape " + shape_str(bias.shape()));
	const Index B = x.dim(0), O = x.dim(1);
	Tensor<Scalar> out(x.shape());
	for (Index b = 0; b < B; ++b) out.data().segment(b * O, O) = x.value().data().segment(b * O, O) + bias.value().data();
	const auto ix = x.id(), ib = bias.id();
	return t.record("add_bias", std::move(out), {ix, ib}, [ix, ib, B, O](Tape<Scalar>& tp, const auto& g) {
		if (tp.needs_grad(ix)) tp.grad_acc(ix) += g;
		if (tp.needs_grad(ib)) {
			auto& gb = tp.grad_acc(ib);
			for (Index b = 0; b < B; ++b) gb += g.segment(b * O, O);
		}
	});
}

/// Mean softmax cross-entropy over the batch. logits [B,K], labels in [0,K).
template <typename Scalar>
Var<Scalar> softmax_cross_entropy(const Var<Scalar>& logits, std::span<const int> labels)
{
	detail::require_rank(logits.shape(), 2, "softmax_cross_entropy", "logits");
	const Index B = logits.dim(0), K = logits.dim(1);
	if (static_cast<Index>(labels.size()) != B)
		throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
		                 std::to_string(B));
	for (int y : labels)
		if (y < 0 || y >= K)
			throw DomainError("softmax_cross_entropy: label " + std::to_string(y) + " outside [0," + std::to_string(K) +
			                  ")");
	typename Tensor<Scalar>::Storage probs(B * K);
	double loss = 0.0;
	const Scalar* z = logits.value().ptr();
	for (Index b = 0; b < B; ++b) {
		const Scalar* zb = z + b * K;
		const double zmax = static_cast<double>(*std::max_element(zb, zb + K));
		double s = 0.0;
		for (Index k = 0; k < K; ++k) s += std::exp(static_cast<double>(zb[k]) - zmax);
		for (Index k = 0; k < K; ++k) probs[b * K + k] = static_cast<Scalar>(std::exp(static_cast<double>(zb[k]) - zmax) / s);
		loss += zmax + std::log(s) - static_cast<double>(zb[labels[static_cast<std::size_t>(b)]]);
	}
	Tensor<Scalar> out({1}, {static_cast<Scalar>(loss / static_cast<double>(B))});
	std::vector<int> y(labels.begin(), labels.end());
	const auto il = logits.id();
	return logits.tape().record(
	    "softmax_cross_entropy", std::move(out), {il},
	    [il, B, K, probs = std::move(probs), y = std::move(y)](Tape<Scalar>& tp, const auto& g) {
		    auto& gl = tp.grad_acc(il);
		    const Scalar s = g[0] / static_cast<Scalar>(B);
		    for (Index b = 0; b < B; ++b)
			    for (Index k = 0; k < K; ++k) {
				    const Scalar target = (k == y[static_cast<std::size_t>(b)]) ? Scalar(1) : Scalar(0);
				    gl[b * K + k] += s * (probs[b * K + k] - target);
			    }
	    });
}

} // namespace wsbcn
