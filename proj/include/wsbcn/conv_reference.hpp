#pragma once

#include "wsbcn/ops.hpp"

namespace wsbcn {

/// Direct nested-loop cross-correlation. Accumulates over (cin, kh, kw) in
/// the same order as the im2col path, so results agree bit for bit.
template <typename Scalar>
Tensor<Scalar> conv2d_reference(const Tensor<Scalar>& x, const Tensor<Scalar>& w, Index stride = 1, Index pad = 0)
{
	const ConvGeometry g = conv_geometry(x.shape(), w.shape(), stride, pad);
	Tensor<Scalar> out({g.batch, g.out_channels, g.out_h, g.out_w});
	for (Index b = 0; b < g.batch; ++b)
		for (Index o = 0; o < g.out_channels; ++o)
			for (Index oh = 0; oh < g.out_h; ++oh)
				for (Index ow = 0; ow < g.out_w; ++ow) {
					Scalar acc = 0;
					for (Index c = 0; c < g.in_channels; ++c)
						for (Index i = 0; i < g.kernel_h; ++i)
							for (Index j = 0; j < g.kernel_w; ++j) {
								const Index ih = oh * stride - pad + i, iw = ow * stride - pad + j;
								if (ih < 0 || ih >= g.height || iw < 0 || iw >= g.width) continue;
								acc += w[((o * g.in_channels + c) * g.kernel_h + i) * g.kernel_w + j] *
								       x[((b * g.in_channels + c) * g.height + ih) * g.width + iw];
							}
					out[((b * g.out_channels + o) * g.out_h + oh) * g.out_w + ow] = acc;
				}
	return out;
}

} // namespace wsbcn
