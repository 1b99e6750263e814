#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <string>
#include <vector>

#include "wsbcn/data.hpp"
#include "wsbcn/gradcheck.hpp"
#include "wsbcn/metrics.hpp"
#include "wsbcn/model_gradcheck.hpp"
#include "wsbcn/train.hpp"

// Drivers shared by the command-line tool and the acceptance tests.

namespace wsbcn {

// ---------------------------------------------------------------------------
// Data

struct TaskData {
	Dataset train, val;
	ChannelStats stats;  // train-split statistics used for both splits
};

inline TaskData standardized_task(Dataset train, Dataset val)
{
	TaskData t{std::move(train), std::move(val), {}};
	t.stats = channel_stats(t.train);
	standardize(t.train, t.stats);
	standardize(t.val, t.stats);
	return t;
}

/// Train and validation splits drawn from one synthetic stream, so both
/// share the class prototypes.
inline TaskData synthetic_task(std::uint64_t seed, Index n_train, Index n_val, const BlobOptions& opt = {},
                               int classes = 10)
{
	const Dataset all = synth_blobs(seed, n_train + n_val, classes, opt);
	return standardized_task(all.slice(0, n_train), all.slice(n_train, n_val));
}

inline TaskData cifar10_task(const std::filesystem::path& dir, Index n_train, Index n_val)
{
	Dataset train = load_cifar10(dir, true, n_train);
	return standardized_task(std::move(train), load_cifar10(dir, false, n_val));
}

// ---------------------------------------------------------------------------
// Gradient oracle

struct OpCheck {
	std::string op;
	double error = 0.0;
};

/// Autodiff against central differences for every differentiable op, the
/// normalizations, the weight reparameterizations and full models, in 64-bit.
inline std::vector<OpCheck> gradcheck_suite(std::uint64_t seed)
{
	using Vars = std::vector<Var<double>>;
	std::mt19937_64 rng(seed);
	std::uniform_int_distribution<int> dim(2, 4);
	const Index B = dim(rng), C = 4 * (dim(rng) - 1), H = 2 * dim(rng), W = 2 * dim(rng);
	std::vector<OpCheck> out;
	auto check = [&](const std::string& op, const std::vector<Tensord>& in, const GraphFn<double>& fn) {
		out.push_back({op, check_gradients<double>(in, fn, seed)});
	};

	const auto x = random_tensor<double>({B, C, H, W}, rng, 1.5, 0.3);
	const auto w = random_tensor<double>({3, C, 3, 3}, rng);
	check("conv2d", {x, w}, [](const Vars& v) { return conv2d(v[0], v[1], 1, 1); });
	check("conv2d/stride2", {x, w}, [](const Vars& v) { return conv2d(v[0], v[1], 2, 1); });
	check("relu", {x}, [](const Vars& v) { return relu(v[0]); });
	check("avg_pool2", {x}, [](const Vars& v) { return avg_pool2(v[0]); });
	check("global_avg_pool", {x}, [](const Vars& v) { return global_avg_pool(v[0]); });
	const auto feats = random_tensor<double>({B, C}, rng);
	const auto fc = random_tensor<double>({5, C}, rng);
	const auto bias = random_tensor<double>({5}, rng);
	std::vector<int> labels;
	for (Index i = 0; i < B; ++i) labels.push_back(static_cast<int>(rng() % 5));
	check("linear+cross_entropy", {feats, fc, bias},
	      [&](const Vars& v) { return softmax_cross_entropy(add_bias(linear(v[0], v[1]), v[2]), labels); });

	// Normalizations; states live here so tape leaves on gamma/beta stay valid.
	std::deque<NormState<double>> states;
	auto with_state = [&](const std::string& op, NormState<double> s) {
		for (Index c = 0; c < C; ++c) {
			s.gamma[c] = 1.0 + 0.3 * std::normal_distribution<double>()(rng);
			s.beta[c] = 0.3 * std::normal_distribution<double>()(rng);
		}
		NormState<double>& st = states.emplace_back(std::move(s));
		check(op, {x}, [&st](const Vars& v) { return norm_forward(v[0], st); });
	};
	with_state("bn", NormState<double>::bn(C));
	with_state("gn", NormState<double>::cn(C, C / 2));
	with_state("ln", NormState<double>::layer_norm(C));
	with_state("in", NormState<double>::instance_norm(C));
	with_state("bcn", NormState<double>::bcn_large(C, 2));
	{
		auto s = NormState<double>::bcn_micro(C, 2, 0.1);
		s.mode = NormMode::Eval;  // estimates move on every train-mode forward
		for (Index c = 0; c < C; ++c) {
			s.running_mean[c] = 0.5 * std::normal_distribution<double>()(rng);
			s.running_var[c] = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
		}
		with_state("bcn_micro", std::move(s));
	}
	{
		Eigen::ArrayXd mu(C), sigma(C);
		for (Index c = 0; c < C; ++c) {
			mu[c] = std::normal_distribution<double>()(rng);
			sigma[c] = std::exp(0.5 * std::normal_distribution<double>()(rng));
		}
		with_state("fixed_stats", NormState<double>::fixed_stats(C, mu, sigma));
	}

	// Weight reparameterizations on an O x I matrix.
	const Index O = dim(rng) + 2, I = 3 * dim(rng);
	const auto raw = random_tensor<double>({O, I}, rng, 0.5, 0.1);
	const auto gain = random_uniform<double>({O}, rng, 0.5, 2.0);
	check("ws", {raw}, [](const Vars& v) { return ws_forward(v[0], 1e-10); });
	check("wn", {raw, gain}, [](const Vars& v) { return wn_forward(v[0], v[1]); });
	check("cwn", {raw, gain}, [](const Vars& v) { return cwn_forward(v[0], v[1]); });

	// Full models: every parameter tensor.
	auto model_check = [&](const std::string& op, ModelSpec spec) {
		auto m = Model<double>::build(spec, seed);
		const auto input = random_tensor<double>({3, 3, 16, 16}, rng);
		double worst = 0.0;
		for (const auto& g : model_gradcheck(m, input, {1, 4, 7}, seed, 4)) worst = std::max(worst, g.worst());
		out.push_back({op, worst});
	};
	ModelSpec c4;
	c4.norm = parse_norm("bn");
	model_check("convnet4/bn", c4);
	c4.norm = parse_norm("gn");
	c4.reparam = Reparam::WS;
	model_check("convnet4/gn+ws", c4);
	ModelSpec rn = c4;
	rn.arch = Arch::MiniResNet;
	rn.width = 8;
	rn.norm = parse_norm("bcn");
	model_check("miniresnet8/bcn+ws", rn);
	return out;
}

// ---------------------------------------------------------------------------
// Metrics

/// Rows for one epoch: losses and errors, StatDiff per layer and group,
/// underrepresentation per layer, and per-step gradient-reduction terms.
template <typename Scalar>
void emit_epoch(MetricsSink& sink, const std::string& run, const Model<Scalar>& model, const EpochRecord& e)
{
	auto row = [&](std::int64_t step, const std::string& metric, const std::string& layer, double v) {
		sink.add({run, e.epoch, step, metric, layer, v});
	};
	row(e.steps, "lr", "", e.lr);
	row(e.steps, "train_loss", "", e.train_loss);
	row(e.steps, "train_err", "", e.train_err);
	if (e.val_err >= 0) row(e.steps, "val_err", "", e.val_err);
	if (!e.statdiff.empty()) {
		row(e.steps, "statdiff_mean", "", e.statdiff_mean);
		row(e.steps, "statdiff_std", "", e.statdiff_std);
		for (std::size_t l = 0; l < e.statdiff.size(); ++l)
			for (std::size_t g = 0; g < e.statdiff[l].size(); ++g)
				row(e.steps, "statdiff", model.convs[l].name + "/g" + std::to_string(g), e.statdiff[l][g]);
	}
	for (std::size_t l = 0; l < e.underrep.size(); ++l) row(e.steps, "underrep_rate", model.convs[l].name, e.underrep[l]);
	for (const auto& r : e.grad_terms) {
		row(r.step, "term_ws", r.layer, r.term_ws);
		row(r.step, "term_mean", r.layer, r.term_mean);
		row(r.step, "term_total", r.layer, r.term_total);
		row(r.step, "ws_fraction", r.layer, r.ws_fraction());
		row(r.step, "residual_r1", r.layer, r.residual_r1);
		row(r.step, "residual_r2", r.layer, r.residual_r2);
	}
	sink.flush();
}

// ---------------------------------------------------------------------------
// Gradient-reduction run

struct LipschitzSummary {
	Index records = 0;
	double max_r1 = 0.0, max_r2 = 0.0;
	double mean_ws_fraction = 0.0;
	double mean_mean_fraction = 0.0;  // term_mean share
	bool aborted = false;
};

inline LipschitzSummary summarize_lipschitz(const History& h)
{
	LipschitzSummary s;
	s.aborted = h.aborted;
	double ws = 0.0, mean = 0.0;
	for (const auto& e : h.epochs)
		for (const auto& r : e.grad_terms) {
			++s.records;
			s.max_r1 = std::max(s.max_r1, r.residual_r1);
			s.max_r2 = std::max(s.max_r2, r.residual_r2);
			ws += r.ws_fraction();
			const double total = r.term_ws + r.term_mean + r.term_total;
			mean += total > 0 ? r.term_mean / total : 0.0;
		}
	if (s.records > 0) {
		s.mean_ws_fraction = ws / static_cast<double>(s.records);
		s.mean_mean_fraction = mean / static_cast<double>(s.records);
	}
	return s;
}

// ---------------------------------------------------------------------------
// Hessian suite

struct HessianCase {
	std::string name;
	HessianReport report;
	bool pass = false;
};

/// Zero-sum and Frobenius checks on the analytic toy and on tiny networks.
inline std::vector<HessianCase> hessian_suite(std::uint64_t first_seed, int networks, double tol = 1e-4)
{
	std::vector<HessianCase> out;
	for (Index I : {4, 9, 16}) {
		HessianCase c{"quadratic/I=" + std::to_string(I), quadratic_toy_hessian(I), false};
		c.pass = c.report.max_row_sum < tol && c.report.max_col_sum < tol && std::abs(c.report.total_sum) < tol &&
		         c.report.inequality_slack() > -tol;
		out.push_back(c);
	}
	for (int k = 0; k < networks; ++k) {
		const std::uint64_t seed = first_seed + static_cast<std::uint64_t>(k);
		HessianCase c{"tiny_net/seed=" + std::to_string(seed), hessian_checks(TinyConvNet::make(seed)), false};
		c.pass = c.report.max_row_sum < tol && c.report.max_col_sum < tol && std::abs(c.report.total_sum) < tol &&
		         c.report.inequality_slack() > -tol;
		out.push_back(c);
	}
	return out;
}

} // namespace wsbcn
