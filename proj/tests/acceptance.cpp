// End-to-end acceptance checks. Each criterion runs on its own and prints
// exactly one PASS/FAIL line:
//
//   wsbcn_acceptance <1..10>
//
// Criterion 9 trains on CIFAR-10 when WSBCN_CIFAR10_DIR names a directory
// with the binary batches, otherwise on the synthetic blob task.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "wsbcn/experiments.hpp"

using namespace wsbcn;

namespace {

struct Outcome {
	bool pass = false;
	std::string detail;
};

std::string fmt(const char* f, auto... args)
{
	char buf[512];
	std::snprintf(buf, sizeof(buf), f, args...);
	return buf;
}

double median(std::vector<double> v)
{
	std::sort(v.begin(), v.end());
	const std::size_t n = v.size();
	return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <typename Scalar>
bool same_parameters(Model<Scalar>& a, Model<Scalar>& b)
{
	auto pa = a.parameters(), pb = b.parameters();
	if (pa.size() != pb.size()) return false;
	for (std::size_t i = 0; i < pa.size(); ++i) {
		const Tensor<Scalar>& x = *pa[i].second;
		const Tensor<Scalar>& y = *pb[i].second;
		if (pa[i].first.name != pb[i].first.name || x.shape() != y.shape() ||
		    std::memcmp(x.ptr(), y.ptr(), sizeof(Scalar) * static_cast<std::size_t>(x.size())) != 0)
			return false;
	}
	return true;
}

ModelSpec spec_for(Arch arch, const std::string& norm, Reparam reparam, Index width)
{
	ModelSpec s;
	s.arch = arch;
	s.norm = parse_norm(norm);
	s.reparam = reparam;
	s.width = width;
	return s;
}

// --- 1 -------------------------------------------------------------------------

Outcome gradient_oracle()
{
	double worst = 0.0;
	std::string worst_op;
	std::size_t checks = 0;
	for (std::uint64_t seed = 0; seed < 20; ++seed)
		for (const auto& c : gradcheck_suite(seed)) {
			++checks;
			if (!(c.error <= worst)) {
				worst = c.error;
				worst_op = c.op + "/seed" + std::to_string(seed);
			}
		}
	return {worst < 1e-5, fmt("%zu checks over 20 seeds, max rel err %.2e (%s)", checks, worst, worst_op.c_str())};
}

// --- 2 -------------------------------------------------------------------------

Outcome ws_analytic_gradient()
{
	std::mt19937_64 rng(2024);
	// With two entries per row the ones vector and W_hat span the row space,
	// so the exact gradient is identically zero; rows start at three entries.
	std::uniform_int_distribution<Index> O(1, 16), I(3, 300);
	std::normal_distribution<double> normal;
	const double eps = 1e-10;
	double worst = 0.0;
	for (int k = 0; k < 100; ++k) {
		const Index o = O(rng), i = I(rng);
		const double scale = std::exp(normal(rng)), shift = normal(rng);
		Tensord raw = random_tensor<double>({o, i}, rng, scale, shift);
		const Tensord up = random_tensor<double>({o, i}, rng);
		const auto sw = standardize_weight(raw, eps);
		const Tensord analytic = ws_backward_analytic(sw.standardized, up, sw.row_std);
		raw.set_requires_grad(true);
		Tape<double> tape;
		backward(sum(mul(ws_forward(tape.leaf(raw), eps), tape.constant(up))));
		worst = std::max(worst, relative_error(analytic.data(), raw.grad()));
	}
	return {worst < 1e-10, fmt("100 instances, max rel err %.2e", worst)};
}

// --- 3 -------------------------------------------------------------------------

Outcome lipschitz_identities()
{
	const TaskData task = synthetic_task(1, 1000, 1000);
	Model<double> model = Model<double>::build(spec_for(Arch::ConvNet4, "gn", Reparam::WS, 32), 0);
	TrainConfig cfg;
	cfg.lr.initial = 0.05;
	cfg.epochs = 5;
	cfg.diagnostics.enabled = true;
	Trainer<double> trainer(model, cfg);
	const History h = trainer.fit(task.train, &task.val);
	const LipschitzSummary s = summarize_lipschitz(h);

	std::map<std::string, std::pair<double, int>> per_layer;
	for (const auto& e : h.epochs)
		for (const auto& r : e.grad_terms) {
			per_layer[r.layer].first += r.ws_fraction();
			++per_layer[r.layer].second;
		}
	std::string layers;
	for (const auto& [name, v] : per_layer) layers += fmt(" %s=%.4f", name.c_str(), v.first / v.second);

	const bool residuals = !s.aborted && s.records > 0 && s.max_r1 < 1e-8 && s.max_r2 < 1e-8;
	return {residuals && s.mean_ws_fraction < 0.05,
	        fmt("%ld steps x layers, max r1 %.2e, max r2 %.2e, mean <W_hat,g> share %.4f (per layer:%s)",
	            static_cast<long>(s.records), s.max_r1, s.max_r2, s.mean_ws_fraction, layers.c_str())};
}

// --- 4 -------------------------------------------------------------------------

Outcome hessian_checks()
{
	const auto cases = hessian_suite(1, 5, 1e-4);
	bool ok = cases.size() == 8;
	double worst_sum = 0.0, worst_slack = 0.0;
	for (const auto& c : cases) {
		ok = ok && c.pass;
		worst_sum = std::max({worst_sum, c.report.max_row_sum, c.report.max_col_sum, std::abs(c.report.total_sum)});
		worst_slack = std::min(worst_slack, c.report.inequality_slack());
	}
	return {ok, fmt("%zu cases (toy + 5 networks), max |row/col/total sum| %.2e, min Frobenius slack %.2e",
	                cases.size(), worst_sum, worst_slack)};
}

// --- 5 -------------------------------------------------------------------------

Outcome norm_invariants()
{
	double mean_err = 0.0, var_err = 0.0, equiv_err = 0.0;
	auto moments = [&](const Tensord& y, const GroupLayout& layout) {
		const auto st = group_stats(y, layout);
		for (std::size_t g = 0; g < st.mean.size(); ++g) {
			mean_err = std::max(mean_err, std::abs(st.mean[g]));
			var_err = std::max(var_err, std::abs(st.var[g] - 1.0));
		}
	};
	auto run = [](NormState<double>& st, const Tensord& x) {
		Tape<double> tape;
		return norm_forward(tape.constant(x), st).value();
	};
	for (std::uint64_t seed = 0; seed < 10; ++seed) {
		std::mt19937_64 rng(seed);
		const Tensord x = random_tensor<double>({4, 8, 6, 6}, rng, 3.0, -2.0);
		auto bn = NormState<double>::bn(8);
		bn.eps = 1e-10;
		moments(run(bn, x), GroupLayout::per_channel(x.shape()));
		for (Index g : {1, 2, 4, 8}) {
			auto cn = NormState<double>::cn(8, g);
			cn.eps = 1e-10;
			moments(run(cn, x), GroupLayout::per_sample_group(x.shape(), g));
		}
		auto ln = NormState<double>::layer_norm(8), c1 = NormState<double>::cn(8, 1);
		auto in = NormState<double>::instance_norm(8), c8 = NormState<double>::cn(8, 8);
		equiv_err = std::max(equiv_err, (run(ln, x).data() - run(c1, x).data()).abs().maxCoeff());
		equiv_err = std::max(equiv_err, (run(in, x).data() - run(c8, x).data()).abs().maxCoeff());
	}
	return {mean_err < 1e-10 && var_err < 1e-6 && equiv_err < 1e-12,
	        fmt("max |mean| %.2e, max |var-1| %.2e, LN/IN vs CN max diff %.2e", mean_err, var_err, equiv_err)};
}

// --- 6 -------------------------------------------------------------------------

Outcome bcn_estimates()
{
	double mean_err = 0.0, var_err = 0.0;
	for (std::uint64_t seed = 0; seed < 5; ++seed) {
		std::mt19937_64 rng(seed);
		auto st = NormState<double>::bcn_micro(8, 2, 0.01);
		for (int step = 0; step < 2000; ++step) {
			Tape<double> tape;
			norm_forward(tape.constant(random_tensor<double>({1, 8, 4, 4}, rng, 2.0, 3.0)), st);
		}
		mean_err = std::max(mean_err, (st.running_mean - 3.0).abs().maxCoeff());
		var_err = std::max(var_err, (st.running_var - 4.0).abs().maxCoeff());
	}
	return {mean_err < 0.2 && var_err < 0.5,
	        fmt("5 seeds x 8 channels, max |mu_hat-3| %.3f, max |sigma_hat^2-4| %.3f", mean_err, var_err)};
}

// --- 7 -------------------------------------------------------------------------

// Trainable gamma/beta absorb perturbations up to about 1; the grid runs
// far enough past that for the statistics to matter.
const std::vector<double> kGridSigmaMu{0.0, 1.0, 2.0, 3.0};
const std::vector<double> kGridSigmaSigma{0.0, 1.0, 2.0};
constexpr Index kGridTrain = 2000;
constexpr Index kGridEpochs = 8;

TrainConfig grid_config(std::uint64_t seed)
{
	TrainConfig cfg;
	cfg.lr.initial = 0.05;
	cfg.epochs = kGridEpochs;
	cfg.seed = seed;
	return cfg;
}

Outcome singularity_grid()
{
	std::vector<double> drops;
	std::string per_seed;
	for (std::uint64_t seed = 1; seed <= 3; ++seed) {
		const TaskData task = synthetic_task(seed, kGridTrain, 1000);
		SingularityOptions opt;
		opt.sigma_mu = kGridSigmaMu;
		opt.sigma_sigma = kGridSigmaSigma;
		opt.stats_seed = seed;
		const SingularityGrid g = run_singularity_grid<float>(spec_for(Arch::ConvNet4, "fixed", Reparam::None, 32), seed,
		                                                      grid_config(seed), task.train, task.val, opt);
		const double largest = g.at(kGridSigmaMu.size() - 1, kGridSigmaSigma.size() - 1);
		drops.push_back(g.at(0, 0) - largest);
		per_seed += fmt(" seed%lu: %.3f -> %.3f;", static_cast<unsigned long>(seed), g.at(0, 0), largest);
	}

	// Cell (0, 0) against plain BN, compared on the final parameters.
	const TaskData task = synthetic_task(1, kGridTrain, 1000);
	Model<float> fixed = Model<float>::build(spec_for(Arch::ConvNet4, "fixed", Reparam::None, 32), 1);
	sample_fixed_stats(fixed, 0.0, 0.0, 1);
	Model<float> bn = Model<float>::build(spec_for(Arch::ConvNet4, "bn", Reparam::None, 32), 1);
	Trainer<float>(fixed, grid_config(1)).fit(task.train, &task.val);
	Trainer<float>(bn, grid_config(1)).fit(task.train, &task.val);
	const bool origin_is_bn = same_parameters(fixed, bn);

	const double m = median(drops);
	return {m >= 0.05 && origin_is_bn,
	        fmt("accuracy (0,0) -> (%.1f,%.1f):%s median drop %.1f points; (0,0) bitwise equals BN: %s", kGridSigmaMu.back(),
	            kGridSigmaSigma.back(), per_seed.c_str(), 100.0 * m, origin_is_bn ? "yes" : "no")};
}

// --- 8 -------------------------------------------------------------------------

constexpr Index kStatDiffTrain = 2000;
constexpr Index kStatDiffEpochs = 6;

Outcome statdiff_ordering()
{
	int gn_wins = 0, ln_wins = 0;
	std::string per_seed;
	for (std::uint64_t seed = 1; seed <= 5; ++seed) {
		const TaskData task = synthetic_task(seed, kStatDiffTrain, 200);
		TrainConfig cfg;
		cfg.lr.initial = 0.05;
		cfg.epochs = kStatDiffEpochs;
		cfg.seed = seed;
		std::map<std::string, double> final_mean;
		for (const std::string norm : {"gn", "ln"})
			for (Reparam r : {Reparam::None, Reparam::WS}) {
				const auto s = run_statdiff_experiment<float>(spec_for(Arch::MiniResNet, norm, r, 16), seed, cfg,
				                                               task.train, task.val);
				final_mean[s.label] = s.history.aborted || s.mean.empty() ? NAN : s.mean.back();
			}
		gn_wins += final_mean["gn+ws"] < final_mean["gn"];
		ln_wins += final_mean["ln+ws"] < final_mean["ln"];
		per_seed += fmt(" seed%lu gn %.3f/%.3f ln %.3f/%.3f;", static_cast<unsigned long>(seed), final_mean["gn"],
		                final_mean["gn+ws"], final_mean["ln"], final_mean["ln+ws"]);
	}
	return {gn_wins >= 4 && ln_wins >= 4,
	        fmt("GN+WS < GN in %d/5, LN+WS < LN in %d/5 (without/with WS):%s", gn_wins, ln_wins, per_seed.c_str())};
}

// --- 9 -------------------------------------------------------------------------

constexpr Index kOrderTrain = 6000;
constexpr Index kOrderVal = 1000;
constexpr Index kOrderEpochs = 8;

TrainConfig order_config(std::uint64_t seed)
{
	TrainConfig cfg;
	cfg.lr.initial = 0.05;
	cfg.lr.decay_epochs = {5, 7};
	cfg.epochs = kOrderEpochs;
	cfg.seed = seed;
	return cfg;
}

Outcome training_ordering()
{
	const char* cifar = std::getenv("WSBCN_CIFAR10_DIR");
	const bool real = cifar && *cifar;
	std::map<std::string, std::vector<double>> err;
	for (std::uint64_t seed = 1; seed <= 5; ++seed) {
		const TaskData task =
		    real ? cifar10_task(cifar, kOrderTrain, kOrderVal) : synthetic_task(seed, kOrderTrain, kOrderVal);
		for (const auto& [label, norm, r] : std::vector<std::tuple<std::string, std::string, Reparam>>{
		         {"gn", "gn", Reparam::None}, {"gn+ws", "gn", Reparam::WS}, {"bcn+ws", "bcn", Reparam::WS}}) {
			ModelSpec spec = spec_for(Arch::ConvNet4, norm, r, 32);
			spec.num_classes = task.train.num_classes;
			Model<float> m = Model<float>::build(spec, seed);
			const History h = Trainer<float>(m, order_config(seed)).fit(task.train, &task.val);
			err[label].push_back(h.aborted ? 1.0 : h.final_val_err());
		}
	}
	const double gn = median(err["gn"]), gn_ws = median(err["gn+ws"]), bcn_ws = median(err["bcn+ws"]);

	// Micro-batch: GN+WS at batch 1 with 8 accumulated micro-batches trains,
	// BN at batch 1 is rejected.
	const TaskData small = synthetic_task(1, 256, 128);
	TrainConfig micro = order_config(1);
	micro.epochs = 2;
	micro.batch = 1;
	micro.iteration_size = 8;
	Model<float> gm = Model<float>::build(spec_for(Arch::ConvNet4, "gn", Reparam::WS, 32), 1);
	const History mh = Trainer<float>(gm, micro).fit(small.train, &small.val);
	const bool micro_ok = !mh.aborted && std::isfinite(mh.epochs.back().train_loss) &&
	                      mh.epochs.back().train_loss < mh.epochs.front().train_loss;
	bool bn_rejected = false;
	try {
		Model<float> bm = Model<float>::build(spec_for(Arch::ConvNet4, "bn", Reparam::None, 32), 1);
		Trainer<float> t(bm, micro);
	} catch (const ContractError&) {
		bn_rejected = true;
	}

	return {bcn_ws <= gn_ws && gn_ws <= gn && micro_ok && bn_rejected,
	        fmt("%s, median val err over 5 seeds: BCN+WS %.3f, GN+WS %.3f, GN %.3f; micro-batch GN+WS loss %.3f -> %.3f%s; "
	            "BN batch 1 rejected: %s",
	            real ? "CIFAR-10" : "synthetic task", bcn_ws, gn_ws, gn, mh.epochs.front().train_loss,
	            mh.epochs.back().train_loss, mh.aborted ? " (aborted)" : "", bn_rejected ? "yes" : "no")};
}

// --- 10 ------------------------------------------------------------------------

Outcome diagnostics_purity()
{
	const TaskData task = synthetic_task(3, 512, 256);
	bool all = true;
	std::string cases;
	for (const auto& norm : {"gn", "bn", "bcn-micro"}) {
		TrainConfig cfg;
		cfg.lr.initial = 0.05;
		cfg.epochs = 3;
		cfg.seed = 3;
		cfg.augment = true;
		cfg.batch = 16;
		Model<float> plain = Model<float>::build(spec_for(Arch::ConvNet4, norm, Reparam::WS, 16), 3);
		Model<float> probed = Model<float>::build(spec_for(Arch::ConvNet4, norm, Reparam::WS, 16), 3);
		Trainer<float>(plain, cfg).fit(task.train, &task.val);
		cfg.diagnostics.enabled = true;
		const History h = Trainer<float>(probed, cfg).fit(task.train, &task.val);
		const bool same = same_parameters(plain, probed) && !h.epochs.back().grad_terms.empty();
		all = all && same;
		cases += fmt(" %s+ws:%s", norm, same ? "identical" : "DIFFERENT");
	}
	return {all, fmt("final parameters with vs without diagnostics:%s", cases.c_str())};
}

struct Criterion {
	std::string name;
	std::function<Outcome()> run;
	double budget_seconds;
};

const std::vector<Criterion> kCriteria = {
    {"gradient oracle suite", gradient_oracle, 120},
    {"WS analytic gradient", ws_analytic_gradient, 60},
    {"Lipschitz identities", lipschitz_identities, 600},
    {"Hessian zero-sum and Frobenius", hessian_checks, 300},
    {"normalization invariants", norm_invariants, 60},
    {"micro-batch BCN estimates", bcn_estimates, 60},
    {"singularity grid", singularity_grid, 1800},
    {"StatDiff ordering", statdiff_ordering, 1800},
    {"training-quality ordering", training_ordering, 7200},
    {"diagnostics purity", diagnostics_purity, 600},
};

} // namespace

int main(int argc, char** argv)
{
	std::vector<int> which;
	for (int i = 1; i < argc; ++i) which.push_back(std::atoi(argv[i]));
	if (which.empty())
		for (int i = 1; i <= static_cast<int>(kCriteria.size()); ++i) which.push_back(i);
	int failed = 0;
	for (int k : which) {
		if (k < 1 || k > static_cast<int>(kCriteria.size())) {
			std::fprintf(stderr, "unknown criterion %d\n", k);
			return 2;
		}
		const Criterion& c = kCriteria[static_cast<std::size_t>(k - 1)];
		const auto t0 = std::chrono::steady_clock::now();
		Outcome o;
		try {
			o = c.run();
		} catch (const std::exception& e) {
			o = {false, std::string("exception: ") + e.what()};
		}
		const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
		if (secs > c.budget_seconds) {
			o.pass = false;
			o.detail += fmt("; over the %.0fs budget", c.budget_seconds);
		}
		std::printf("criterion %d %-32s %s  [%.1fs] %s\n", k, c.name.c_str(), o.pass ? "PASS" : "FAIL", secs,
		            o.detail.c_str());
		std::fflush(stdout);
		failed += !o.pass;
	}
	return failed ? 1 : 0;
}
