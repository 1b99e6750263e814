#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "wsbcn/gradcheck.hpp"
#include "wsbcn/weight_reparam.hpp"

using namespace wsbcn;

namespace {

using Vars = std::vector<Var<double>>;

Tensord autodiff_ws_grad(const Tensord& raw, const Tensord& upstream, double eps)
{
	Tensord w = raw;
	w.set_requires_grad(true);
	Tape<double> tape;
	auto hat = ws_forward(tape.leaf(w), eps);
	backward(sum(mul(hat, tape.constant(upstream))));
	return Tensord(raw.shape(), w.grad());
}

} // namespace

TEST(WsForward, ThreeElementRow)
{
	const auto out = ws_forward(Tensord({1, 3}, {1.0, 2.0, 3.0}), 0.0);
	const double r = std::sqrt(1.5);
	EXPECT_NEAR(out[0], -r, 1e-15);
	EXPECT_NEAR(out[1], 0.0, 1e-15);
	EXPECT_NEAR(out[2], r, 1e-15);
	EXPECT_NEAR(out.data().sum(), 0.0, 1e-15);
	EXPECT_NEAR(out.data().square().sum(), 3.0, 1e-14);
}

TEST(WsForward, ConstantRowGivesZeros)
{
	const auto out = ws_forward(Tensord({2, 4}, 0.7), 1e-10);
	EXPECT_EQ(out.data().abs().maxCoeff(), 0.0);
	EXPECT_THROW(ws_forward(Tensord({2, 4}, 0.7), 0.0), DomainError);
}

TEST(WsForward, Errors)
{
	EXPECT_THROW(ws_forward(Tensord({3, 1}, {1.0, 2.0, 3.0}), 1e-5), ShapeError);
	EXPECT_THROW(ws_forward(Tensord({1, 2}, {1.0, 2.0}), -1.0), DomainError);
}

TEST(WsForward, ShiftAndScaleInvariance)
{
	std::mt19937_64 rng(4);
	for (int trial = 0; trial < 20; ++trial) {
		const auto w = random_tensor<double>({4, 3, 3, 3}, rng);
		const auto base = ws_forward(w, 1e-10);
		Tensord moved(w.shape(), (w.data() + 3.5) * 2.0);
		EXPECT_LT((ws_forward(moved, 1e-10).data() - base.data()).abs().maxCoeff(), 1e-6);
	}
}

TEST(WsForward, TapeAndDirectPathsAgree)
{
	std::mt19937_64 rng(9);
	const auto w = random_tensor<double>({6, 2, 3, 3}, rng);
	Tape<double> tape;
	const auto on_tape = ws_forward(tape.constant(w), 1e-5);
	EXPECT_LT((on_tape.value().data() - ws_forward(w, 1e-5).data()).abs().maxCoeff(), 1e-13);
}

// Row invariants over random shapes and scales.
class WsRowInvariants : public ::testing::TestWithParam<int> {};

TEST_P(WsRowInvariants, ZeroMeanAndBoundedSecondMoment)
{
	std::mt19937_64 rng(static_cast<std::uint64_t>(GetParam()));
	std::uniform_int_distribution<int> dim(2, 40);
	std::uniform_real_distribution<double> scale(0.01, 10.0);
	const Index O = dim(rng), I = dim(rng);
	const double eps = GetParam() % 2 == 0 ? 0.0 : 1e-5;
	const auto raw = random_tensor<double>({O, I}, rng, scale(rng), scale(rng));
	const auto sw = standardize_weight(raw, eps);
	const Eigen::ArrayXXd hat = sw.standardized.matrix().array();
	const double sigma2_min = sw.row_std.square().minCoeff() - eps;
	EXPECT_LT(hat.rowwise().sum().abs().maxCoeff(), 1e-10);
	const Eigen::ArrayXd second = hat.square().rowwise().mean();
	if (eps == 0.0) {
		EXPECT_LT((second - 1.0).abs().maxCoeff(), 1e-12);
	} else {
		EXPECT_GE(second.minCoeff(), 1.0 - eps / sigma2_min - 1e-9);
		EXPECT_LE(second.maxCoeff(), 1.0 + 1e-12);
	}
	EXPECT_GE(sw.row_std.minCoeff(), std::sqrt(eps));
}

INSTANTIATE_TEST_SUITE_P(Seeds, WsRowInvariants, ::testing::Range(0, 30));

TEST(WsBackward, ZeroUpstreamGivesZero)
{
	std::mt19937_64 rng(2);
	const auto sw = standardize_weight(random_tensor<double>({3, 5}, rng), 1e-10);
	const auto g = ws_backward_analytic(sw.standardized, Tensord::zeros({3, 5}), sw.row_std);
	EXPECT_EQ(g.data().abs().maxCoeff(), 0.0);
}

TEST(WsBackward, TwoElementClosedForm)
{
	// W = [1, 3]: mean 2, sigma 1, W_hat = [-1, 1]. The normalization step
	// leaves [(a+b)/2, (a+b)/2]; removing the row mean gives exactly [0, 0].
	const auto sw = standardize_weight(Tensord({1, 2}, {1.0, 3.0}), 0.0);
	ASSERT_DOUBLE_EQ(sw.standardized[0], -1.0);
	ASSERT_DOUBLE_EQ(sw.row_std[0], 1.0);
	for (const auto& [a, b] : std::vector<std::pair<double, double>>{{1.0, 0.0}, {0.3, -2.0}, {5.0, 7.0}}) {
		const Tensord up({1, 2}, {a, b});
		const auto centered = ws_backward_centered(sw.standardized, up, sw.row_std);
		EXPECT_DOUBLE_EQ(centered[0], (a + b) / 2);
		EXPECT_DOUBLE_EQ(centered[1], (a + b) / 2);
		const auto full = ws_backward_analytic(sw.standardized, up, sw.row_std);
		EXPECT_NEAR(full[0], 0.0, 1e-15);
		EXPECT_NEAR(full[1], 0.0, 1e-15);
	}
}

TEST(WsBackward, MatchesAutodiffSeed11)
{
	std::mt19937_64 rng(11);
	const auto raw = random_tensor<double>({4, 27}, rng);
	const auto up = random_tensor<double>({4, 27}, rng);
	const double eps = 1e-10;
	const auto sw = standardize_weight(raw, eps);
	const auto analytic = ws_backward_analytic(sw.standardized, up, sw.row_std);
	EXPECT_LT(relative_error(analytic.data(), autodiff_ws_grad(raw, up, eps).data()), 1e-10);
}

TEST(WsBackward, MatchesAutodiffWithLargeEps)
{
	// The analytic form stays exact with eps > 0 when sigma includes eps.
	std::mt19937_64 rng(12);
	const auto raw = random_tensor<double>({3, 9}, rng, 0.05);
	const auto up = random_tensor<double>({3, 9}, rng);
	const auto sw = standardize_weight(raw, 1e-3);
	const auto analytic = ws_backward_analytic(sw.standardized, up, sw.row_std);
	EXPECT_LT(relative_error(analytic.data(), autodiff_ws_grad(raw, up, 1e-3).data()), 1e-10);
}

TEST(WsBackward, ShapeMismatch)
{
	EXPECT_THROW(ws_backward_analytic(Tensord({2, 3}), Tensord({3, 2}), Eigen::ArrayXd::Ones(2)), ShapeError);
	EXPECT_THROW(ws_backward_analytic(Tensord({2, 3}), Tensord({2, 3}), Eigen::ArrayXd::Ones(3)), ShapeError);
}

TEST(WsBackward, GradientIsOrthogonalToOnesAndWhat)
{
	std::mt19937_64 rng(13);
	const auto sw = standardize_weight(random_tensor<double>({5, 12}, rng), 0.0);
	const auto up = random_tensor<double>({5, 12}, rng);
	const Eigen::ArrayXXd g = ws_backward_analytic(sw.standardized, up, sw.row_std).matrix().array();
	const Eigen::ArrayXXd hat = sw.standardized.matrix().array();
	EXPECT_LT(g.rowwise().sum().abs().maxCoeff(), 1e-12);
	EXPECT_LT((g * hat).rowwise().sum().abs().maxCoeff(), 1e-12);
}

TEST(WsGradients, FiniteDifferences)
{
	for (int seed = 0; seed < 20; ++seed) {
		std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
		const auto raw = random_tensor<double>({3, 2, 2, 2}, rng);
		EXPECT_LT(check_gradients<double>({raw}, [](const Vars& v) { return ws_forward(v[0], 1e-10); },
		                                  static_cast<std::uint64_t>(seed)),
		          1e-5)
		    << "seed " << seed;
	}
}

TEST(WnForward, Examples)
{
	Tape<double> tape;
	auto row = tape.constant(Tensord({1, 2}, {3.0, 4.0}));
	auto unit = wn_forward(row, tape.constant(Tensord({1}, {1.0})));
	EXPECT_NEAR(unit.value()[0], 0.6, 1e-15);
	EXPECT_NEAR(unit.value()[1], 0.8, 1e-15);
	auto ten = wn_forward(row, tape.constant(Tensord({1}, {10.0})));
	EXPECT_NEAR(ten.value()[0], 6.0, 1e-14);
	EXPECT_NEAR(ten.value()[1], 8.0, 1e-14);
	EXPECT_THROW(wn_forward(tape.constant(Tensord({1, 2}, 0.0)), tape.constant(Tensord({1}, {1.0}))), DomainError);
}

TEST(WnForward, RowNormEqualsGain)
{
	std::mt19937_64 rng(21);
	Tape<double> tape;
	const auto gain = random_tensor<double>({6}, rng);
	auto out = wn_forward(tape.constant(random_tensor<double>({6, 10}, rng)), tape.constant(gain));
	const Eigen::ArrayXd norms = out.value().matrix().rowwise().norm().array();
	EXPECT_LT((norms - gain.data().abs()).abs().maxCoeff(), 1e-13);
}

TEST(CwnForward, Examples)
{
	Tape<double> tape;
	auto out = cwn_forward(tape.constant(Tensord({1, 2}, {1.0, 3.0})), tape.constant(Tensord({1}, {1.0})));
	EXPECT_NEAR(out.value()[0], -1.0 / std::sqrt(2.0), 1e-15);
	EXPECT_NEAR(out.value()[1], 1.0 / std::sqrt(2.0), 1e-15);
	EXPECT_THROW(cwn_forward(tape.constant(Tensord({1, 3}, 2.0)), tape.constant(Tensord({1}, {1.0}))), DomainError);
}

TEST(CwnForward, ZeroMeanRowsAndAgreementWithWs)
{
	std::mt19937_64 rng(22);
	const Index O = 5, I = 18;
	const auto raw = random_tensor<double>({O, I}, rng);
	Tape<double> tape;
	auto out = cwn_forward(tape.constant(raw), tape.constant(Tensord({O}, std::sqrt(static_cast<double>(I)))));
	EXPECT_LT(out.value().matrix().rowwise().sum().cwiseAbs().maxCoeff(), 1e-13);
	EXPECT_LT((out.value().data() - ws_forward(raw, 1e-10).data()).abs().maxCoeff(), 1e-6);
}

TEST(ReparamGradients, WnAndCwnFiniteDifferences)
{
	for (int seed = 0; seed < 20; ++seed) {
		std::mt19937_64 rng(static_cast<std::uint64_t>(100 + seed));
		const auto raw = random_tensor<double>({4, 6}, rng);
		const auto gain = random_uniform<double>({4}, rng, 0.5, 2.0);
		const auto s = static_cast<std::uint64_t>(seed);
		EXPECT_LT(check_gradients<double>({raw, gain}, [](const Vars& v) { return wn_forward(v[0], v[1]); }, s), 1e-5);
		EXPECT_LT(check_gradients<double>({raw, gain}, [](const Vars& v) { return cwn_forward(v[0], v[1]); }, s), 1e-5);
	}
}

TEST(InitialGain, PreservesInitialForward)
{
	std::mt19937_64 rng(23);
	const auto raw = random_tensor<double>({4, 9}, rng);
	Tape<double> tape;
	auto wn = wn_forward(tape.constant(raw), tape.constant(initial_gain(raw, Reparam::WN)));
	EXPECT_LT((wn.value().data() - raw.data()).abs().maxCoeff(), 1e-14);
	auto cwn = cwn_forward(tape.constant(raw), tape.constant(initial_gain(raw, Reparam::CWN)));
	Eigen::ArrayXXd centered = raw.matrix().array();
	centered.colwise() -= centered.rowwise().mean().eval();
	Eigen::ArrayXXd got = cwn.value().matrix().array();
	EXPECT_LT((got - centered).abs().maxCoeff(), 1e-14);
}

TEST(Pgd, ZeroGradientIsFixedPoint)
{
	std::mt19937_64 rng(31);
	const auto hat = project_rows(random_tensor<double>({3, 8}, rng));
	const Tensord zero = Tensord::zeros({3, 8});
	for (auto v : {PgdVariant::ExactProject, PgdVariant::Lagrangian})
		EXPECT_LT((pgd_step(hat, zero, 0.1, v).data() - hat.data()).abs().maxCoeff(), 1e-14);
}

TEST(Pgd, ExactProjectionSatisfiesConstraints)
{
	std::mt19937_64 rng(32);
	const auto hat = project_rows(random_tensor<double>({4, 10}, rng));
	const auto next = pgd_step(hat, random_tensor<double>({4, 10}, rng), 0.3, PgdVariant::ExactProject);
	const Eigen::ArrayXXd a = next.matrix().array();
	EXPECT_LT(a.rowwise().sum().abs().maxCoeff(), 1e-12);
	EXPECT_LT((a.square().rowwise().sum() - 10.0).abs().maxCoeff(), 1e-12);
}

TEST(Pgd, RejectsInfeasibleStart)
{
	EXPECT_THROW(pgd_step(Tensord({1, 2}, {1.0, 2.0}), Tensord({1, 2}), 0.1, PgdVariant::ExactProject), DomainError);
}

TEST(Pgd, VariantsAgreeToFirstOrder)
{
	std::mt19937_64 rng(33);
	const auto hat = project_rows(random_tensor<double>({3, 12}, rng));
	const auto g = random_tensor<double>({3, 12}, rng);
	auto gap = [&](double lr) {
		return (pgd_step(hat, g, lr, PgdVariant::ExactProject).data() - pgd_step(hat, g, lr, PgdVariant::Lagrangian).data())
		    .matrix()
		    .norm();
	};
	for (double lr : {1e-2, 5e-3, 2.5e-3}) {
		const double ratio = gap(lr) / gap(lr / 2);
		EXPECT_GT(ratio, 3.6) << "lr " << lr;
		EXPECT_LT(ratio, 4.4) << "lr " << lr;
	}
}
