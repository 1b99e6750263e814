#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "wsbcn/data.hpp"
#include "wsbcn/diagnostics.hpp"
#include "wsbcn/model.hpp"

namespace wsbcn {

/// Step decay: lr = initial * factor^(number of decay epochs already reached).
struct LrSchedule {
	double initial = 0.1;
	std::vector<Index> decay_epochs;
	double factor = 0.1;

	double at(Index epoch) const
	{
		double lr = initial;
		for (Index e : decay_epochs)
			if (epoch >= e) lr *= factor;
		return lr;
	}
};

struct DiagnosticsConfig {
	bool enabled = false;
	bool grad_terms = true;      // per-step WS gradient-reduction terms
	bool statdiff = true;        // running conv-output statistics, read per epoch
	bool underrep = true;        // per-layer underrepresentation on held-out data
	Index underrep_samples = 64;
	double underrep_percentile = 0.95;
	double tracker_momentum = 0.1;
};

struct TrainConfig {
	LrSchedule lr;
	double momentum = 0.9;
	double weight_decay = 1e-4;
	Index batch = 32;
	Index iteration_size = 1;
	Index epochs = 10;
	std::uint64_t seed = 0;
	bool augment = false;
	Index augment_pad = 4;
	bool shuffle = true;
	Index eval_batch = 100;
	DiagnosticsConfig diagnostics;

	Index effective_batch() const { return batch * iteration_size; }
};

struct EpochRecord {
	Index epoch = 0;  // 1-based count of completed epochs
	Index steps = 0;  // optimizer steps taken so far
	double lr = 0.0;
	double train_loss = 0.0;
	double train_err = 0.0;
	double val_err = -1.0;  // negative when no validation set
	// Diagnostics, filled only when enabled.
	std::vector<DiagnosticsRecord> grad_terms;
	std::vector<std::vector<double>> statdiff;  // per conv layer, per group
	double statdiff_mean = 0.0, statdiff_std = 0.0;
	std::vector<double> underrep;               // per conv layer
};

struct History {
	std::vector<EpochRecord> epochs;
	bool aborted = false;
	Index abort_step = -1;
	std::string abort_reason;

	double final_val_err() const { return epochs.empty() ? 1.0 : epochs.back().val_err; }
};

/// Mean and population std of all values across layers.
inline std::pair<double, double> pooled_mean_std(const std::vector<std::vector<double>>& per_layer)
{
	double s = 0.0, ss = 0.0;
	Index n = 0;
	for (const auto& layer : per_layer)
		for (double v : layer) {
			s += v;
			ss += v * v;
			++n;
		}
	if (n == 0) return {0.0, 0.0};
	const double m = s / static_cast<double>(n);
	return {m, std::sqrt(std::max(0.0, ss / static_cast<double>(n) - m * m))};
}

/// Group count StatDiff uses for a layer: the layer's own groups for the
/// channel-normalized kinds, otherwise the default grouping.
template <typename Scalar>
Index statdiff_groups(const NormState<Scalar>& n)
{
	if (n.kind == NormKind::CN || n.kind == NormKind::BCNLarge || n.kind == NormKind::BCNMicro) return n.groups;
	return default_group_count(n.channels);
}

/// SGD with momentum and weight decay over a model, with gradient
/// accumulation across `iteration_size` micro-batches per step:
///   g = mean of micro-batch grads + wd * w,  v = mu * v + g,  w -= lr * v.
/// Weight decay applies to conv weights (the raw W under any
/// reparameterization) and the FC weight only.
///
/// Diagnostics only read values and gradients; they never draw from the
/// trainer's RNG or touch model state, so they cannot change a trajectory.
template <typename Scalar>
class Trainer {
public:
	Trainer(Model<Scalar>& model, TrainConfig cfg) : model_(model), cfg_(std::move(cfg)), rng_(cfg_.seed)
	{
		if (cfg_.batch < 1 || cfg_.iteration_size < 1) throw DomainError("batch and iteration size must be positive");
		if (cfg_.epochs < 0) throw DomainError("epoch count must be non-negative");
		if (cfg_.momentum < 0 || cfg_.weight_decay < 0) throw DomainError("momentum and weight decay must be non-negative");
		if (cfg_.batch < 2)
			for (const auto& n : model_.norms)
				if (n.kind == NormKind::BN || n.kind == NormKind::BCNLarge || n.kind == NormKind::FixedStats)
					throw ContractError(std::string(to_string(n.kind)) +
					                    " needs batch statistics over at least 2 samples; with batch size 1 use a "
					                    "channel-based or micro-batch BCN normalization");
		for (auto& [info, t] : model_.parameters()) velocity_.push_back(Eigen::ArrayXd::Zero(t->size()));
		ChannelStatTracker tracker;
		tracker.momentum = cfg_.diagnostics.tracker_momentum;
		trackers_.assign(model_.convs.size(), tracker);
	}

	const TrainConfig& config() const { return cfg_; }
	Index epoch() const { return epoch_; }
	Index step() const { return step_; }

	/// Optimizer and RNG state, for checkpoints.
	std::vector<Eigen::ArrayXd>& velocity() { return velocity_; }
	std::string rng_state() const
	{
		std::ostringstream os;
		os << rng_;
		return os.str();
	}
	void set_rng_state(const std::string& s)
	{
		std::istringstream is(s);
		is >> rng_;
		if (!is) throw FormatError("invalid RNG state");
	}
	void set_position(Index epoch, Index step)
	{
		epoch_ = epoch;
		step_ = step;
	}

	/// Trains the remaining epochs. A non-finite value stops training and is
	/// recorded in the history rather than thrown.
	History fit(const Dataset& train, const Dataset* val, const std::function<void(const EpochRecord&)>& on_epoch = {})
	{
		History h;
		while (epoch_ < cfg_.epochs) {
			try {
				h.epochs.push_back(run_epoch(train, val));
			} catch (const NumericalError& e) {
				h.aborted = true;
				h.abort_step = step_;
				h.abort_reason = e.what();
				break;
			}
			if (on_epoch) on_epoch(h.epochs.back());
		}
		return h;
	}

	EpochRecord run_epoch(const Dataset& train, const Dataset* val)
	{
		check_dataset(train);
		const Index per_step = cfg_.effective_batch();
		const Index steps = train.size() / per_step;
		if (steps < 1)
			throw ShapeError("training set of " + std::to_string(train.size()) + " samples is smaller than one step of " +
			                 std::to_string(per_step));
		std::vector<Index> order(static_cast<std::size_t>(train.size()));
		std::iota(order.begin(), order.end(), Index{0});
		if (cfg_.shuffle) std::shuffle(order.begin(), order.end(), rng_);

		EpochRecord rec;
		rec.lr = cfg_.lr.at(epoch_);
		const bool diag = cfg_.diagnostics.enabled;
		model_.set_mode(NormMode::Train);
		for (auto& n : model_.norms)
			if (n.kind == NormKind::BCNMicro) n.update_rate = rec.lr;

		auto params = model_.parameters();
		std::vector<Eigen::ArrayXd> acc(params.size());
		double loss_sum = 0.0;
		Index wrong = 0, seen = 0;
		for (Index s = 0; s < steps; ++s) {
			for (std::size_t p = 0; p < params.size(); ++p) acc[p] = Eigen::ArrayXd::Zero(params[p].second->size());
			for (Index m = 0; m < cfg_.iteration_size; ++m) {
				const std::span<const Index> idx(order.data() + (s * cfg_.iteration_size + m) * cfg_.batch,
				                                 static_cast<std::size_t>(cfg_.batch));
				Tensor<Scalar> x = train.batch<Scalar>(idx);
				if (cfg_.augment) augment_batch(x, rng_, cfg_.augment_pad);
				const std::vector<int> y = train.batch_labels(idx);

				model_.zero_grad();
				Tape<Scalar> tape;
				ForwardTrace<Scalar> trace;
				const Var<Scalar> logits = model_.forward(tape, x, diag ? &trace : nullptr);
				const Var<Scalar> loss = softmax_cross_entropy(logits, std::span<const int>(y));
				tape.backward(loss);

				loss_sum += static_cast<double>(loss.value()[0]) * static_cast<double>(cfg_.batch);
				wrong += count_wrong(logits.value(), y);
				seen += cfg_.batch;
				for (std::size_t p = 0; p < params.size(); ++p)
					if (params[p].second->has_grad()) acc[p] += params[p].second->grad().template cast<double>();
				if (diag) observe(tape, trace, m == 0, rec);
			}
			apply_step(params, acc, rec.lr);
			++step_;
		}
		model_.zero_grad();
		++epoch_;
		rec.epoch = epoch_;
		rec.steps = step_;
		rec.train_loss = loss_sum / static_cast<double>(seen);
		rec.train_err = static_cast<double>(wrong) / static_cast<double>(seen);
		if (diag && cfg_.diagnostics.statdiff) read_statdiff(rec);
		if (val) {
			rec.val_err = evaluate(*val);
			if (diag && cfg_.diagnostics.underrep) rec.underrep = measure_underrep(*val);
		}
		return rec;
	}

	/// Classification error in eval mode.
	double evaluate(const Dataset& d)
	{
		check_dataset(d);
		model_.set_mode(NormMode::Eval);
		Index wrong = 0;
		for (Index b = 0; b < d.size(); b += cfg_.eval_batch) {
			const Index n = std::min(cfg_.eval_batch, d.size() - b);
			std::vector<Index> idx(static_cast<std::size_t>(n));
			std::iota(idx.begin(), idx.end(), b);
			Tape<Scalar> tape;
			const Var<Scalar> logits = model_.forward(tape, d.batch<Scalar>(idx));
			wrong += count_wrong(logits.value(), d.batch_labels(idx));
		}
		model_.set_mode(NormMode::Train);
		return static_cast<double>(wrong) / static_cast<double>(d.size());
	}

	/// Per-layer fraction of channels whose post-norm, pre-ReLU activations
	/// stay non-positive at the configured percentile, on the first samples of
	/// `d` in eval mode.
	std::vector<double> measure_underrep(const Dataset& d)
	{
		const Index n = std::min(cfg_.diagnostics.underrep_samples, d.size());
		std::vector<Index> idx(static_cast<std::size_t>(n));
		std::iota(idx.begin(), idx.end(), Index{0});
		model_.set_mode(NormMode::Eval);
		Tape<Scalar> tape;
		ForwardTrace<Scalar> trace;
		model_.forward(tape, d.batch<Scalar>(idx), &trace);
		model_.set_mode(NormMode::Train);
		std::vector<double> out;
		for (const auto& v : trace.norm_out) out.push_back(underrep_rate(v.value(), cfg_.diagnostics.underrep_percentile));
		return out;
	}

private:
	void check_dataset(const Dataset& d) const
	{
		if (d.channels != model_.spec.in_channels)
			throw ShapeError("dataset has " + std::to_string(d.channels) + " channels, model expects " +
			                 std::to_string(model_.spec.in_channels));
		for (int y : d.labels)
			if (y < 0 || y >= model_.spec.num_classes)
				throw DomainError("label " + std::to_string(y) + " outside the model's " +
				                  std::to_string(model_.spec.num_classes) + " classes");
	}

	static Index count_wrong(const Tensor<Scalar>& logits, const std::vector<int>& y)
	{
		Index wrong = 0;
		const auto m = logits.matrix();
		for (Index b = 0; b < m.rows(); ++b) {
			Index arg = 0;
			m.row(b).maxCoeff(&arg);
			if (arg != y[static_cast<std::size_t>(b)]) ++wrong;
		}
		return wrong;
	}

	void apply_step(std::vector<std::pair<ParamInfo, Tensor<Scalar>*>>& params, const std::vector<Eigen::ArrayXd>& acc,
	                double lr)
	{
		const double inv = 1.0 / static_cast<double>(cfg_.iteration_size);
		for (std::size_t p = 0; p < params.size(); ++p) {
			Tensor<Scalar>& t = *params[p].second;
			if (!t.requires_grad()) continue;
			const Eigen::ArrayXd w = t.data().template cast<double>();
			Eigen::ArrayXd g = acc[p] * inv;
			if (params[p].first.decay) g += cfg_.weight_decay * w;
			velocity_[p] = cfg_.momentum * velocity_[p] + g;
			t.data() = (w - lr * velocity_[p]).template cast<Scalar>();
		}
	}

	void observe(const Tape<Scalar>& tape, const ForwardTrace<Scalar>& trace, bool first_micro_batch, EpochRecord& rec)
	{
		const DiagnosticsConfig& dc = cfg_.diagnostics;
		if (dc.statdiff)
			for (std::size_t i = 0; i < trace.conv_out.size(); ++i) {
				const auto [m, s] = channel_moments(trace.conv_out[i].value());
				trackers_[i].update(m, s);
			}
		if (!dc.grad_terms || !first_micro_batch) return;
		for (std::size_t i = 0; i < model_.convs.size(); ++i) {
			const ConvLayer<Scalar>& c = model_.convs[i];
			if (c.reparam != Reparam::WS) continue;
			const Index O = c.weight.dim(0), I = c.weight.size() / O;
			const auto sw = standardize_weight(c.weight.template cast<double>().reshaped({O, I}), c.ws_eps);
			const Tensord g_hat({O, I}, tape.grad(trace.effective_weight[i]).template cast<double>());
			const Tensord g_raw({O, I}, tape.grad(trace.raw_weight[i]).template cast<double>());
			DiagnosticsRecord r = grad_reduction_terms(sw, g_hat, g_raw);
			r.layer = c.name;
			r.step = step_;
			rec.grad_terms.push_back(std::move(r));
		}
	}

	void read_statdiff(EpochRecord& rec) const
	{
		for (std::size_t i = 0; i < trackers_.size(); ++i) {
			if (!trackers_[i].initialized) continue;
			rec.statdiff.push_back(statdiff(trackers_[i].mean, trackers_[i].stddev, statdiff_groups(model_.norms[i])));
		}
		std::tie(rec.statdiff_mean, rec.statdiff_std) = pooled_mean_std(rec.statdiff);
	}

	Model<Scalar>& model_;
	TrainConfig cfg_;
	std::mt19937_64 rng_;
	std::vector<Eigen::ArrayXd> velocity_;
	std::vector<ChannelStatTracker> trackers_;
	Index epoch_ = 0;
	Index step_ = 0;
};

/// StatDiff of the conv outputs of an untrained (or any) model on one batch,
/// from that batch's own channel moments. Eval mode, no state change.
template <typename Scalar>
std::pair<double, double> statdiff_snapshot(Model<Scalar>& model, const Dataset& d, Index samples = 64)
{
	const Index n = std::min(samples, d.size());
	std::vector<Index> idx(static_cast<std::size_t>(n));
	std::iota(idx.begin(), idx.end(), Index{0});
	const NormMode before = model.norms.empty() ? NormMode::Train : model.norms.front().mode;
	model.set_mode(NormMode::Eval);
	Tape<Scalar> tape;
	ForwardTrace<Scalar> trace;
	model.forward(tape, d.batch<Scalar>(idx), &trace);
	model.set_mode(before);
	std::vector<std::vector<double>> per_layer;
	for (std::size_t i = 0; i < trace.conv_out.size(); ++i) {
		const auto [m, s] = channel_moments(trace.conv_out[i].value());
		per_layer.push_back(statdiff(m, s, statdiff_groups(model.norms[i])));
	}
	return pooled_mean_std(per_layer);
}

struct SingularityOptions {
	std::vector<double> sigma_mu{0.0, 0.5, 1.0};
	std::vector<double> sigma_sigma{0.0, 0.5, 1.0};
	bool affine_trainable = true;
	std::uint64_t stats_seed = 1;  // separate stream for sampling mu_hat, sigma_hat
};

struct SingularityCell {
	double sigma_mu = 0.0, sigma_sigma = 0.0;
	History history;
};

/// Trains one ConvNet4 with fixed-statistics normalization per grid cell.
/// Every cell starts from the same initial parameters (`model_seed`) and
/// uses the same training RNG; only the sampled statistics differ. Cell
/// (0, 0) samples mu_hat = 0, sigma_hat = 1 and reduces to plain BN.
template <typename Scalar>
SingularityGrid run_singularity_grid(ModelSpec spec, std::uint64_t model_seed, const TrainConfig& cfg,
                                     const Dataset& train, const Dataset& val, const SingularityOptions& opt,
                                     std::vector<SingularityCell>* cells = nullptr)
{
	if (std::find(opt.sigma_mu.begin(), opt.sigma_mu.end(), 0.0) == opt.sigma_mu.end() ||
	    std::find(opt.sigma_sigma.begin(), opt.sigma_sigma.end(), 0.0) == opt.sigma_sigma.end())
		throw DomainError("singularity grid must include the (0, 0) cell");
	spec.norm.kind = NormKind::FixedStats;
	SingularityGrid g;
	g.sigma_mu = opt.sigma_mu;
	g.sigma_sigma = opt.sigma_sigma;
	g.failure_threshold = 1.5 / static_cast<double>(spec.num_classes);
	for (double sm : opt.sigma_mu)
		for (double ss : opt.sigma_sigma) {
			Model<Scalar> model = Model<Scalar>::build(spec, model_seed);
			model.set_affine_trainable(opt.affine_trainable);
			sample_fixed_stats(model, sm, ss, opt.stats_seed);
			Trainer<Scalar> trainer(model, cfg);
			History h = trainer.fit(train, &val);
			const double acc = h.aborted ? 0.0 : 1.0 - h.final_val_err();
			g.accuracy.push_back(acc);
			g.failed.push_back(h.aborted || acc < g.failure_threshold);
			g.abort_step.push_back(h.aborted ? h.abort_step : -1);
			if (cells) cells->push_back({sm, ss, std::move(h)});
		}
	return g;
}

struct StatDiffSeries {
	std::string label;
	double initial_mean = 0.0, initial_std = 0.0;
	std::vector<double> mean, stddev;  // per epoch
	History history;
};

/// Trains a channel-normalized model with StatDiff tracking enabled.
template <typename Scalar>
StatDiffSeries run_statdiff_experiment(const ModelSpec& spec, std::uint64_t model_seed, TrainConfig cfg,
                                       const Dataset& train, const Dataset& val)
{
	if (spec.norm.kind != NormKind::CN) throw DomainError("StatDiff experiments need a channel normalization (gn or ln)");
	cfg.diagnostics.enabled = true;
	cfg.diagnostics.statdiff = true;
	Model<Scalar> model = Model<Scalar>::build(spec, model_seed);
	StatDiffSeries out;
	out.label = norm_name(spec.norm) + (spec.reparam == Reparam::WS ? "+ws" : "");
	std::tie(out.initial_mean, out.initial_std) = statdiff_snapshot(model, train);
	Trainer<Scalar> trainer(model, cfg);
	out.history = trainer.fit(train, &val);
	for (const auto& e : out.history.epochs) {
		out.mean.push_back(e.statdiff_mean);
		out.stddev.push_back(e.statdiff_std);
	}
	return out;
}

} // namespace wsbcn
