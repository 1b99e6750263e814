#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "wsbcn/checkpoint.hpp"
#include "wsbcn/config.hpp"
#include "wsbcn/experiments.hpp"

namespace fs = std::filesystem;
using namespace wsbcn;
using json = nlohmann::ordered_json;

namespace {

// Exit codes. Every failure also prints one JSON line on stderr:
// {"error": <category>, "message": ..., "step": ...}.
enum Exit : int {
	kOk = 0,
	kCheckFailed = 1,  // a verification subcommand ran but a check did not hold
	kUsage = 2,
	kIo = 3,
	kNumerical = 4,
	kContract = 5,
	kFormat = 6,
	kInternal = 70,
};

struct CliFailure {
	Exit code;
	std::string category, message;
	std::int64_t step = -1;
};

int report_failure(const CliFailure& f, const fs::path& run_dir)
{
	json j;
	j["error"] = f.category;
	j["exit_code"] = static_cast<int>(f.code);
	j["message"] = f.message;
	if (f.step >= 0) j["step"] = f.step;
	std::cerr << j.dump() << "\n";
	if (!run_dir.empty() && fs::exists(run_dir)) {
		std::ofstream(run_dir / "error.json") << j.dump(1) << "\n";
	}
	return f.code;
}

// Flag values as strings keyed by config key; only flags given on the
// command line override the config file.
struct Flags {
	std::map<std::string, std::string> values;
	std::map<std::string, CLI::Option*> options;
	std::string config_file;

	void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help)
	{
		options[key] = app->add_option(flag, values[key], help);
	}
	void add_flag(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help)
	{
		options[key] = app->add_flag(flag, help);
	}

	Config merged(const std::string& command) const
	{
		Config c = config_file.empty() ? Config{} : Config::load(config_file);
		for (const auto& [key, opt] : options) {
			if (opt->count() == 0) continue;
			c.set(key, opt->get_expected() == 0 ? "true" : values.at(key));
		}
		c.set("command", command);
		return c;
	}
};

void add_common(CLI::App* app, Flags& f)
{
	app->add_option("--config", f.config_file, "Configuration file (flags override its values)")->check(CLI::ExistingFile);
	f.add(app, "--seed", "seed", "Seed for initialization and training order");
	f.add(app, "--out", "output", "Run directory (default: $WSBCN_OUTPUT_ROOT/<command>-seed<seed>)");
}

void add_data(CLI::App* app, Flags& f)
{
	f.add(app, "--data", "data.kind", "synth or cifar10");
	f.add(app, "--data-path", "data.path", "Directory with the CIFAR-10 binary batches");
	f.add(app, "--train-size", "data.train_size", "Training samples");
	f.add(app, "--val-size", "data.val_size", "Validation samples");
	f.add(app, "--data-seed", "data.seed", "Seed of the synthetic task");
	f.add(app, "--image-size", "data.image_size", "Synthetic image side");
	f.add(app, "--noise", "data.noise", "Synthetic pixel noise");
	f.add(app, "--texture", "data.texture", "Synthetic grating frequency in cycles per pixel (0: plain blobs)");
}

void add_model(CLI::App* app, Flags& f)
{
	f.add(app, "--arch", "model.arch", "convnet4 or miniresnet");
	f.add(app, "--depth", "model.depth", "MiniResNet depth (8, 14, 20)");
	f.add(app, "--width", "model.width", "Channels (ConvNet4) or first-stage channels (MiniResNet)");
	f.add(app, "--norm", "model.norm", "bn, gn, ln, in, bcn, bcn-micro, fixed, none");
	f.add(app, "--groups", "model.groups", "Group count (0: min(32, C/4))");
	f.add(app, "--reparam", "model.reparam", "none, ws, wn, cwn");
	f.add_flag(app, "--ws", "model.ws", "Shorthand for --reparam ws");
	f.add_flag(app, "--frozen-affine", "model.frozen_affine", "Keep gamma = 1, beta = 0");
}

void add_train(CLI::App* app, Flags& f)
{
	f.add(app, "--lr", "train.lr", "Initial learning rate");
	f.add(app, "--lr-decay-epochs", "train.lr_decay_epochs", "Comma-separated epochs at which lr is multiplied by the decay factor");
	f.add(app, "--lr-decay-factor", "train.lr_decay_factor", "Decay factor");
	f.add(app, "--momentum", "train.momentum", "SGD momentum");
	f.add(app, "--weight-decay", "train.weight_decay", "Weight decay on conv and FC weights");
	f.add(app, "--batch", "train.batch", "Micro-batch size");
	f.add(app, "--iteration-size", "train.iteration_size", "Micro-batches averaged per optimizer step");
	f.add(app, "--epochs", "train.epochs", "Epochs");
	f.add_flag(app, "--augment", "train.augment", "Random flips and 4-pixel shifts");
	f.add_flag(app, "--diagnostics", "train.diagnostics", "Record gradient terms, StatDiff and underrepresentation");
}

fs::path run_directory(const Config& c, const std::string& command)
{
	if (c.has("output")) return c.get("output");
	const char* root = std::getenv("WSBCN_OUTPUT_ROOT");
	return fs::path(root && *root ? root : "runs") / (command + "-seed" + c.get_string("seed", "0"));
}

void prepare_run_dir(const fs::path& dir, Config& c)
{
	fs::create_directories(dir);
	c.set("code_version", WSBCN_VERSION);
	write_text_file(dir / "config.ini", c.to_string());
}

TaskData load_task(const Config& c)
{
	const std::string kind = c.get_string("data.kind", "synth");
	if (kind == "cifar10") {
		if (!c.has("data.path")) throw DomainError("--data cifar10 needs --data-path");
		return cifar10_task(c.get("data.path"), c.get_int("data.train_size", 5000), c.get_int("data.val_size", 1000));
	}
	if (kind != "synth") throw DomainError("unknown dataset kind '" + kind + "'");
	BlobOptions o;
	o.size = c.get_int("data.image_size", 16);
	o.noise = c.get_double("data.noise", o.noise);
	o.texture = c.get_double("data.texture", o.texture);
	return synthetic_task(static_cast<std::uint64_t>(c.get_int("data.seed", 1)), c.get_int("data.train_size", 2000),
	                      c.get_int("data.val_size", 1000), o);
}

ModelSpec model_spec(const Config& c, const Dataset& d, const std::string& default_norm = "bn")
{
	ModelSpec s;
	const std::string arch = c.get_string("model.arch", "convnet4");
	if (arch == "convnet4") s.arch = Arch::ConvNet4;
	else if (arch == "miniresnet") s.arch = Arch::MiniResNet;
	else throw DomainError("unknown architecture '" + arch + "'");
	s.depth = c.get_int("model.depth", 8);
	s.width = c.get_int("model.width", s.arch == Arch::ConvNet4 ? 32 : 16);
	s.norm = parse_norm(c.get_string("model.norm", default_norm), c.get_int("model.groups", 0));
	s.reparam = c.get_bool("model.ws", false) ? Reparam::WS : parse_reparam(c.get_string("model.reparam", "none"));
	s.in_channels = d.channels;
	s.num_classes = d.num_classes;
	return s;
}

TrainConfig train_config(const Config& c)
{
	TrainConfig t;
	t.seed = static_cast<std::uint64_t>(c.get_int("seed", 0));
	t.lr.initial = c.get_double("train.lr", 0.05);
	if (c.has("train.lr_decay_epochs"))
		for (double e : parse_double_list(c.get("train.lr_decay_epochs"))) t.lr.decay_epochs.push_back(static_cast<Index>(e));
	t.lr.factor = c.get_double("train.lr_decay_factor", 0.1);
	t.momentum = c.get_double("train.momentum", 0.9);
	t.weight_decay = c.get_double("train.weight_decay", 1e-4);
	t.batch = c.get_int("train.batch", 32);
	t.iteration_size = c.get_int("train.iteration_size", 1);
	t.epochs = c.get_int("train.epochs", 10);
	t.augment = c.get_bool("train.augment", false);
	t.diagnostics.enabled = c.get_bool("train.diagnostics", false);
	return t;
}

json history_json(const History& h)
{
	json j;
	j["aborted"] = h.aborted;
	if (h.aborted) {
		j["abort_step"] = h.abort_step;
		j["abort_reason"] = h.abort_reason;
	}
	j["epochs"] = h.epochs.size();
	if (!h.epochs.empty()) {
		j["final_train_loss"] = h.epochs.back().train_loss;
		j["final_train_err"] = h.epochs.back().train_err;
		j["final_val_err"] = h.epochs.back().val_err;
		j["steps"] = h.epochs.back().steps;
	}
	return j;
}

void write_report(const fs::path& dir, const json& j) { write_text_file(dir / "report.json", j.dump(1) + "\n"); }

bool same_history(const History& a, const History& b)
{
	if (a.epochs.size() != b.epochs.size() || a.aborted != b.aborted) return false;
	for (std::size_t e = 0; e < a.epochs.size(); ++e)
		if (a.epochs[e].train_loss != b.epochs[e].train_loss || a.epochs[e].val_err != b.epochs[e].val_err) return false;
	return true;
}

// --- subcommands -----------------------------------------------------------

template <typename Scalar>
int cmd_train(Config c, const fs::path& dir)
{
	const TaskData task = load_task(c);
	const ModelSpec spec = model_spec(c, task.train);
	const TrainConfig cfg = train_config(c);
	Model<Scalar> model = Model<Scalar>::build(spec, cfg.seed);
	if (c.get_bool("model.frozen_affine", false)) model.set_affine_trainable(false);
	Trainer<Scalar> trainer(model, cfg);
	if (c.has("train.resume")) restore_checkpoint(load_checkpoint(c.get("train.resume")), model, &trainer);

	MetricsSink sink(dir);
	fs::create_directories(dir / "checkpoints");
	const Index every = c.get_int("train.checkpoint_every", 1);
	const std::string run = spec.describe() + "/seed" + std::to_string(cfg.seed);
	const History h = trainer.fit(task.train, &task.val, [&](const EpochRecord& e) {
		emit_epoch(sink, run, model, e);
		std::cout << "epoch " << e.epoch << " loss " << e.train_loss << " train_err " << e.train_err << " val_err "
		          << e.val_err << std::endl;
		const Checkpoint ck = capture_checkpoint(model, &trainer);
		save_checkpoint(ck, dir / "checkpoints" / "last.ckpt");
		if (every > 0 && e.epoch % every == 0)
			save_checkpoint(ck, dir / "checkpoints" / ("epoch-" + std::to_string(e.epoch) + ".ckpt"));
	});
	json report = history_json(h);
	report["model"] = spec.describe();
	write_report(dir, report);
	if (h.aborted) throw NumericalError(h.abort_reason, h.abort_step);
	return kOk;
}

int cmd_gradcheck(Config c, const fs::path& dir)
{
	const auto seed = static_cast<std::uint64_t>(c.get_int("seed", 0));
	const double tol = c.get_double("gradcheck.tol", 1e-5);
	json report;
	report["seed"] = seed;
	report["tolerance"] = tol;
	bool ok = true;
	for (const auto& r : gradcheck_suite(seed)) {
		report["max_relative_error"][r.op] = r.error;
		const bool pass = r.error < tol;
		ok = ok && pass;
		std::printf("%-22s %.3e %s\n", r.op.c_str(), r.error, pass ? "ok" : "FAIL");
	}
	report["pass"] = ok;
	write_report(dir, report);
	return ok ? kOk : kCheckFailed;
}

int cmd_lipschitz(Config c, const fs::path& dir)
{
	if (!c.has("model.norm")) c.set("model.norm", "gn");
	if (!c.has("train.epochs")) c.set("train.epochs", "5");
	if (!c.has("data.train_size")) c.set("data.train_size", "1000");
	c.set("model.reparam", "ws");
	c.set("train.diagnostics", "true");
	const TaskData task = load_task(c);
	const ModelSpec spec = model_spec(c, task.train);
	const TrainConfig cfg = train_config(c);
	Model<double> model = Model<double>::build(spec, cfg.seed);
	Trainer<double> trainer(model, cfg);
	MetricsSink sink(dir);
	const std::string run = spec.describe() + "/seed" + std::to_string(cfg.seed);
	const History h = trainer.fit(task.train, &task.val, [&](const EpochRecord& e) { emit_epoch(sink, run, model, e); });
	const LipschitzSummary s = summarize_lipschitz(h);
	const double tol = c.get_double("lipschitz.tol", 1e-8);
	json report = history_json(h);
	report["records"] = s.records;
	report["max_residual_r1"] = s.max_r1;
	report["max_residual_r2"] = s.max_r2;
	report["mean_ws_fraction"] = s.mean_ws_fraction;
	report["mean_mean_fraction"] = s.mean_mean_fraction;
	report["pass"] = !h.aborted && s.max_r1 < tol && s.max_r2 < tol;
	write_report(dir, report);
	std::printf("steps %lld  max r1 %.3e  max r2 %.3e  mean <W_hat,g> share %.4f\n", static_cast<long long>(s.records),
	            s.max_r1, s.max_r2, s.mean_ws_fraction);
	if (h.aborted) throw NumericalError(h.abort_reason, h.abort_step);
	return report["pass"].get<bool>() ? kOk : kCheckFailed;
}

int cmd_hessian(Config c, const fs::path& dir)
{
	const auto seed = static_cast<std::uint64_t>(c.get_int("seed", 0));
	const auto cases = hessian_suite(seed, static_cast<int>(c.get_int("hessian.networks", 5)));
	json report;
	bool ok = true;
	for (const auto& k : cases) {
		const HessianReport& r = k.report;
		json j;
		j["fan_in"] = r.fan_in;
		j["max_row_sum"] = r.max_row_sum;
		j["max_col_sum"] = r.max_col_sum;
		j["total_sum"] = r.total_sum;
		j["frob2_h"] = r.frob2_h;
		j["bound"] = r.bound;
		j["inequality_slack"] = r.inequality_slack();
		j["relation_residual"] = r.relation_residual;
		j["pass"] = k.pass;
		report["cases"][k.name] = j;
		ok = ok && k.pass;
		std::printf("%-20s row %.2e col %.2e sum %.2e slack %.3e %s\n", k.name.c_str(), r.max_row_sum, r.max_col_sum,
		            r.total_sum, r.inequality_slack(), k.pass ? "ok" : "FAIL");
	}
	report["pass"] = ok;
	write_report(dir, report);
	return ok ? kOk : kCheckFailed;
}

template <typename Scalar>
int cmd_singularity(Config c, const fs::path& dir)
{
	if (!c.has("train.epochs")) c.set("train.epochs", "8");
	const TaskData task = load_task(c);
	ModelSpec spec = model_spec(c, task.train);
	spec.arch = Arch::ConvNet4;
	const TrainConfig cfg = train_config(c);
	SingularityOptions opt;
	opt.sigma_mu = c.get_doubles("grid.sigma_mu", opt.sigma_mu);
	opt.sigma_sigma = c.get_doubles("grid.sigma_sigma", opt.sigma_sigma);
	opt.affine_trainable = !c.get_bool("model.frozen_affine", false);
	opt.stats_seed = static_cast<std::uint64_t>(c.get_int("grid.stats_seed", 1));

	std::vector<SingularityCell> cells;
	const SingularityGrid g = run_singularity_grid<Scalar>(spec, cfg.seed, cfg, task.train, task.val, opt, &cells);

	// Reference: the same run with plain BN.
	ModelSpec bn_spec = spec;
	bn_spec.norm = parse_norm("bn");
	Model<Scalar> bn = Model<Scalar>::build(bn_spec, cfg.seed);
	bn.set_affine_trainable(opt.affine_trainable);
	Trainer<Scalar> bt(bn, cfg);
	const History bh = bt.fit(task.train, &task.val);
	const auto origin = std::find_if(cells.begin(), cells.end(),
	                                 [](const SingularityCell& k) { return k.sigma_mu == 0 && k.sigma_sigma == 0; });
	const bool origin_is_bn = origin != cells.end() && same_history(origin->history, bh);

	std::string csv = "sigma_mu,sigma_sigma,accuracy,failed,abort_step\n";
	MetricsSink sink(dir);
	for (std::size_t i = 0; i < cells.size(); ++i) {
		char line[160];
		std::snprintf(line, sizeof(line), "%.17g,%.17g,%.17g,%d,%ld\n", cells[i].sigma_mu, cells[i].sigma_sigma,
		              g.accuracy[i], g.failed[i] ? 1 : 0, g.abort_step[i]);
		csv += line;
		const std::string run = "cell/mu" + std::to_string(cells[i].sigma_mu) + "/sigma" + std::to_string(cells[i].sigma_sigma);
		Model<Scalar> names = Model<Scalar>::build(spec, 0);
		for (const auto& e : cells[i].history.epochs) emit_epoch(sink, run, names, e);
	}
	write_text_file(dir / "grid.csv", csv);
	json report;
	report["cells"] = cells.size();
	report["failure_threshold"] = g.failure_threshold;
	report["origin_matches_bn"] = origin_is_bn;
	report["accuracy"] = g.accuracy;
	write_report(dir, report);
	std::cout << csv << "origin matches plain BN: " << (origin_is_bn ? "yes" : "no") << "\n";
	return origin_is_bn ? kOk : kCheckFailed;
}

template <typename Scalar>
int cmd_statdiff(Config c, const fs::path& dir)
{
	if (!c.has("model.arch")) c.set("model.arch", "miniresnet");
	const TaskData task = load_task(c);
	const TrainConfig cfg = train_config(c);
	std::string csv = "label,epoch,mean,std\n";
	MetricsSink sink(dir);
	json report;
	for (const std::string norm : {"gn", "ln"}) {
		if (c.has("statdiff.norms") && c.get("statdiff.norms").find(norm) == std::string::npos) continue;
		for (bool ws : {false, true}) {
			Config local = c;
			local.set("model.norm", norm);
			local.set("model.reparam", ws ? "ws" : "none");
			local.set("model.ws", "false");
			const ModelSpec spec = model_spec(local, task.train);
			const StatDiffSeries s = run_statdiff_experiment<Scalar>(spec, cfg.seed, cfg, task.train, task.val);
			char line[160];
			std::snprintf(line, sizeof(line), "%s,0,%.17g,%.17g\n", s.label.c_str(), s.initial_mean, s.initial_std);
			csv += line;
			for (std::size_t e = 0; e < s.mean.size(); ++e) {
				std::snprintf(line, sizeof(line), "%s,%zu,%.17g,%.17g\n", s.label.c_str(), e + 1, s.mean[e], s.stddev[e]);
				csv += line;
			}
			Model<Scalar> names = Model<Scalar>::build(spec, 0);
			for (const auto& e : s.history.epochs) emit_epoch(sink, s.label, names, e);
			report[s.label]["final_mean"] = s.mean.empty() ? 0.0 : s.mean.back();
			report[s.label]["final_val_err"] = s.history.final_val_err();
			std::printf("%-6s initial %.4f final %.4f\n", s.label.c_str(), s.initial_mean, s.mean.empty() ? 0.0 : s.mean.back());
		}
	}
	write_text_file(dir / "statdiff.csv", csv);
	write_report(dir, report);
	return kOk;
}

int cmd_export(const std::string& checkpoint, const std::string& metrics_dir, const std::string& format,
               const std::string& output)
{
	std::string text;
	if (!checkpoint.empty()) {
		const Checkpoint ck = load_checkpoint(checkpoint);
		json j;
		for (const auto& [k, v] : ck.meta) j["meta"][k] = v;
		for (const auto& a : ck.arrays) {
			json t;
			t["name"] = a.name;
			t["shape"] = a.shape;
			t["values"] = a.values;
			j["tensors"].push_back(t);
		}
		text = j.dump(1) + "\n";
	} else {
		const auto rows = read_metrics_csv(fs::path(metrics_dir) / "metrics.csv");
		if (format == "json") {
			text = metrics_to_json(rows);
		} else {
			text = metrics_csv_header() + "\n";
			for (const auto& r : rows) text += to_csv_line(r) + "\n";
		}
	}
	if (output.empty()) std::cout << text;
	else write_text_file(output, text);
	return kOk;
}

} // namespace

int main(int argc, char** argv)
{
	CLI::App app{"Weight standardization and batch-channel normalization experiments"};
	app.set_version_flag("--version", std::string(WSBCN_VERSION));
	app.require_subcommand(1);

	std::map<std::string, Flags> flags;
	auto sub = [&](const std::string& name, const std::string& help) {
		CLI::App* s = app.add_subcommand(name, help);
		add_common(s, flags[name]);
		return s;
	};
	CLI::App* train = sub("train", "Train one model");
	add_data(train, flags["train"]);
	add_model(train, flags["train"]);
	add_train(train, flags["train"]);
	flags["train"].add(train, "--precision", "precision", "f32 (default) or f64");
	flags["train"].add(train, "--resume", "train.resume", "Checkpoint to continue from");
	flags["train"].add(train, "--checkpoint-every", "train.checkpoint_every", "Keep a checkpoint every k epochs");

	CLI::App* grad = sub("gradcheck", "Autodiff vs finite differences for every op (64-bit)");
	flags["gradcheck"].add(grad, "--tol", "gradcheck.tol", "Relative error tolerance");

	CLI::App* lip = sub("lipschitz", "Gradient-reduction terms and identities during WS training (64-bit)");
	add_data(lip, flags["lipschitz"]);
	add_model(lip, flags["lipschitz"]);
	add_train(lip, flags["lipschitz"]);

	CLI::App* hes = sub("hessian", "Hessian zero-sum and Frobenius checks (64-bit)");
	flags["hessian"].add(hes, "--networks", "hessian.networks", "Number of random tiny networks");

	CLI::App* grid = sub("singularity-grid", "Train ConvNet4 with fixed normalization statistics over a grid");
	add_data(grid, flags["singularity-grid"]);
	add_model(grid, flags["singularity-grid"]);
	add_train(grid, flags["singularity-grid"]);
	flags["singularity-grid"].add(grid, "--sigma-mu", "grid.sigma_mu", "Comma-separated sigma_mu values");
	flags["singularity-grid"].add(grid, "--sigma-sigma", "grid.sigma_sigma", "Comma-separated sigma_sigma values");
	flags["singularity-grid"].add(grid, "--stats-seed", "grid.stats_seed", "Seed for the sampled statistics");
	flags["singularity-grid"].add(grid, "--precision", "precision", "f32 (default) or f64");

	CLI::App* sd = sub("statdiff", "StatDiff over training for GN/LN with and without WS");
	add_data(sd, flags["statdiff"]);
	add_model(sd, flags["statdiff"]);
	add_train(sd, flags["statdiff"]);
	flags["statdiff"].add(sd, "--norms", "statdiff.norms", "Subset of gn,ln");
	flags["statdiff"].add(sd, "--precision", "precision", "f32 (default) or f64");

	CLI::App* exp = app.add_subcommand("export", "Dump a checkpoint as JSON or convert metrics");
	std::string ex_ckpt, ex_metrics, ex_format = "json", ex_out;
	auto* ck_opt = exp->add_option("--checkpoint", ex_ckpt, "Checkpoint file")->check(CLI::ExistingFile);
	exp->add_option("--metrics", ex_metrics, "Run directory containing metrics.csv")->excludes(ck_opt);
	exp->add_option("--format", ex_format, "json or csv (metrics only)")->check(CLI::IsMember({"json", "csv"}));
	exp->add_option("--output", ex_out, "Output file (default: stdout)");

	try {
		app.parse(argc, argv);
	} catch (const CLI::ParseError& e) {
		const int rc = app.exit(e);
		return rc == 0 ? kOk : kUsage;
	}

	fs::path dir;
	try {
		if (exp->parsed()) {
			if (ex_ckpt.empty() == ex_metrics.empty()) throw DomainError("export needs exactly one of --checkpoint, --metrics");
			return cmd_export(ex_ckpt, ex_metrics, ex_format, ex_out);
		}
		const std::string name = app.get_subcommands().front()->get_name();
		Config c = flags.at(name).merged(name);
		dir = run_directory(c, name);
		const std::string precision = c.get_string("precision", "f32");
		if (precision != "f32" && precision != "f64") throw DomainError("precision must be f32 or f64");
		const bool f64 = precision == "f64";
		prepare_run_dir(dir, c);
		if (name == "train") return f64 ? cmd_train<double>(c, dir) : cmd_train<float>(c, dir);
		if (name == "gradcheck") return cmd_gradcheck(c, dir);
		if (name == "lipschitz") return cmd_lipschitz(c, dir);
		if (name == "hessian") return cmd_hessian(c, dir);
		if (name == "singularity-grid") return f64 ? cmd_singularity<double>(c, dir) : cmd_singularity<float>(c, dir);
		if (name == "statdiff") return f64 ? cmd_statdiff<double>(c, dir) : cmd_statdiff<float>(c, dir);
		return report_failure({kUsage, "usage", "unknown subcommand " + name}, dir);
	} catch (const NumericalError& e) {
		return report_failure({kNumerical, "numerical", e.what(), e.step}, dir);
	} catch (const ContractError& e) {
		return report_failure({kContract, "contract", e.what()}, dir);
	} catch (const IoError& e) {
		return report_failure({kIo, "io", e.what()}, dir);
	} catch (const fs::filesystem_error& e) {
		return report_failure({kIo, "io", e.what()}, dir);
	} catch (const FormatError& e) {
		return report_failure({kFormat, "format", e.what()}, dir);
	} catch (const DomainError& e) {
		return report_failure({kUsage, "usage", e.what()}, dir);
	} catch (const ShapeError& e) {
		return report_failure({kUsage, "usage", e.what()}, dir);
	} catch (const std::exception& e) {
		return report_failure({kInternal, "internal", e.what()}, dir);
	}
}
