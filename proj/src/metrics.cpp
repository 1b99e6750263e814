#include "wsbcn/metrics.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "wsbcn/errors.hpp"

namespace wsbcn {

namespace {

std::string format_double(double v)
{
	char buf[32];
	std::snprintf(buf, sizeof(buf), "%.17g", v);
	return buf;
}

// Run ids, metric and layer names are restricted so the CSV never needs quoting.
void check_field(const std::string& s, const char* what)
{
	for (char c : s)
		if (c == ',' || c == '"' || c == '\n' || c == '\r')
			throw DomainError(std::string("metrics ") + what + " '" + s + "' contains a reserved character");
}

std::vector<std::string> split(const std::string& line, char sep)
{
	std::vector<std::string> out;
	std::string cur;
	for (char c : line) {
		if (c == sep) {
			out.push_back(cur);
			cur.clear();
		} else {
			cur += c;
		}
	}
	out.push_back(cur);
	return out;
}

std::int64_t parse_int(const std::string& s, std::size_t line)
{
	std::int64_t v = 0;
	const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
	if (ec != std::errc() || p != s.data() + s.size())
		throw FormatError("metrics CSV line " + std::to_string(line) + ": bad integer '" + s + "'");
	return v;
}

} // namespace

std::string metrics_csv_header() { return "run_id,epoch,step,metric,layer,value"; }

std::string to_csv_line(const MetricsRow& r)
{
	check_field(r.run_id, "run id");
	check_field(r.metric, "metric");
	check_field(r.layer, "layer");
	return r.run_id + "," + std::to_string(r.epoch) + "," + std::to_string(r.step) + "," + r.metric + "," + r.layer +
	       "," + format_double(r.value);
}

std::vector<MetricsRow> parse_metrics_csv(const std::string& text)
{
	std::istringstream in(text);
	std::string line;
	if (!std::getline(in, line) || line != metrics_csv_header()) throw FormatError("metrics CSV has no valid header");
	std::vector<MetricsRow> rows;
	std::size_t n = 1;
	while (std::getline(in, line)) {
		++n;
		if (line.empty()) continue;
		const auto f = split(line, ',');
		if (f.size() != 6) throw FormatError("metrics CSV line " + std::to_string(n) + " has " + std::to_string(f.size()) + " fields");
		MetricsRow r{f[0], parse_int(f[1], n), parse_int(f[2], n), f[3], f[4], 0.0};
		try {
			std::size_t used = 0;
			r.value = std::stod(f[5], &used);
			if (used != f[5].size()) throw std::invalid_argument("trailing");
		} catch (const std::exception&) {
			throw FormatError("metrics CSV line " + std::to_string(n) + ": bad value '" + f[5] + "'");
		}
		rows.push_back(std::move(r));
	}
	return rows;
}

std::string metrics_to_json(const std::vector<MetricsRow>& rows)
{
	nlohmann::ordered_json arr = nlohmann::ordered_json::array();
	for (const auto& r : rows) {
		nlohmann::ordered_json o;
		o["run_id"] = r.run_id;
		o["epoch"] = r.epoch;
		o["step"] = r.step;
		o["metric"] = r.metric;
		o["layer"] = r.layer;
		// JSON has no NaN/Inf; those are written as strings.
		if (std::isfinite(r.value)) o["value"] = r.value;
		else o["value"] = format_double(r.value);
		arr.push_back(std::move(o));
	}
	return arr.dump(1) + "\n";
}

std::vector<MetricsRow> parse_metrics_json(const std::string& text)
{
	std::vector<MetricsRow> rows;
	try {
		const auto arr = nlohmann::json::parse(text);
		for (const auto& o : arr) {
			MetricsRow r{o.at("run_id").get<std::string>(), o.at("epoch").get<std::int64_t>(),
			             o.at("step").get<std::int64_t>(), o.at("metric").get<std::string>(),
			             o.at("layer").get<std::string>(), 0.0};
			const auto& v = o.at("value");
			r.value = v.is_string() ? std::stod(v.get<std::string>()) : v.get<double>();
			rows.push_back(std::move(r));
		}
	} catch (const nlohmann::json::exception& e) {
		throw FormatError(std::string("metrics JSON: ") + e.what());
	}
	return rows;
}

MetricsSink::MetricsSink(std::filesystem::path dir) : dir_(std::move(dir))
{
	std::filesystem::create_directories(dir_);
	write_text_file(dir_ / "metrics.csv", metrics_csv_header() + "\n");
	write_text_file(dir_ / "metrics.json", "[]\n");
}

void MetricsSink::add(MetricsRow row)
{
	to_csv_line(row);  // validates fields now rather than at flush
	rows_.push_back(std::move(row));
}

void MetricsSink::flush()
{
	{
		std::ofstream csv(dir_ / "metrics.csv", std::ios::app);
		if (!csv) throw IoError("cannot append to " + (dir_ / "metrics.csv").string());
		for (std::size_t i = flushed_; i < rows_.size(); ++i) csv << to_csv_line(rows_[i]) << "\n";
	}
	flushed_ = rows_.size();
	write_text_file(dir_ / "metrics.json", metrics_to_json(rows_));
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& file) { return parse_metrics_csv(read_text_file(file)); }

std::vector<MetricsRow> read_metrics_json(const std::filesystem::path& file)
{
	return parse_metrics_json(read_text_file(file));
}

std::string read_text_file(const std::filesystem::path& file)
{
	std::ifstream in(file, std::ios::binary);
	if (!in) throw IoError("cannot open " + file.string());
	std::ostringstream ss;
	ss << in.rdbuf();
	return ss.str();
}

void write_text_file(const std::filesystem::path& file, const std::string& text)
{
	const auto tmp = file.string() + ".tmp";
	{
		std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
		if (!out) throw IoError("cannot write " + tmp);
		out << text;
		if (!out) throw IoError("failed writing " + tmp);
	}
	std::filesystem::rename(tmp, file);
}

} // namespace wsbcn
