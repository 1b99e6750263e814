#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace wsbcn {

/// One measurement. `layer` is empty for model-level metrics.
struct MetricsRow {
	std::string run_id;
	std::int64_t epoch = 0;
	std::int64_t step = 0;
	std::string metric;
	std::string layer;
	double value = 0.0;

	bool operator==(const MetricsRow&) const = default;
};

/// Header and row serialization for the CSV schema
/// run_id,epoch,step,metric,layer,value. Values use 17 significant digits so
/// they read back exactly.
std::string metrics_csv_header();
std::string to_csv_line(const MetricsRow& row);
std::vector<MetricsRow> parse_metrics_csv(const std::string& text);
std::string metrics_to_json(const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> parse_metrics_json(const std::string& text);

/// Append-only sink writing `metrics.csv` and `metrics.json` in a directory.
/// flush() appends the pending rows to the CSV and rewrites the JSON, so a
/// crash loses at most the rows since the last flush.
class MetricsSink {
public:
	explicit MetricsSink(std::filesystem::path dir);

	void add(MetricsRow row);
	void flush();
	const std::vector<MetricsRow>& rows() const { return rows_; }
	const std::filesystem::path& dir() const { return dir_; }

private:
	std::filesystem::path dir_;
	std::vector<MetricsRow> rows_;
	std::size_t flushed_ = 0;
};

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& file);
std::vector<MetricsRow> read_metrics_json(const std::filesystem::path& file);

std::string read_text_file(const std::filesystem::path& file);
void write_text_file(const std::filesystem::path& file, const std::string& text);

} // namespace wsbcn
