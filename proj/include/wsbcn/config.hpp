#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace wsbcn {

/// Flat key-value configuration with one level of sections:
///
///   # comment
///   seed = 3
///   [model]
///   norm = gn
///
/// Keys are addressed as "section.key" (or "key" before any section).
class Config {
public:
	static Config parse(const std::string& text);
	static Config load(const std::filesystem::path& file);

	bool has(const std::string& key) const { return values_.count(key) > 0; }
	void set(const std::string& key, const std::string& value);
	const std::string& get(const std::string& key) const;

	std::string get_string(const std::string& key, const std::string& fallback) const;
	long long get_int(const std::string& key, long long fallback) const;
	double get_double(const std::string& key, double fallback) const;
	bool get_bool(const std::string& key, bool fallback) const;
	std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;

	/// Serialized form; parse(to_string()) gives back an equal config.
	std::string to_string() const;
	const std::map<std::string, std::string>& values() const { return values_; }
	bool operator==(const Config&) const = default;

private:
	std::map<std::string, std::string> values_;
};

std::vector<double> parse_double_list(const std::string& text);

} // namespace wsbcn
