#include "wsbcn/config.hpp"

#include <cctype>
#include <charconv>
#include <sstream>

#include "wsbcn/errors.hpp"
#include "wsbcn/metrics.hpp"

namespace wsbcn {

namespace {

std::string trim(const std::string& s)
{
	const auto b = s.find_first_not_of(" \t\r");
	if (b == std::string::npos) return "";
	const auto e = s.find_last_not_of(" \t\r");
	return s.substr(b, e - b + 1);
}

bool valid_name(const std::string& s)
{
	if (s.empty()) return false;
	for (char c : s)
		if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
	return true;
}

double to_double(const std::string& key, const std::string& v)
{
	double d = 0.0;
	const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), d);
	if (ec != std::errc() || p != v.data() + v.size()) throw DomainError("config '" + key + "': '" + v + "' is not a number");
	return d;
}

} // namespace

Config Config::parse(const std::string& text)
{
	Config c;
	std::istringstream in(text);
	std::string line, section;
	int n = 0;
	while (std::getline(in, line)) {
		++n;
		const std::string t = trim(line);
		if (t.empty() || t[0] == '#' || t[0] == ';') continue;
		if (t.front() == '[') {
			if (t.back() != ']' || !valid_name(trim(t.substr(1, t.size() - 2))))
				throw FormatError("config line " + std::to_string(n) + ": bad section header '" + t + "'");
			section = trim(t.substr(1, t.size() - 2));
			continue;
		}
		const auto eq = t.find('=');
		if (eq == std::string::npos) throw FormatError("config line " + std::to_string(n) + ": expected key = value");
		const std::string key = trim(t.substr(0, eq));
		if (!valid_name(key)) throw FormatError("config line " + std::to_string(n) + ": bad key '" + key + "'");
		const std::string full = section.empty() ? key : section + "." + key;
		if (c.has(full)) throw FormatError("config line " + std::to_string(n) + ": duplicate key '" + full + "'");
		c.values_[full] = trim(t.substr(eq + 1));
	}
	return c;
}

Config Config::load(const std::filesystem::path& file) { return parse(read_text_file(file)); }

void Config::set(const std::string& key, const std::string& value)
{
	const auto dot = key.find('.');
	const bool ok = dot == std::string::npos ? valid_name(key)
	                                          : valid_name(key.substr(0, dot)) && valid_name(key.substr(dot + 1));
	if (!ok) throw DomainError("bad config key '" + key + "'");
	if (value.find('\n') != std::string::npos || trim(value) != value)
		throw DomainError("config value for '" + key + "' has surrounding whitespace or a newline");
	values_[key] = value;
}

const std::string& Config::get(const std::string& key) const
{
	const auto it = values_.find(key);
	if (it == values_.end()) throw DomainError("config key '" + key + "' is not set");
	return it->second;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const
{
	return has(key) ? get(key) : fallback;
}

long long Config::get_int(const std::string& key, long long fallback) const
{
	if (!has(key)) return fallback;
	const std::string& v = get(key);
	long long x = 0;
	const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
	if (ec != std::errc() || p != v.data() + v.size()) throw DomainError("config '" + key + "': '" + v + "' is not an integer");
	return x;
}

double Config::get_double(const std::string& key, double fallback) const
{
	return has(key) ? to_double(key, get(key)) : fallback;
}

bool Config::get_bool(const std::string& key, bool fallback) const
{
	if (!has(key)) return fallback;
	const std::string& v = get(key);
	if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
	if (v == "false" || v == "0" || v == "no" || v == "off") return false;
	throw DomainError("config '" + key + "': '" + v + "' is not a boolean");
}

std::vector<double> Config::get_doubles(const std::string& key, const std::vector<double>& fallback) const
{
	return has(key) ? parse_double_list(get(key)) : fallback;
}

std::string Config::to_string() const
{
	std::ostringstream out;
	std::string section = "\x01";
	// std::map orders unsectioned keys first only if they sort first, so
	// write them in a separate pass.
	for (const auto& [k, v] : values_)
		if (k.find('.') == std::string::npos) out << k << " = " << v << "\n";
	for (const auto& [k, v] : values_) {
		const auto dot = k.find('.');
		if (dot == std::string::npos) continue;
		const std::string s = k.substr(0, dot);
		if (s != section) {
			out << "\n[" << s << "]\n";
			section = s;
		}
		out << k.substr(dot + 1) << " = " << v << "\n";
	}
	return out.str();
}

std::vector<double> parse_double_list(const std::string& text)
{
	std::vector<double> out;
	std::string item;
	std::istringstream in(text);
	while (std::getline(in, item, ',')) {
		item = trim(item);
		if (item.empty()) throw DomainError("empty entry in list '" + text + "'");
		out.push_back(to_double("list", item));
	}
	if (out.empty()) throw DomainError("empty list");
	return out;
}

} // namespace wsbcn
