#pragma once

// Minimal RFC 4180 reader/writer plus round-trip number formatting.

#include "ilicast/errors.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace ilicast::csv {

using Record = std::vector<std::string>;

// Reads one logical record; quoted fields may contain separators, quotes ("")
// and newlines. Returns false at end of input.
inline bool read_record(std::istream &in, Record &out) {
	out.clear();
	std::string field;
	bool in_quotes = false;
	bool any = false;
	char ch;
	while (in.get(ch)) {
		any = true;
		if (in_quotes) {
			if (ch == '"') {
				if (in.peek() == '"') {
					in.get(ch);
					field.push_back('"');
				} else {
					in_quotes = false;
				}
			} else {
				field.push_back(ch);
			}
			continue;
		}
		if (ch == '"') {
			in_quotes = true;
		} else if (ch == ',') {
			out.push_back(std::move(field));
			field.clear();
		} else if (ch == '\n') {
			out.push_back(std::move(field));
			return true;
		} else if (ch != '\r') {
			field.push_back(ch);
		}
	}
	if (!any) {
		return false;
	}
	out.push_back(std::move(field));
	return true;
}

inline std::string escape(std::string_view field) {
	if (field.find_first_of(",\"\n\r") == std::string_view::npos) {
		return std::string(field);
	}
	std::string out = "\"";
	for (char c : field) {
		if (c == '"') {
			out += "\"\"";
		} else {
			out.push_back(c);
		}
	}
	out.push_back('"');
	return out;
}

inline void write_record(std::ostream &out, const Record &rec) {
	for (std::size_t i = 0; i < rec.size(); ++i) {
		if (i) {
			out << ',';
		}
		out << escape(rec[i]);
	}
	out << '\n';
}

inline std::string_view trim(std::string_view s) {
	while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
		s.remove_prefix(1);
	}
	while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
		s.remove_suffix(1);
	}
	return s;
}

// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
	if (std::isnan(v)) {
		return "NA";
	}
	char buf[32];
	auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
	return std::string(buf, p);
}

inline std::optional<double> parse_double(std::string_view s) {
	s = trim(s);
	if (s.empty()) {
		return std::nullopt;
	}
	if (s.front() == '+') {
		s.remove_prefix(1);
	}
	double v = 0;
	auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
	if (ec != std::errc{} || p != s.data() + s.size() || !std::isfinite(v)) {
		return std::nullopt;
	}
	return v;
}

inline std::optional<long long> parse_int(std::string_view s) {
	s = trim(s);
	long long v = 0;
	auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
	if (ec != std::errc{} || p != s.data() + s.size() || s.empty()) {
		// Counts are sometimes exported as "123.0".
		if (auto d = parse_double(s); d && std::floor(*d) == *d && std::abs(*d) < 9e15) {
			return static_cast<long long>(*d);
		}
		return std::nullopt;
	}
	return v;
}

inline std::string read_file(const std::string &path) {
	std::ifstream in(path, std::ios::binary);
	if (!in) {
		throw Error("cannot open " + path);
	}
	std::ostringstream ss;
	ss << in.rdbuf();
	return ss.str();
}

} // namespace ilicast::csv
