#pragma once

// MMWR epidemiological week calendar and the influenza season mask.
//
// An MMWR week runs Sunday through Saturday. Week 1 of a year is the first
// week that has at least four days in that calendar year, so a year has
// either 52 or 53 weeks.

#include "ilicast/errors.hpp"

#include <charconv>
#include <chrono>
#include <compare>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

namespace ilicast {

namespace detail {

inline std::chrono::sys_days mmwr_year_start(int year) {
	using namespace std::chrono;
	const sys_days jan1{std::chrono::year{year} / January / 1};
	const int wd = static_cast<int>(weekday{jan1}.c_encoding()); // 0 = Sunday
	return wd <= 3 ? jan1 - days{wd} : jan1 + days{7 - wd};
}

inline long floor_div(long a, long b) {
	long q = a / b;
	if ((a % b != 0) && ((a < 0) != (b < 0))) {
		--q;
	}
	return q;
}

} // namespace detail

inline int mmwr_weeks_in_year(int year) {
	return static_cast<int>((detail::mmwr_year_start(year + 1) - detail::mmwr_year_start(year)).count() / 7);
}

struct Epiweek {
	int year = 0;
	int week = 0;

	constexpr Epiweek() = default;

	Epiweek(int y, int w) : year(y), week(w) {
		if (w < 1 || w > mmwr_weeks_in_year(y)) {
			throw DomainError("invalid epiweek " + std::to_string(y) + "w" + std::to_string(w));
		}
	}

	static Epiweek from_date(std::chrono::sys_days day) {
		using namespace std::chrono;
		int y = static_cast<int>(year_month_day{day}.year());
		if (day >= detail::mmwr_year_start(y + 1)) {
			++y;
		} else if (day < detail::mmwr_year_start(y)) {
			--y;
		}
		const auto offset = (day - detail::mmwr_year_start(y)).count();
		return Epiweek{y, static_cast<int>(offset / 7) + 1};
	}

	// Sunday that opens the week.
	std::chrono::sys_days start_date() const {
		return detail::mmwr_year_start(year) + std::chrono::days{7 * (week - 1)};
	}

	// Monotone week index; consecutive weeks differ by exactly one.
	long ordinal() const {
		return detail::floor_div(start_date().time_since_epoch().count() + 4, 7);
	}

	static Epiweek from_ordinal(long ordinal) {
		return from_date(std::chrono::sys_days{std::chrono::days{ordinal * 7 - 4}});
	}

	Epiweek plus(long weeks) const {
		return from_ordinal(ordinal() + weeks);
	}
	Epiweek next() const {
		return plus(1);
	}
	Epiweek prev() const {
		return plus(-1);
	}

	std::string to_string() const {
		char buf[16];
		std::snprintf(buf, sizeof buf, "%04dw%02d", year, week);
		return buf;
	}

	// Accepts "2015w40", "2015W40", "2015-40" and the compact "201540".
	static Epiweek parse(std::string_view text) {
		auto to_int = [&](std::string_view s) {
			int v = 0;
			auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
			if (ec != std::errc{} || p != s.data() + s.size() || s.empty()) {
				throw DomainError("cannot parse epiweek '" + std::string(text) + "'");
			}
			return v;
		};
		const auto sep = text.find_first_of("wW-");
		if (sep != std::string_view::npos) {
			return Epiweek{to_int(text.substr(0, sep)), to_int(text.substr(sep + 1))};
		}
		if (text.size() == 6) {
			return Epiweek{to_int(text.substr(0, 4)), to_int(text.substr(4))};
		}
		throw DomainError("cannot parse epiweek '" + std::string(text) + "'");
	}

	friend constexpr auto operator<=>(const Epiweek &, const Epiweek &) = default;
};

inline constexpr int kSeasonFirstWeek = 40;
inline constexpr int kSeasonLastWeek = 18;

// Weeks 40 through the end of the year (53 included when it exists) and 1..18.
inline bool in_season(const Epiweek &w) {
	return w.week >= kSeasonFirstWeek || w.week <= kSeasonLastWeek;
}

// Season named by the year in which it starts: Season{2014} is "2014-15".
struct Season {
	int start_year = 0;

	std::string label() const {
		char buf[16];
		std::snprintf(buf, sizeof buf, "%04d-%02d", start_year, (start_year + 1) % 100);
		return buf;
	}

	static Season parse(std::string_view text) {
		int y = 0;
		auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), y);
		if (ec != std::errc{} || p == text.data()) {
			throw DomainError("cannot parse season '" + std::string(text) + "'");
		}
		const std::string_view rest(p, text.data() + text.size() - p);
		if (!rest.empty()) {
			if (rest.front() != '-') {
				throw DomainError("cannot parse season '" + std::string(text) + "'");
			}
			int tail = 0;
			auto [q, ec2] = std::from_chars(rest.data() + 1, rest.data() + rest.size(), tail);
			if (ec2 != std::errc{} || q != rest.data() + rest.size() ||
			    (tail != (y + 1) % 100 && tail != y + 1)) {
				throw DomainError("season '" + std::string(text) + "' does not span consecutive years");
			}
		}
		return Season{y};
	}

	Epiweek first_week() const {
		return Epiweek{start_year, kSeasonFirstWeek};
	}
	Epiweek last_week() const {
		return Epiweek{start_year + 1, kSeasonLastWeek};
	}

	// In-season weeks in chronological order.
	std::vector<Epiweek> weeks() const {
		std::vector<Epiweek> out;
		const long last = last_week().ordinal();
		for (long o = first_week().ordinal(); o <= last; ++o) {
			out.push_back(Epiweek::from_ordinal(o));
		}
		return out;
	}

	friend constexpr auto operator<=>(const Season &, const Season &) = default;
};

inline Season season_of(const Epiweek &w) {
	if (!in_season(w)) {
		throw DomainError("week " + w.to_string() + " is outside the influenza season");
	}
	return Season{w.week >= kSeasonFirstWeek ? w.year : w.year - 1};
}

} // namespace ilicast
