#pragma once

// Seeded synthetic ILI surveillance data for desk-scale runs.
//
// Each state's %ILI is a seasonal template (baseline plus one Gaussian bump per
// season) plus an AR(1) noise process whose innovations mix a common shock and
// a state-specific shock:
//
//   e[s,t] = phi * e[s,t-1] + sigma_s * (sqrt(rho) z[t] + sqrt(1 - rho) z[s,t])
//   pct[s,t] = max(0, template_s(t) + e[s,t])
//
// A per-state peak shift delays a state's bump relative to the season peak.
// With wave_speed set, each state's bump is further delayed by wave_speed
// weeks per adjacency hop from wave_origin, so an epidemic spreads across
// borders and neighbors lead one another.

#include "ilicast/epiweek.hpp"
#include "ilicast/errors.hpp"
#include "ilicast/geography.hpp"
#include "ilicast/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace ilicast {

struct StateCurve {
	double baseline = 1.0;     // off-season %ILI
	double peak = 4.0;         // bump height above baseline, %ILI
	double noise = 0.15;       // innovation sd, %ILI
	double peak_shift = 0.0;   // weeks relative to the season peak
	double visits = 20000;     // mean weekly total visits
	double providers = 100;    // mean weekly reporting providers
};

struct SyntheticConfig {
	int first_season = 2010;
	int num_seasons = 3;
	std::vector<std::string> states;
	StateCurve defaults;
	std::map<std::string, StateCurve> overrides;
	double correlation = 0.5;    // rho, share of innovation variance common to all states
	double ar_coef = 0.6;        // phi
	double peak_week = 18.0;     // season peak, weeks after week 40
	double width = 4.0;          // bump sd, weeks
	double peak_week_jitter = 2.0;  // sd of the per-season peak offset, weeks
	double amplitude_jitter = 0.2;  // sd of the per-season log amplitude multiplier
	double visits_jitter = 0.05;    // uniform relative jitter on weekly visits and providers
	int lead_in_weeks = 6;          // weeks generated before the first season's week 40
	bool include_national = false;
	std::string wave_origin;        // state the spatial wave starts from
	double wave_speed = 0;          // weeks of delay per adjacency hop
	std::map<std::string, double> wave_delay; // filled by resolve_wave

	const StateCurve &curve(const std::string &state) const {
		auto it = overrides.find(state);
		return it == overrides.end() ? defaults : it->second;
	}

	void check() const {
		if (num_seasons < 1) {
			throw ConfigError("synthetic config needs at least one season");
		}
		if (states.empty()) {
			throw ConfigError("synthetic config needs at least one state");
		}
		if (!(correlation >= 0 && correlation <= 1)) {
			throw ConfigError("correlation must lie in [0, 1]");
		}
		if (!(std::abs(ar_coef) < 1)) {
			throw ConfigError("ar_coef must lie in (-1, 1)");
		}
		if (!(width > 0)) {
			throw ConfigError("width must be positive");
		}
		for (const auto &s : states) {
			if (!is_state_code(s)) {
				throw ConfigError("unknown state '" + s + "'");
			}
			const auto &c = curve(s);
			if (!(c.visits > 0)) {
				throw ConfigError("visits for " + s + " must be positive");
			}
			// Rounded counts must stay within the percentage reporting tolerance.
			if (c.visits * (1 - visits_jitter) < 1000) {
				throw ConfigError("visits for " + s + " must be at least 1000 after jitter");
			}
			if (!(c.providers > 0)) {
				throw ConfigError("providers for " + s + " must be positive");
			}
			if (c.baseline < 0 || c.peak < 0 || c.noise < 0) {
				throw ConfigError("baseline, peak and noise for " + s + " must be nonnegative");
			}
		}
		if (!(visits_jitter >= 0 && visits_jitter < 1)) {
			throw ConfigError("visits_jitter must lie in [0, 1)");
		}
		if (wave_speed != 0 && std::find(states.begin(), states.end(), wave_origin) == states.end()) {
			throw ConfigError("wave_origin must be one of the configured states");
		}
	}

	double delay(const std::string &state) const {
		auto it = wave_delay.find(state);
		return curve(state).peak_shift + (it == wave_delay.end() ? 0.0 : it->second);
	}

	// Hop distances from wave_origin over the graph restricted to the
	// configured states. States the wave cannot reach get no extra delay.
	void resolve_wave(const AdjacencyGraph &graph) {
		wave_delay.clear();
		if (wave_speed == 0) {
			return;
		}
		check();
		const auto g = graph.restricted_to(states);
		std::map<std::string, int> hops{{wave_origin, 0}};
		std::deque<std::string> queue{wave_origin};
		while (!queue.empty()) {
			const auto s = queue.front();
			queue.pop_front();
			for (const auto &n : g.neighbors(s)) {
				if (!hops.contains(n)) {
					hops[n] = hops[s] + 1;
					queue.push_back(n);
				}
			}
		}
		for (const auto &[s, h] : hops) {
			wave_delay[s] = wave_speed * h;
		}
	}
};

// Per-season peak timing and amplitude draws.
struct SeasonDraw {
	int start_year = 0;
	double peak_offset = 0;   // weeks added to peak_week
	double amplitude = 1;     // multiplier on each state's peak
};

struct SyntheticData {
	ObservationTable table;
	std::vector<SeasonDraw> seasons;
};

inline Epiweek synthetic_first_week(const SyntheticConfig &cfg) {
	return Season{cfg.first_season}.first_week().plus(-cfg.lead_in_weeks);
}

inline Epiweek synthetic_last_week(const SyntheticConfig &cfg) {
	return Season{cfg.first_season + cfg.num_seasons - 1}.last_week();
}

// Noise-free %ILI for a state at a week, given the season draws.
inline double seasonal_template(const SyntheticConfig &cfg, const std::vector<SeasonDraw> &seasons,
                                const std::string &state, const Epiweek &week) {
	const auto &c = cfg.curve(state);
	const double shift = cfg.delay(state);
	double value = c.baseline;
	const long o = week.ordinal();
	for (const auto &s : seasons) {
		const double center =
		    static_cast<double>(Season{s.start_year}.first_week().ordinal()) + cfg.peak_week + s.peak_offset + shift;
		const double z = (static_cast<double>(o) - center) / cfg.width;
		value += c.peak * s.amplitude * std::exp(-0.5 * z * z);
	}
	return value;
}

inline SyntheticData generate_synthetic(const SyntheticConfig &cfg, std::uint64_t seed) {
	cfg.check();
	if (cfg.wave_speed != 0 && cfg.wave_delay.empty()) {
		throw ConfigError("wave_speed is set but the wave was not resolved against an adjacency graph");
	}
	std::mt19937_64 rng(seed);
	std::normal_distribution<double> normal(0.0, 1.0);
	std::uniform_real_distribution<double> uniform(-1.0, 1.0);

	SyntheticData out;
	for (int k = 0; k < cfg.num_seasons; ++k) {
		SeasonDraw d;
		d.start_year = cfg.first_season + k;
		d.peak_offset = cfg.peak_week_jitter * normal(rng);
		d.amplitude = std::exp(cfg.amplitude_jitter * normal(rng));
		out.seasons.push_back(d);
	}

	const auto first = synthetic_first_week(cfg).ordinal();
	const auto last = synthetic_last_week(cfg).ordinal();
	const double rho = cfg.correlation;
	const double phi = cfg.ar_coef;
	const double stationary = 1.0 / std::sqrt(1.0 - phi * phi);

	const std::size_t n = cfg.states.size();
	std::vector<double> noise(n, 0.0);
	{
		const double z0 = normal(rng);
		for (std::size_t i = 0; i < n; ++i) {
			const double zi = normal(rng);
			noise[i] = cfg.curve(cfg.states[i]).noise * stationary * (std::sqrt(rho) * z0 + std::sqrt(1 - rho) * zi);
		}
	}

	std::vector<Observation> rows;
	rows.reserve(static_cast<std::size_t>(last - first + 1) * (n + 1));
	for (long o = first; o <= last; ++o) {
		const Epiweek w = Epiweek::from_ordinal(o);
		if (o > first) {
			const double z0 = normal(rng);
			for (std::size_t i = 0; i < n; ++i) {
				const double zi = normal(rng);
				noise[i] = phi * noise[i] +
				           cfg.curve(cfg.states[i]).noise * (std::sqrt(rho) * z0 + std::sqrt(1 - rho) * zi);
			}
		}
		long long nat_c = 0;
		long long nat_v = 0;
		long long nat_p = 0;
		for (std::size_t i = 0; i < n; ++i) {
			const auto &state = cfg.states[i];
			const auto &c = cfg.curve(state);
			Observation ob;
			ob.location = state;
			ob.week = w;
			ob.ili_pct = std::max(0.0, seasonal_template(cfg, out.seasons, state, w) + noise[i]);
			ob.total_visits = std::llround(c.visits * (1 + cfg.visits_jitter * uniform(rng)));
			ob.providers = std::max<long long>(1, std::llround(c.providers * (1 + cfg.visits_jitter * uniform(rng))));
			ob.ili_count = std::llround(ob.ili_pct * static_cast<double>(ob.total_visits) / 100.0);
			if (ob.ili_count > ob.total_visits) {
				throw ConfigError("synthetic %ILI exceeds 100 for " + state);
			}
			nat_c += ob.ili_count;
			nat_v += ob.total_visits;
			nat_p += ob.providers;
			rows.push_back(std::move(ob));
		}
		if (cfg.include_national) {
			Observation nat;
			nat.location = std::string(kNational);
			nat.week = w;
			nat.ili_count = nat_c;
			nat.total_visits = nat_v;
			nat.providers = nat_p;
			nat.ili_pct = 100.0 * static_cast<double>(nat_c) / static_cast<double>(nat_v);
			rows.push_back(std::move(nat));
		}
	}
	out.table = ObservationTable::build(std::move(rows));
	return out;
}

} // namespace ilicast
